//! Training losses: the pitch-shift equivariance loss (clean and four-way
//! noisy variants), reconstruction, and the stop-gradient confidence loss.

use crate::nn::{LossKind, NodeId, Tape};
use crate::real::Real;

/// e = |(y1 - y2) - sigma * (k1 - k2)|, the relative pitch error.
pub fn pitch_error(y1: f64, y2: f64, k1: i64, k2: i64, sigma: f64) -> f64 {
    ((y1 - y2) - sigma * (k1 - k2) as f64).abs()
}

fn offset_target<R: Real>(tape: &mut Tape<R>, k1: &[usize], k2: &[usize], sigma: f64) -> NodeId {
    let t = k1.len();
    assert_eq!(k2.len(), t);
    let data = k1
        .iter()
        .zip(k2)
        .map(|(&a, &b)| R::from_f64(sigma * (a as f64 - b as f64)))
        .collect();
    tape.constant(vec![t, 1], data)
}

/// Mean penalty of the signed residual `(y1 - y2) - sigma * (k1 - k2)`.
/// All three penalties are even, so this equals the penalty of the error.
pub fn loss_pitch<R: Real>(
    tape: &mut Tape<R>,
    y1: NodeId,
    y2: NodeId,
    k1: &[usize],
    k2: &[usize],
    sigma: f64,
    kind: LossKind,
    tau: f64,
) -> NodeId {
    let target = offset_target(tape, k1, k2, sigma);
    let d = tape.sub(y1, y2);
    let r = tape.sub(d, target);
    let p = tape.penalty(r, kind, R::from_f64(tau));
    tape.mean_all(p)
}

/// Noisy-mode pitch loss: the average of the four cross errors e^{pq},
/// p, q in {clean, noisy}.
#[allow(clippy::too_many_arguments)]
pub fn loss_pitch_noisy<R: Real>(
    tape: &mut Tape<R>,
    y1c: NodeId,
    y2c: NodeId,
    y1n: NodeId,
    y2n: NodeId,
    k1: &[usize],
    k2: &[usize],
    sigma: f64,
    kind: LossKind,
    tau: f64,
) -> NodeId {
    let mut acc = None;
    for (a, b) in [(y1c, y2c), (y1c, y2n), (y1n, y2c), (y1n, y2n)] {
        let l = loss_pitch(tape, a, b, k1, k2, sigma, kind, tau);
        acc = Some(match acc {
            None => l,
            Some(prev) => tape.add(prev, l),
        });
    }
    tape.scale(acc.unwrap(), R::from_f64(0.25))
}

/// Mean over frames of the summed squared reconstruction error of both
/// slices: (1/T) sum_t (||x1 - x1hat||^2 + ||x2 - x2hat||^2).
pub fn loss_recon<R: Real>(
    tape: &mut Tape<R>,
    xhat1: NodeId,
    x1: NodeId,
    xhat2: NodeId,
    x2: NodeId,
) -> NodeId {
    let t_frames = tape.shape(x1)[0];
    let d1 = tape.sub(xhat1, x1);
    let s1 = tape.square(d1);
    let a1 = tape.sum_all(s1);
    let d2 = tape.sub(xhat2, x2);
    let s2 = tape.square(d2);
    let a2 = tape.sum_all(s2);
    let total = tape.add(a1, a2);
    tape.scale(total, R::from_f64(1.0 / t_frames as f64))
}

/// clamp to [0,1] as relu(x) - relu(x - 1); used on detached values only.
fn clamp01<R: Real>(tape: &mut Tape<R>, x: NodeId) -> NodeId {
    let shape = tape.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let ones = tape.constant(shape, vec![R::ONE; n]);
    let lo = tape.relu(x);
    let xm1 = tape.sub(x, ones);
    let hi = tape.relu(xm1);
    tape.sub(lo, hi)
}

/// Confidence regression: (1/T) sum_t |(1-c1) - e/sigma|^2 + |(1-c2) - e/sigma|^2,
/// with e computed from stop-gradient copies of y (so only the confidence
/// head trains) and e/sigma clamped to [0,1].
pub fn loss_conf<R: Real>(
    tape: &mut Tape<R>,
    y1: NodeId,
    y2: NodeId,
    c1: NodeId,
    c2: NodeId,
    k1: &[usize],
    k2: &[usize],
    sigma: f64,
) -> NodeId {
    let t_frames = tape.shape(y1)[0];
    let y1d = tape.stop_gradient(y1);
    let y2d = tape.stop_gradient(y2);
    let target = offset_target(tape, k1, k2, sigma);
    let d = tape.sub(y1d, y2d);
    let r = tape.sub(d, target);
    let e = tape.abs(r);
    let e_norm = tape.scale(e, R::from_f64(1.0 / sigma));
    let e_clamped = clamp01(tape, e_norm);

    let ones = tape.constant(vec![t_frames, 1], vec![R::ONE; t_frames]);
    let mut acc = None;
    for c in [c1, c2] {
        let omc = tape.sub(ones, c);
        let res = tape.sub(omc, e_clamped);
        let sq = tape.square(res);
        let s = tape.sum_all(sq);
        acc = Some(match acc {
            None => s,
            Some(prev) => tape.add(prev, s),
        });
    }
    tape.scale(acc.unwrap(), R::from_f64(1.0 / t_frames as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pitch_error_examples() {
        let sigma = 1.0 / 72.0;
        // exact equivariance
        assert_eq!(pitch_error(sigma * 3.0, 0.0, 3, 0, sigma), 0.0);
        // y1 = y2, k1 = 4, k2 = 0 -> 4/72 = 1/18
        assert!((pitch_error(0.5, 0.5, 4, 0, sigma) - 1.0 / 18.0).abs() < 1e-15);
        // symmetric under swap
        assert_eq!(
            pitch_error(0.3, 0.7, 2, 5, sigma),
            pitch_error(0.7, 0.3, 5, 2, sigma)
        );
    }

    #[test]
    fn equivariant_batch_has_zero_pitch_loss() {
        let sigma = 1.0 / 72.0;
        let k1 = vec![0usize, 3, 8];
        let k2 = vec![8usize, 3, 0];
        let mut t: Tape<f64> = Tape::new();
        let y1 = t.constant(vec![3, 1], k1.iter().map(|&k| sigma * k as f64).collect());
        let y2 = t.constant(vec![3, 1], k2.iter().map(|&k| sigma * k as f64).collect());
        let l = loss_pitch(&mut t, y1, y2, &k1, &k2, sigma, LossKind::Huber, 0.25 * sigma);
        assert!(t.value_scalar(l).abs() < 1e-15);
    }

    #[test]
    fn single_pair_huber_at_two_tau() {
        let sigma = 1.0 / 72.0;
        let tau = 0.25 * sigma;
        let mut t: Tape<f64> = Tape::new();
        let y1 = t.constant(vec![1, 1], vec![2.0 * tau]);
        let y2 = t.constant(vec![1, 1], vec![0.0]);
        let l = loss_pitch(&mut t, y1, y2, &[0], &[0], sigma, LossKind::Huber, tau);
        assert!((t.value_scalar(l) - 1.5 * tau * tau).abs() < 1e-15);
    }

    #[test]
    fn noisy_loss_reduces_to_clean_when_inputs_match() {
        let sigma = 1.0 / 72.0;
        let tau = 0.25 * sigma;
        let k1 = vec![1usize, 7];
        let k2 = vec![4usize, 2];
        let y1v = vec![0.31, 0.62];
        let y2v = vec![0.55, 0.41];
        let mut t: Tape<f64> = Tape::new();
        let y1 = t.constant(vec![2, 1], y1v.clone());
        let y2 = t.constant(vec![2, 1], y2v.clone());
        let clean = loss_pitch(&mut t, y1, y2, &k1, &k2, sigma, LossKind::Huber, tau);
        let y1n = t.constant(vec![2, 1], y1v);
        let y2n = t.constant(vec![2, 1], y2v);
        let noisy = loss_pitch_noisy(&mut t, y1, y2, y1n, y2n, &k1, &k2, sigma, LossKind::Huber, tau);
        assert!((t.value_scalar(clean) - t.value_scalar(noisy)).abs() < 1e-15);
    }

    #[test]
    fn recon_loss_examples() {
        let mut t: Tape<f64> = Tape::new();
        let x = t.constant(vec![1, 4], vec![1.0, 0.0, 0.0, 0.0]);
        let xhat = t.constant(vec![1, 4], vec![0.0; 4]);
        // both slices identical: contribution 2 * 1 for the single frame
        let l = loss_recon(&mut t, xhat, x, xhat, x);
        assert!((t.value_scalar(l) - 2.0).abs() < 1e-15);

        // perfect reconstruction
        let l0 = loss_recon(&mut t, x, x, x, x);
        assert_eq!(t.value_scalar(l0), 0.0);

        // doubling residuals quadruples the loss
        let xhat2 = t.constant(vec![1, 4], vec![-1.0, 0.0, 0.0, 0.0]);
        let l4 = loss_recon(&mut t, xhat2, x, xhat2, x);
        assert!((t.value_scalar(l4) - 4.0 * t.value_scalar(l)).abs() < 1e-12);
    }

    #[test]
    fn conf_loss_zero_cases() {
        let sigma = 1.0 / 72.0;
        // e = 0, c = 1 -> 0
        let mut t: Tape<f64> = Tape::new();
        let y = t.constant(vec![1, 1], vec![0.4]);
        let c1 = t.constant(vec![1, 1], vec![1.0]);
        let l = loss_conf(&mut t, y, y, c1, c1, &[3], &[3], sigma);
        assert!(t.value_scalar(l).abs() < 1e-15);

        // e = sigma, c = 0 -> 0
        let y1 = t.constant(vec![1, 1], vec![0.4 + sigma]);
        let c0 = t.constant(vec![1, 1], vec![0.0]);
        let l = loss_conf(&mut t, y1, y, c0, c0, &[0], &[0], sigma);
        assert!(t.value_scalar(l).abs() < 1e-15);
    }

    #[test]
    fn conf_target_clamped_above_sigma() {
        let sigma = 1.0 / 72.0;
        // e = 5*sigma, c = 0: target clamps to 1, residual 0
        let mut t: Tape<f64> = Tape::new();
        let y1 = t.constant(vec![1, 1], vec![5.0 * sigma]);
        let y2 = t.constant(vec![1, 1], vec![0.0]);
        let c0 = t.constant(vec![1, 1], vec![0.0]);
        let l = loss_conf(&mut t, y1, y2, c0, c0, &[0], &[0], sigma);
        assert!(t.value_scalar(l).abs() < 1e-15);
    }
}
