//! Gradient verification against central finite differences (f64), plus
//! the conv / transposed-conv adjoint identity with random vectors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pitchkit::nn::{LossKind, NodeId, RunningStats, Tape};

const FD_H: f64 = 1e-5;

struct LeafSpec {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn rand_leaf(rng: &mut ChaCha8Rng, shape: &[usize]) -> LeafSpec {
    let n: usize = shape.iter().product();
    LeafSpec {
        shape: shape.to_vec(),
        data: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    }
}

/// Runs `f` once with autodiff and compares every leaf gradient against
/// central differences of the scalar output.
fn check_grads<F>(leaves: &[LeafSpec], f: F)
where
    F: Fn(&mut Tape<f64>, &[NodeId]) -> NodeId,
{
    let build = |data: &[Vec<f64>]| -> (Tape<f64>, Vec<NodeId>, NodeId) {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = leaves
            .iter()
            .zip(data)
            .map(|(l, d)| tape.leaf(l.shape.clone(), d.clone(), true))
            .collect();
        let loss = f(&mut tape, &ids);
        (tape, ids, loss)
    };

    let base: Vec<Vec<f64>> = leaves.iter().map(|l| l.data.clone()).collect();
    let (mut tape, ids, loss) = build(&base);
    tape.backward(loss).unwrap();

    for (li, leaf) in leaves.iter().enumerate() {
        let grad = tape
            .grad(ids[li])
            .unwrap_or_else(|| panic!("leaf {li} has no gradient"))
            .to_vec();
        for ei in 0..leaf.data.len() {
            let mut plus = base.clone();
            plus[li][ei] += FD_H;
            let mut minus = base.clone();
            minus[li][ei] -= FD_H;
            let (tp, _, lp) = build(&plus);
            let (tm, _, lm) = build(&minus);
            let fd = (tp.value_scalar(lp) - tm.value_scalar(lm)) / (2.0 * FD_H);
            let ad = grad[ei];
            let tol = 1e-6 + 1e-4 * fd.abs().max(ad.abs());
            assert!(
                (fd - ad).abs() <= tol,
                "leaf {li} elem {ei}: autodiff {ad} vs finite-diff {fd}"
            );
        }
    }
}

#[test]
fn conv1d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let leaves = vec![
        rand_leaf(&mut rng, &[2, 2, 7]),  // x
        rand_leaf(&mut rng, &[3, 2, 3]),  // w
        rand_leaf(&mut rng, &[3]),        // b
    ];
    check_grads(&leaves, |t, ids| {
        let y = t.conv1d(ids[0], ids[1], ids[2], 1, 1);
        let sq = t.square(y);
        t.mean_all(sq)
    });
}

#[test]
fn conv1d_strided_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let leaves = vec![
        rand_leaf(&mut rng, &[1, 2, 9]),
        rand_leaf(&mut rng, &[2, 2, 3]),
        rand_leaf(&mut rng, &[2]),
    ];
    check_grads(&leaves, |t, ids| {
        let y = t.conv1d(ids[0], ids[1], ids[2], 2, 0);
        let sq = t.square(y);
        t.sum_all(sq)
    });
}

#[test]
fn conv_transpose1d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let leaves = vec![
        rand_leaf(&mut rng, &[2, 3, 5]),  // x
        rand_leaf(&mut rng, &[3, 2, 3]),  // w [C_in, C_out, K]
        rand_leaf(&mut rng, &[2]),
    ];
    check_grads(&leaves, |t, ids| {
        let y = t.conv_transpose1d(ids[0], ids[1], ids[2], 2, 1, 1);
        let sq = t.square(y);
        t.mean_all(sq)
    });
}

#[test]
fn dense_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let leaves = vec![
        rand_leaf(&mut rng, &[3, 4]),
        rand_leaf(&mut rng, &[4, 2]),
        rand_leaf(&mut rng, &[2]),
    ];
    check_grads(&leaves, |t, ids| {
        let y = t.dense(ids[0], ids[1], ids[2]);
        let sq = t.square(y);
        t.sum_all(sq)
    });
}

#[test]
fn batchnorm_train_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let leaves = vec![
        rand_leaf(&mut rng, &[3, 2, 4]),
        rand_leaf(&mut rng, &[2]),
        rand_leaf(&mut rng, &[2]),
    ];
    check_grads(&leaves, |t, ids| {
        let mut rs = RunningStats::new(2);
        let y = t.batchnorm1d(ids[0], ids[1], ids[2], &mut rs, true, 0.99, 1e-5);
        let sq = t.square(y);
        t.mean_all(sq)
    });
}

#[test]
fn batchnorm_infer_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let leaves = vec![
        rand_leaf(&mut rng, &[2, 2, 3]),
        rand_leaf(&mut rng, &[2]),
        rand_leaf(&mut rng, &[2]),
    ];
    check_grads(&leaves, |t, ids| {
        let mut rs = RunningStats {
            mean: vec![0.1, -0.2],
            var: vec![0.9, 1.3],
        };
        let y = t.batchnorm1d(ids[0], ids[1], ids[2], &mut rs, false, 0.99, 1e-5);
        let sq = t.square(y);
        t.sum_all(sq)
    });
}

#[test]
fn activation_gradients() {
    // keep relu inputs away from the kink at zero
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut x = rand_leaf(&mut rng, &[2, 2, 5]);
    for v in x.data.iter_mut() {
        if v.abs() < 0.05 {
            *v += 0.1;
        }
    }
    check_grads(&[x], |t, ids| {
        let r = t.relu(ids[0]);
        let s = t.sigmoid(r);
        let sq = t.square(s);
        t.mean_all(sq)
    });
}

#[test]
fn maxpool_gradients() {
    // distinct values so the argmax is stable under the FD perturbation
    let x = LeafSpec {
        shape: vec![1, 2, 7],
        data: vec![
            0.3, -0.9, 1.2, 0.1, -0.4, 0.8, 0.05, -1.1, 0.6, -0.2, 0.9, 0.4, -0.7, 1.5,
        ],
    };
    check_grads(&[x], |t, ids| {
        let y = t.maxpool1d(ids[0], 3, 2, true);
        let sq = t.square(y);
        t.sum_all(sq)
    });
}

#[test]
fn penalty_gradients_all_kinds() {
    // keep residuals away from 0 and from the huber knee at tau
    let x = LeafSpec {
        shape: vec![6],
        data: vec![0.1, -0.15, 0.4, -0.6, 0.2, -0.05],
    };
    for kind in [LossKind::Huber, LossKind::L1, LossKind::L2] {
        check_grads(&[LeafSpec {
            shape: x.shape.clone(),
            data: x.data.clone(),
        }], |t, ids| {
            let p = t.penalty(ids[0], kind, 0.25);
            t.mean_all(p)
        });
    }
}

#[test]
fn elementwise_and_slice_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let leaves = vec![rand_leaf(&mut rng, &[4, 3]), rand_leaf(&mut rng, &[2, 3])];
    check_grads(&leaves, |t, ids| {
        let top = t.slice_rows(ids[0], 0, 2);
        let bot = t.slice_rows(ids[0], 2, 2);
        let d = t.sub(top, bot);
        let m = t.mul(d, ids[1]);
        let s = t.scale(m, 3.5);
        let a = t.abs(s);
        t.sum_all(a)
    });
}

#[test]
fn composed_encoder_block_gradients() {
    // conv -> bn -> relu -> pool -> flatten -> dense, the encoder motif
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let leaves = vec![
        rand_leaf(&mut rng, &[2, 1, 12]), // x
        rand_leaf(&mut rng, &[2, 1, 3]),  // conv w
        rand_leaf(&mut rng, &[2]),        // conv b
        rand_leaf(&mut rng, &[2]),        // gamma
        rand_leaf(&mut rng, &[2]),        // beta
        rand_leaf(&mut rng, &[12, 1]),    // dense w
        rand_leaf(&mut rng, &[1]),        // dense b
    ];
    check_grads(&leaves, |t, ids| {
        let c = t.conv1d(ids[0], ids[1], ids[2], 1, 1);
        let mut rs = RunningStats::new(2);
        let n = t.batchnorm1d(c, ids[3], ids[4], &mut rs, true, 0.99, 1e-5);
        let r = t.relu(n);
        let p = t.maxpool1d(r, 3, 2, true);
        let f = t.reshape(p, vec![2, 12]);
        let d = t.dense(f, ids[5], ids[6]);
        let sq = t.square(d);
        t.mean_all(sq)
    });
}

#[test]
fn pad_and_concat_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let leaves = vec![rand_leaf(&mut rng, &[2, 3]), rand_leaf(&mut rng, &[3, 3])];
    check_grads(&leaves, |t, ids| {
        let cat = t.concat_rows(ids[0], ids[1]);
        let p = t.pad_rows(cat, 1, 2);
        let sq = t.square(p);
        t.sum_all(sq)
    });
}

#[test]
fn stop_gradient_matches_detached_finite_diff() {
    // loss = sum((w - detach(w))^2 * w): gradient should treat the
    // detached copy as a constant
    let w0 = vec![0.5, -0.3, 0.8];
    let mut tape: Tape<f64> = Tape::new();
    let w = tape.leaf(vec![3], w0.clone(), true);
    let wd = tape.stop_gradient(w);
    let half = tape.scale(wd, 0.5);
    let d = tape.sub(w, half);
    let sq = tape.square(d);
    let l = tape.sum_all(sq);
    tape.backward(l).unwrap();
    // analytically: d = w/2 treating w/2 const -> dl/dw_i = 2*(w_i - w_i/2) = w_i
    for (g, &wv) in tape.grad(w).unwrap().iter().zip(&w0) {
        assert!((g - wv).abs() < 1e-12, "{g} vs {wv}");
    }
}

#[test]
fn conv_transpose_is_adjoint_of_conv() {
    // <C x, y> == <x, C^T y> for the same weights, random x and y
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for &(stride, padding, k, w_in) in &[(1usize, 1usize, 3usize, 8usize), (2, 1, 3, 9), (2, 0, 4, 10)] {
        let (c_in, c_out) = (2, 3);
        let w_conv = (w_in + 2 * padding - k) / stride + 1;
        // output_padding that makes the transpose land back on w_in
        let op = w_in - ((w_conv - 1) * stride + k - 2 * padding);

        let x: Vec<f64> = (0..c_in * w_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..c_out * w_conv).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // conv weights are [C_out, C_in, K]; the transpose reads the same
        // flat tensor as [C_in_t = C_out, C_out_t = C_in, K]
        let w: Vec<f64> = (0..c_out * c_in * k).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let mut t: Tape<f64> = Tape::new();
        let xid = t.constant(vec![1, c_in, w_in], x.clone());
        let wid = t.constant(vec![c_out, c_in, k], w.clone());
        let b0 = t.constant(vec![c_out], vec![0.0; c_out]);
        let cx = t.conv1d(xid, wid, b0, stride, padding);
        let lhs: f64 = t.data(cx).iter().zip(&y).map(|(a, b)| a * b).sum();

        let yid = t.constant(vec![1, c_out, w_conv], y);
        let wtid = t.constant(vec![c_out, c_in, k], w);
        let b1 = t.constant(vec![c_in], vec![0.0; c_in]);
        let cty = t.conv_transpose1d(yid, wtid, b1, stride, padding, op);
        assert_eq!(t.shape(cty), &[1, c_in, w_in]);
        let rhs: f64 = t.data(cty).iter().zip(&x).map(|(a, b)| a * b).sum();

        assert!(
            (lhs - rhs).abs() < 1e-9,
            "adjoint mismatch at s={stride} p={padding}: {lhs} vs {rhs}"
        );
    }
}
