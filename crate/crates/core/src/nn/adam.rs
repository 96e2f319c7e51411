use crate::real::Real;

#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates plus step count.
#[derive(Debug, Clone)]
pub struct AdamState<R: Real> {
    pub m: Vec<R>,
    pub v: Vec<R>,
    pub step: u64,
}

impl<R: Real> AdamState<R> {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![R::ZERO; n],
            v: vec![R::ZERO; n],
            step: 0,
        }
    }
}

/// One Adam update with bias correction.
pub fn adam_step<R: Real>(data: &mut [R], grad: &[R], state: &mut AdamState<R>, p: &AdamParams) {
    assert_eq!(data.len(), grad.len());
    assert_eq!(data.len(), state.m.len());
    state.step += 1;
    let t = state.step as i32;
    let b1 = R::from_f64(p.beta1);
    let b2 = R::from_f64(p.beta2);
    let one = R::ONE;
    let bc1 = one - b1.powi(t);
    let bc2 = one - b2.powi(t);
    let lr = R::from_f64(p.lr);
    let eps = R::from_f64(p.eps);
    for i in 0..data.len() {
        let g = grad[i];
        state.m[i] = b1 * state.m[i] + (one - b1) * g;
        state.v[i] = b2 * state.v[i] + (one - b2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_closed_form() {
        // at t=1, bias correction cancels: delta = -lr * g / (|g| + eps')
        let p = AdamParams {
            lr: 0.1,
            ..Default::default()
        };
        let mut w = vec![1.0f64, -2.0, 3.0];
        let g = vec![0.5f64, -0.25, 1.0];
        let mut st = AdamState::zeros(3);
        adam_step(&mut w, &g, &mut st, &p);
        for (i, (&wi, &gi)) in [1.0, -2.0, 3.0].iter().zip(&g).enumerate() {
            let m_hat = gi; // (1-b1)g / (1-b1)
            let v_hat = gi * gi;
            let expect = wi - p.lr * m_hat / (v_hat.sqrt() + p.eps);
            assert!((w[i] - expect).abs() < 1e-12);
        }
        assert_eq!(st.step, 1);
    }

    #[test]
    fn descends_a_quadratic() {
        let p = AdamParams {
            lr: 0.05,
            ..Default::default()
        };
        let mut w = vec![3.0f64];
        let mut st = AdamState::zeros(1);
        for _ in 0..2000 {
            let g = vec![2.0 * w[0]];
            adam_step(&mut w, &g, &mut st, &p);
        }
        assert!(w[0].abs() < 1e-2, "w = {}", w[0]);
    }
}
