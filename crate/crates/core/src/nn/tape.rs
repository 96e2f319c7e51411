//! Reverse-mode autodiff over a flat tape of ops.
//!
//! A [`Tape`] is built fresh for every forward pass: leaves are created
//! from parameter values, ops append nodes, and [`Tape::backward`] walks
//! the tape in reverse filling per-node gradients. All parallel loops are
//! over independent output chunks with fixed reduction order, so results
//! do not depend on the thread schedule.

use crate::parallel::for_each_chunk_mut;
use crate::real::Real;

use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Penalty applied to the pitch residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Huber,
    L1,
    L2,
}

/// Batch-norm running statistics (inference mode uses these).
#[derive(Debug, Clone)]
pub struct RunningStats<R: Real> {
    pub mean: Vec<R>,
    pub var: Vec<R>,
}

impl<R: Real> RunningStats<R> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![R::ZERO; channels],
            var: vec![R::ONE; channels],
        }
    }
}

enum Op<R: Real> {
    Leaf,
    Constant,
    Conv1d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        padding: usize,
    },
    ConvT1d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        padding: usize,
    },
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        // saved normalized input and per-channel 1/std (train mode), or
        // the affine scale used in inference mode
        xhat: Vec<R>,
        inv_std: Vec<R>,
        train: bool,
    },
    Dense {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Relu {
        x: NodeId,
    },
    Sigmoid {
        x: NodeId,
    },
    MaxPool {
        x: NodeId,
        argmax: Vec<usize>,
    },
    Reshape {
        x: NodeId,
    },
    SliceRows {
        x: NodeId,
        start: usize,
    },
    PadRows {
        x: NodeId,
        before: usize,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Sub {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        x: NodeId,
        c: R,
    },
    Abs {
        x: NodeId,
    },
    Square {
        x: NodeId,
    },
    Penalty {
        x: NodeId,
        kind: LossKind,
        tau: R,
    },
    SumAll {
        x: NodeId,
    },
    MeanAll {
        x: NodeId,
    },
    StopGradient,
}

struct Node<R: Real> {
    shape: Vec<usize>,
    data: Vec<R>,
    grad: Option<Vec<R>>,
    needs_grad: bool,
    op: Op<R>,
}

pub struct Tape<R: Real> {
    nodes: Vec<Node<R>>,
}

impl<R: Real> Default for Tape<R> {
    fn default() -> Self {
        Self::new()
    }
}

/// Huber value h(x): x^2/2 inside |x| <= tau, linear outside.
pub fn huber_value<R: Real>(x: R, tau: R) -> R {
    let a = x.abs();
    if a <= tau {
        x * x / R::from_f64(2.0)
    } else {
        tau * tau / R::from_f64(2.0) + tau * (a - tau)
    }
}

fn penalty_value<R: Real>(x: R, kind: LossKind, tau: R) -> R {
    match kind {
        LossKind::Huber => huber_value(x, tau),
        LossKind::L1 => x.abs(),
        LossKind::L2 => x * x / R::from_f64(2.0),
    }
}

fn penalty_deriv<R: Real>(x: R, kind: LossKind, tau: R) -> R {
    let sign = if x > R::ZERO {
        R::ONE
    } else if x < R::ZERO {
        -R::ONE
    } else {
        R::ZERO
    };
    match kind {
        LossKind::Huber => {
            if x.abs() <= tau {
                x
            } else {
                tau * sign
            }
        }
        LossKind::L1 => sign,
        LossKind::L2 => x,
    }
}

impl<R: Real> Tape<R> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<R>, needs_grad: bool, op: Op<R>) -> NodeId {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "non-finite value produced by an op"
        );
        self.nodes.push(Node {
            shape,
            data,
            grad: None,
            needs_grad,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn leaf(&mut self, shape: Vec<usize>, data: Vec<R>, requires_grad: bool) -> NodeId {
        self.push(shape, data, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<R>) -> NodeId {
        self.push(shape, data, false, Op::Constant)
    }

    pub fn scalar(&mut self, v: R) -> NodeId {
        self.constant(vec![1], vec![v])
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn data(&self, id: NodeId) -> &[R] {
        &self.nodes[id.0].data
    }

    pub fn grad(&self, id: NodeId) -> Option<&[R]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn value_scalar(&self, id: NodeId) -> R {
        assert_eq!(self.nodes[id.0].data.len(), 1);
        self.nodes[id.0].data[0]
    }

    fn dims3(&self, id: NodeId, what: &str) -> (usize, usize, usize) {
        let s = self.shape(id);
        assert!(s.len() == 3, "{what}: expected 3-d [B,C,W], got {s:?}");
        (s[0], s[1], s[2])
    }

    // ---- structural ----

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> NodeId {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.nodes[x.0].data.len(),
            "reshape element count mismatch"
        );
        let data = self.nodes[x.0].data.clone();
        let needs = self.needs(x);
        self.push(shape, data, needs, Op::Reshape { x })
    }

    /// Rows `start..start+len` along the first dimension.
    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let shape = self.shape(x).to_vec();
        let row: usize = shape[1..].iter().product();
        assert!(start + len <= shape[0], "row slice out of range");
        let data = self.nodes[x.0].data[start * row..(start + len) * row].to_vec();
        let mut new_shape = shape;
        new_shape[0] = len;
        let needs = self.needs(x);
        self.push(new_shape, data, needs, Op::SliceRows { x, start })
    }

    /// Zero-pads along the first dimension: `before` rows above, `after`
    /// below. The adjoint of [`Tape::slice_rows`]; `concat_rows` builds
    /// on it.
    pub fn pad_rows(&mut self, x: NodeId, before: usize, after: usize) -> NodeId {
        let shape = self.shape(x).to_vec();
        let row: usize = shape[1..].iter().product();
        let total = before + shape[0] + after;
        let mut data = vec![R::ZERO; total * row];
        data[before * row..(before + shape[0]) * row].copy_from_slice(&self.nodes[x.0].data);
        let mut new_shape = shape;
        new_shape[0] = total;
        let needs = self.needs(x);
        self.push(new_shape, data, needs, Op::PadRows { x, before })
    }

    /// Stacks `[A, ..]` over `[B, ..]` along the first dimension, keeping
    /// gradient flow to both inputs.
    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a)[1..], self.shape(b)[1..], "concat row shapes");
        let (ra, rb) = (self.shape(a)[0], self.shape(b)[0]);
        let top = self.pad_rows(a, 0, rb);
        let bot = self.pad_rows(b, ra, 0);
        self.add(top, bot)
    }

    pub fn stop_gradient(&mut self, x: NodeId) -> NodeId {
        let shape = self.shape(x).to_vec();
        let data = self.nodes[x.0].data.clone();
        self.push(shape, data, false, Op::StopGradient)
    }

    // ---- elementwise ----

    fn binary(&mut self, a: NodeId, b: NodeId, f: impl Fn(R, R) -> R, op: Op<R>) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "elementwise shape mismatch");
        let shape = self.shape(a).to_vec();
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let needs = self.needs(a) || self.needs(b);
        self.push(shape, data, needs, op)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, |x, y| x * y, Op::Mul { a, b })
    }

    fn unary(&mut self, x: NodeId, f: impl Fn(R) -> R, op: Op<R>) -> NodeId {
        let shape = self.shape(x).to_vec();
        let data = self.nodes[x.0].data.iter().map(|&v| f(v)).collect();
        let needs = self.needs(x);
        self.push(shape, data, needs, op)
    }

    pub fn scale(&mut self, x: NodeId, c: R) -> NodeId {
        self.unary(x, |v| v * c, Op::Scale { x, c })
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |v| v.abs(), Op::Abs { x })
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |v| v * v, Op::Square { x })
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |v| v.max(R::ZERO), Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(
            x,
            |v| R::ONE / (R::ONE + (-v).exp()),
            Op::Sigmoid { x },
        )
    }

    /// Huber/L1/L2 penalty of the (signed) residual; all three are even,
    /// so this equals the penalty of the absolute error.
    pub fn penalty(&mut self, x: NodeId, kind: LossKind, tau: R) -> NodeId {
        self.unary(x, |v| penalty_value(v, kind, tau), Op::Penalty { x, kind, tau })
    }

    // ---- reductions (f64 accumulation) ----

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.nodes[x.0].data.iter().map(|v| v.to_f64()).sum();
        let needs = self.needs(x);
        self.push(vec![1], vec![R::from_f64(s)], needs, Op::SumAll { x })
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let n = self.nodes[x.0].data.len();
        let s: f64 = self.nodes[x.0].data.iter().map(|v| v.to_f64()).sum();
        let needs = self.needs(x);
        self.push(
            vec![1],
            vec![R::from_f64(s / n as f64)],
            needs,
            Op::MeanAll { x },
        )
    }

    // ---- layers ----

    /// Cross-correlation over `[B, C_in, W]` with weights `[C_out, C_in, K]`.
    pub fn conv1d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        padding: usize,
    ) -> NodeId {
        let (bsz, c_in, w_in) = self.dims3(x, "conv1d input");
        let ws = self.shape(w).to_vec();
        assert!(
            ws.len() == 3 && ws[1] == c_in,
            "conv1d weight shape {ws:?} does not match input channels {c_in}"
        );
        let (c_out, k) = (ws[0], ws[2]);
        assert_eq!(self.shape(b), &[c_out], "conv1d bias shape");
        assert!(w_in + 2 * padding >= k, "conv1d kernel larger than input");
        let w_out = (w_in + 2 * padding - k) / stride + 1;

        let xd = &self.nodes[x.0].data;
        let wd = &self.nodes[w.0].data;
        let bd = &self.nodes[b.0].data;
        // im2col + row-major matmul: the contraction runs over B*w_out
        // contiguous elements, which keeps deep layers (tiny width, many
        // channels) on long vectorizable loops
        let n = bsz * w_out;
        let kd = c_in * k;
        let col = im2col(xd, bsz, c_in, w_in, k, stride, padding, w_out);
        let mut of = vec![R::ZERO; c_out * n];
        matmul_acc(&mut of, wd, &col, c_out, kd, n);
        let mut out = vec![R::ZERO; bsz * c_out * w_out];
        for bi in 0..bsz {
            for co in 0..c_out {
                let dst = &mut out[(bi * c_out + co) * w_out..(bi * c_out + co + 1) * w_out];
                let src = &of[co * n + bi * w_out..co * n + (bi + 1) * w_out];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = s + bd[co];
                }
            }
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(
            vec![bsz, c_out, w_out],
            out,
            needs,
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                padding,
            },
        )
    }

    /// Adjoint of [`Tape::conv1d`]'s linear map. Weights are laid out
    /// `[C_in, C_out, K]`; output width is
    /// `(W-1)*stride - 2*padding + K + output_padding`.
    pub fn conv_transpose1d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> NodeId {
        let (bsz, c_in, w_in) = self.dims3(x, "conv_transpose1d input");
        let ws = self.shape(w).to_vec();
        assert!(
            ws.len() == 3 && ws[0] == c_in,
            "conv_transpose1d weight shape {ws:?} vs input channels {c_in}"
        );
        let (c_out, k) = (ws[1], ws[2]);
        assert_eq!(self.shape(b), &[c_out], "conv_transpose1d bias shape");
        let w_out = (w_in - 1) * stride + k + output_padding;
        assert!(w_out >= 2 * padding, "conv_transpose1d negative output width");
        let w_out = w_out - 2 * padding;

        let xd = &self.nodes[x.0].data;
        let wd = &self.nodes[w.0].data;
        let bd = &self.nodes[b.0].data;
        // scatter formulation of the conv im2col trick: the product runs
        // over [C_out*K, B*W_in] columns, then col2im scatters taps into
        // the upsampled output
        let n = bsz * w_in;
        let xf = bcw_to_cn(xd, bsz, c_in, w_in);
        let mut at = vec![R::ZERO; c_out * k * c_in];
        for ci in 0..c_in {
            for co in 0..c_out {
                for j in 0..k {
                    at[(co * k + j) * c_in + ci] = wd[(ci * c_out + co) * k + j];
                }
            }
        }
        let mut ocol = vec![R::ZERO; c_out * k * n];
        matmul_acc(&mut ocol, &at, &xf, c_out * k, c_in, n);
        let mut out = vec![R::ZERO; bsz * c_out * w_out];
        for bi in 0..bsz {
            for co in 0..c_out {
                out[(bi * c_out + co) * w_out..(bi * c_out + co + 1) * w_out].fill(bd[co]);
            }
        }
        col2im_add(&mut out, &ocol, bsz, c_out, w_out, k, stride, padding, w_in);
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(
            vec![bsz, c_out, w_out],
            out,
            needs,
            Op::ConvT1d {
                x,
                w,
                b,
                stride,
                padding,
            },
        )
    }

    /// Per-channel normalization over batch and width.
    ///
    /// Train mode uses batch statistics and updates `running` with the
    /// given momentum; inference normalizes with the frozen running stats.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm1d(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running: &mut RunningStats<R>,
        train: bool,
        momentum: f64,
        eps: f64,
    ) -> NodeId {
        let (bsz, c, w) = self.dims3(x, "batchnorm1d input");
        assert_eq!(self.shape(gamma), &[c]);
        assert_eq!(self.shape(beta), &[c]);
        assert!(bsz * w > 0, "batchnorm on empty batch");
        let n = (bsz * w) as f64;
        let xd = &self.nodes[x.0].data;
        let gd = self.nodes[gamma.0].data.clone();
        let be = self.nodes[beta.0].data.clone();

        let mut xhat = vec![R::ZERO; xd.len()];
        let mut inv_std = vec![R::ZERO; c];
        let mut out = vec![R::ZERO; xd.len()];
        for ch in 0..c {
            let (mean, var) = if train {
                let mut sum = 0.0f64;
                let mut sq = 0.0f64;
                for bi in 0..bsz {
                    for &v in &xd[(bi * c + ch) * w..(bi * c + ch + 1) * w] {
                        let v = v.to_f64();
                        sum += v;
                        sq += v * v;
                    }
                }
                let mean = sum / n;
                let var = (sq / n - mean * mean).max(0.0);
                running.mean[ch] = R::from_f64(
                    momentum * running.mean[ch].to_f64() + (1.0 - momentum) * mean,
                );
                running.var[ch] =
                    R::from_f64(momentum * running.var[ch].to_f64() + (1.0 - momentum) * var);
                (mean, var)
            } else {
                (running.mean[ch].to_f64(), running.var[ch].to_f64())
            };
            let istd = R::from_f64(1.0 / (var + eps).sqrt());
            inv_std[ch] = istd;
            let mean = R::from_f64(mean);
            for bi in 0..bsz {
                let o = (bi * c + ch) * w;
                for i in 0..w {
                    let xh = (xd[o + i] - mean) * istd;
                    xhat[o + i] = xh;
                    out[o + i] = gd[ch] * xh + be[ch];
                }
            }
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(
            vec![bsz, c, w],
            out,
            needs,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
        )
    }

    /// Max pool over width. `ceil_mode` pads virtually on the right so the
    /// last partial window is kept. Gradient routes to the first argmax.
    pub fn maxpool1d(&mut self, x: NodeId, size: usize, stride: usize, ceil_mode: bool) -> NodeId {
        let (bsz, c, w) = self.dims3(x, "maxpool1d input");
        let w_out = if ceil_mode {
            assert!(w > 0);
            (w.saturating_sub(size) + stride - 1) / stride + 1
        } else {
            assert!(w >= size, "maxpool window larger than input");
            (w - size) / stride + 1
        };
        let xd = &self.nodes[x.0].data;
        let mut out = vec![R::ZERO; bsz * c * w_out];
        let mut argmax = vec![0usize; bsz * c * w_out];
        for bi in 0..bsz {
            for ch in 0..c {
                let xr = &xd[(bi * c + ch) * w..(bi * c + ch + 1) * w];
                let o = (bi * c + ch) * w_out;
                for wo in 0..w_out {
                    let start = wo * stride;
                    let end = (start + size).min(w);
                    let mut best = start;
                    for i in start + 1..end {
                        if xr[i] > xr[best] {
                            best = i;
                        }
                    }
                    out[o + wo] = xr[best];
                    argmax[o + wo] = best;
                }
            }
        }
        let needs = self.needs(x);
        self.push(vec![bsz, c, w_out], out, needs, Op::MaxPool { x, argmax })
    }

    /// Fully connected: `[B, N] x [N, M] + [M]`.
    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert!(xs.len() == 2 && ws.len() == 2 && xs[1] == ws[0], "dense shape mismatch: {xs:?} x {ws:?}");
        let (bsz, n, m) = (xs[0], ws[0], ws[1]);
        assert_eq!(self.shape(b), &[m], "dense bias shape");
        let xd = &self.nodes[x.0].data;
        let wd = &self.nodes[w.0].data;
        let bd = &self.nodes[b.0].data;
        let mut out = vec![R::ZERO; bsz * m];
        for_each_chunk_mut(&mut out, m, |bi, row| {
            row.copy_from_slice(bd);
            for ni in 0..n {
                let xv = xd[bi * n + ni];
                let wr = &wd[ni * m..(ni + 1) * m];
                for (o, &wv) in row.iter_mut().zip(wr) {
                    *o += xv * wv;
                }
            }
        });
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(vec![bsz, m], out, needs, Op::Dense { x, w, b })
    }

    // ---- backward ----

    /// Reverse-mode sweep from a scalar loss; fills `grad` for every node
    /// with `needs_grad`.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), NnError> {
        let ln = &self.nodes[loss.0];
        if ln.data.len() != 1 {
            return Err(NnError::NonScalarLoss(ln.shape.clone()));
        }
        if !ln.data[0].is_finite() {
            return Err(NnError::NonFinite("loss".into()));
        }

        let mut grads: Vec<Option<Vec<R>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![R::ONE]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.step_backward(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            node.grad = g;
        }
        Ok(())
    }

    fn step_backward(&self, i: usize, g: &[R], grads: &mut Vec<Option<Vec<R>>>) {
        let nodes = &self.nodes;
        let ensure = |grads: &mut Vec<Option<Vec<R>>>, id: NodeId| -> bool {
            if !nodes[id.0].needs_grad {
                return false;
            }
            if grads[id.0].is_none() {
                grads[id.0] = Some(vec![R::ZERO; nodes[id.0].data.len()]);
            }
            true
        };
        match &nodes[i].op {
            Op::Leaf | Op::Constant | Op::StopGradient => {}
            Op::Reshape { x } => {
                if ensure(grads, *x) {
                    let gx = grads[x.0].as_mut().unwrap();
                    for (d, &s) in gx.iter_mut().zip(g) {
                        *d += s;
                    }
                }
            }
            Op::PadRows { x, before } => {
                if ensure(grads, *x) {
                    let row: usize = nodes[x.0].shape[1..].iter().product();
                    let n = nodes[x.0].data.len();
                    let gx = grads[x.0].as_mut().unwrap();
                    for (d, &s) in gx.iter_mut().zip(&g[before * row..before * row + n]) {
                        *d += s;
                    }
                }
            }
            Op::SliceRows { x, start } => {
                if ensure(grads, *x) {
                    let row: usize = nodes[x.0].shape[1..].iter().product();
                    let gx = grads[x.0].as_mut().unwrap();
                    for (d, &s) in gx[start * row..start * row + g.len()].iter_mut().zip(g) {
                        *d += s;
                    }
                }
            }
            Op::Add { a, b } => {
                for id in [*a, *b] {
                    if ensure(grads, id) {
                        let gx = grads[id.0].as_mut().unwrap();
                        for (d, &s) in gx.iter_mut().zip(g) {
                            *d += s;
                        }
                    }
                }
            }
            Op::Sub { a, b } => {
                if ensure(grads, *a) {
                    let ga = grads[a.0].as_mut().unwrap();
                    for (d, &s) in ga.iter_mut().zip(g) {
                        *d += s;
                    }
                }
                if ensure(grads, *b) {
                    let gb = grads[b.0].as_mut().unwrap();
                    for (d, &s) in gb.iter_mut().zip(g) {
                        *d -= s;
                    }
                }
            }
            Op::Mul { a, b } => {
                if ensure(grads, *a) {
                    let bd = &nodes[b.0].data;
                    let ga = grads[a.0].as_mut().unwrap();
                    for ((d, &s), &bv) in ga.iter_mut().zip(g).zip(bd) {
                        *d += s * bv;
                    }
                }
                if ensure(grads, *b) {
                    let ad = &nodes[a.0].data;
                    let gb = grads[b.0].as_mut().unwrap();
                    for ((d, &s), &av) in gb.iter_mut().zip(g).zip(ad) {
                        *d += s * av;
                    }
                }
            }
            Op::Scale { x, c } => {
                if ensure(grads, *x) {
                    let gx = grads[x.0].as_mut().unwrap();
                    for (d, &s) in gx.iter_mut().zip(g) {
                        *d += s * *c;
                    }
                }
            }
            Op::Abs { x } => {
                if ensure(grads, *x) {
                    let xd = &nodes[x.0].data;
                    let gx = grads[x.0].as_mut().unwrap();
                    for ((d, &s), &xv) in gx.iter_mut().zip(g).zip(xd) {
                        if xv > R::ZERO {
                            *d += s;
                        } else if xv < R::ZERO {
                            *d -= s;
                        }
                    }
                }
            }
            Op::Square { x } => {
                if ensure(grads, *x) {
                    let xd = &nodes[x.0].data;
                    let gx = grads[x.0].as_mut().unwrap();
                    for ((d, &s), &xv) in gx.iter_mut().zip(g).zip(xd) {
                        *d += s * R::from_f64(2.0) * xv;
                    }
                }
            }
            Op::Penalty { x, kind, tau } => {
                if ensure(grads, *x) {
                    let xd = &nodes[x.0].data;
                    let gx = grads[x.0].as_mut().unwrap();
                    for ((d, &s), &xv) in gx.iter_mut().zip(g).zip(xd) {
                        *d += s * penalty_deriv(xv, *kind, *tau);
                    }
                }
            }
            Op::Relu { x } => {
                if ensure(grads, *x) {
                    let xd = &nodes[x.0].data;
                    let gx = grads[x.0].as_mut().unwrap();
                    for ((d, &s), &xv) in gx.iter_mut().zip(g).zip(xd) {
                        if xv > R::ZERO {
                            *d += s;
                        }
                    }
                }
            }
            Op::Sigmoid { x } => {
                if ensure(grads, *x) {
                    let yd = &nodes[i].data;
                    let gx = grads[x.0].as_mut().unwrap();
                    for ((d, &s), &yv) in gx.iter_mut().zip(g).zip(yd) {
                        *d += s * yv * (R::ONE - yv);
                    }
                }
            }
            Op::SumAll { x } => {
                if ensure(grads, *x) {
                    let gx = grads[x.0].as_mut().unwrap();
                    for d in gx.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::MeanAll { x } => {
                if ensure(grads, *x) {
                    let n = nodes[x.0].data.len();
                    let s = g[0] / R::from_f64(n as f64);
                    let gx = grads[x.0].as_mut().unwrap();
                    for d in gx.iter_mut() {
                        *d += s;
                    }
                }
            }
            Op::MaxPool { x, argmax } => {
                if ensure(grads, *x) {
                    let w = *nodes[x.0].shape.last().unwrap();
                    let w_out = *nodes[i].shape.last().unwrap();
                    let gx = grads[x.0].as_mut().unwrap();
                    for (o, &s) in g.iter().enumerate() {
                        let chan = o / w_out;
                        gx[chan * w + argmax[o]] += s;
                    }
                }
            }
            Op::Dense { x, w, b } => {
                let xs = &nodes[x.0].shape;
                let (bsz, n) = (xs[0], xs[1]);
                let m = nodes[w.0].shape[1];
                let xd = &nodes[x.0].data;
                let wd = &nodes[w.0].data;
                if ensure(grads, *x) {
                    let gx = grads[x.0].as_mut().unwrap();
                    for bi in 0..bsz {
                        let gr = &g[bi * m..(bi + 1) * m];
                        for ni in 0..n {
                            let wr = &wd[ni * m..(ni + 1) * m];
                            let mut acc = R::ZERO;
                            for (gv, wv) in gr.iter().zip(wr) {
                                acc += *gv * *wv;
                            }
                            gx[bi * n + ni] += acc;
                        }
                    }
                }
                if ensure(grads, *w) {
                    let gw = grads[w.0].as_mut().unwrap();
                    for bi in 0..bsz {
                        let gr = &g[bi * m..(bi + 1) * m];
                        for ni in 0..n {
                            let xv = xd[bi * n + ni];
                            let wr = &mut gw[ni * m..(ni + 1) * m];
                            for (d, &gv) in wr.iter_mut().zip(gr) {
                                *d += xv * gv;
                            }
                        }
                    }
                }
                if ensure(grads, *b) {
                    let gb = grads[b.0].as_mut().unwrap();
                    for bi in 0..bsz {
                        for (d, &gv) in gb.iter_mut().zip(&g[bi * m..(bi + 1) * m]) {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                padding,
            } => {
                let (bsz, c_in, w_in) = (nodes[x.0].shape[0], nodes[x.0].shape[1], nodes[x.0].shape[2]);
                let (c_out, k) = (nodes[w.0].shape[0], nodes[w.0].shape[2]);
                let w_out = nodes[i].shape[2];
                let (s, p) = (*stride, *padding);
                let xd = &nodes[x.0].data;
                let wd = &nodes[w.0].data;
                // same im2col factorization as the forward pass
                let n = bsz * w_out;
                let kd = c_in * k;
                let mut gf = vec![R::ZERO; c_out * n];
                for bi in 0..bsz {
                    for co in 0..c_out {
                        gf[co * n + bi * w_out..co * n + (bi + 1) * w_out].copy_from_slice(
                            &g[(bi * c_out + co) * w_out..(bi * c_out + co + 1) * w_out],
                        );
                    }
                }
                if ensure(grads, *x) {
                    let mut wt_t = vec![R::ZERO; kd * c_out];
                    for co in 0..c_out {
                        for pp in 0..kd {
                            wt_t[pp * c_out + co] = wd[co * kd + pp];
                        }
                    }
                    let mut gcol = vec![R::ZERO; kd * n];
                    matmul_acc(&mut gcol, &wt_t, &gf, kd, c_out, n);
                    let gx = grads[x.0].as_mut().unwrap();
                    col2im_add(gx, &gcol, bsz, c_in, w_in, k, s, p, w_out);
                }
                if ensure(grads, *w) {
                    let col = im2col(xd, bsz, c_in, w_in, k, s, p, w_out);
                    let gw = grads[w.0].as_mut().unwrap();
                    for_each_chunk_mut(gw, kd, |co, gwc| {
                        let gr = &gf[co * n..(co + 1) * n];
                        for (pp, d) in gwc.iter_mut().enumerate() {
                            *d += dot8(gr, &col[pp * n..(pp + 1) * n]);
                        }
                    });
                }
                if ensure(grads, *b) {
                    let gb = grads[b.0].as_mut().unwrap();
                    for (co, d) in gb.iter_mut().enumerate() {
                        *d += gf[co * n..(co + 1) * n].iter().copied().sum();
                    }
                }
            }
            Op::ConvT1d {
                x,
                w,
                b,
                stride,
                padding,
            } => {
                let (bsz, c_in, w_in) = (nodes[x.0].shape[0], nodes[x.0].shape[1], nodes[x.0].shape[2]);
                let (c_out, k) = (nodes[w.0].shape[1], nodes[w.0].shape[2]);
                let w_out = nodes[i].shape[2];
                let (s, p) = (*stride, *padding);
                let xd = &nodes[x.0].data;
                let wd = &nodes[w.0].data;
                // colg[(co*k+j), b*w_in+wi] = g[b, co, wi*s + j - p]
                let n = bsz * w_in;
                let colg = im2col(g, bsz, c_out, w_out, k, s, p, w_in);
                if ensure(grads, *x) {
                    let mut gxf = vec![R::ZERO; c_in * n];
                    matmul_acc(&mut gxf, wd, &colg, c_in, c_out * k, n);
                    let gx = grads[x.0].as_mut().unwrap();
                    cn_add_to_bcw(gx, &gxf, bsz, c_in, w_in);
                }
                if ensure(grads, *w) {
                    let xf = bcw_to_cn(xd, bsz, c_in, w_in);
                    let gw = grads[w.0].as_mut().unwrap();
                    for_each_chunk_mut(gw, c_out * k, |ci, gwc| {
                        let xr = &xf[ci * n..(ci + 1) * n];
                        for (q, d) in gwc.iter_mut().enumerate() {
                            *d += dot8(xr, &colg[q * n..(q + 1) * n]);
                        }
                    });
                }
                if ensure(grads, *b) {
                    let gb = grads[b.0].as_mut().unwrap();
                    for bi in 0..bsz {
                        for co in 0..c_out {
                            let gr = &g[(bi * c_out + co) * w_out..(bi * c_out + co + 1) * w_out];
                            gb[co] += gr.iter().copied().sum();
                        }
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let (bsz, c, w) = (nodes[x.0].shape[0], nodes[x.0].shape[1], nodes[x.0].shape[2]);
                let n = (bsz * w) as f64;
                let gd = &nodes[gamma.0].data;
                if ensure(grads, *gamma) {
                    let gg = grads[gamma.0].as_mut().unwrap();
                    for ch in 0..c {
                        let mut acc = 0.0f64;
                        for bi in 0..bsz {
                            let o = (bi * c + ch) * w;
                            for ii in 0..w {
                                acc += (g[o + ii] * xhat[o + ii]).to_f64();
                            }
                        }
                        gg[ch] += R::from_f64(acc);
                    }
                }
                if ensure(grads, *beta) {
                    let gb = grads[beta.0].as_mut().unwrap();
                    for ch in 0..c {
                        let mut acc = 0.0f64;
                        for bi in 0..bsz {
                            let o = (bi * c + ch) * w;
                            for ii in 0..w {
                                acc += g[o + ii].to_f64();
                            }
                        }
                        gb[ch] += R::from_f64(acc);
                    }
                }
                if ensure(grads, *x) {
                    let gx = grads[x.0].as_mut().unwrap();
                    for ch in 0..c {
                        if *train {
                            let mut sum_g = 0.0f64;
                            let mut sum_gx = 0.0f64;
                            for bi in 0..bsz {
                                let o = (bi * c + ch) * w;
                                for ii in 0..w {
                                    sum_g += g[o + ii].to_f64();
                                    sum_gx += (g[o + ii] * xhat[o + ii]).to_f64();
                                }
                            }
                            let scale = gd[ch] * inv_std[ch] / R::from_f64(n);
                            let sum_g = R::from_f64(sum_g);
                            let sum_gx = R::from_f64(sum_gx);
                            let nr = R::from_f64(n);
                            for bi in 0..bsz {
                                let o = (bi * c + ch) * w;
                                for ii in 0..w {
                                    gx[o + ii] += scale
                                        * (nr * g[o + ii] - sum_g - xhat[o + ii] * sum_gx);
                                }
                            }
                        } else {
                            let scale = gd[ch] * inv_std[ch];
                            for bi in 0..bsz {
                                let o = (bi * c + ch) * w;
                                for ii in 0..w {
                                    gx[o + ii] += scale * g[o + ii];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Transposes `[B, C, W]` into `[C, B*W]` rows.
fn bcw_to_cn<R: Real>(xd: &[R], bsz: usize, c: usize, w: usize) -> Vec<R> {
    let n = bsz * w;
    let mut out = vec![R::ZERO; c * n];
    for bi in 0..bsz {
        for ch in 0..c {
            out[ch * n + bi * w..ch * n + (bi + 1) * w]
                .copy_from_slice(&xd[(bi * c + ch) * w..(bi * c + ch + 1) * w]);
        }
    }
    out
}

/// Adjoint of [`bcw_to_cn`]: accumulates `[C, B*W]` into `[B, C, W]`.
fn cn_add_to_bcw<R: Real>(dst: &mut [R], src: &[R], bsz: usize, c: usize, w: usize) {
    let n = bsz * w;
    for bi in 0..bsz {
        for ch in 0..c {
            let d = &mut dst[(bi * c + ch) * w..(bi * c + ch + 1) * w];
            let s = &src[ch * n + bi * w..ch * n + (bi + 1) * w];
            for (dv, &sv) in d.iter_mut().zip(s) {
                *dv += sv;
            }
        }
    }
}

/// `out[m,n] += a[m,kd] * b[kd,n]`, blocked four output rows at a time so
/// each `b` row load feeds four accumulation streams.
fn matmul_acc<R: Real>(out: &mut [R], a: &[R], b: &[R], m: usize, kd: usize, n: usize) {
    debug_assert_eq!(out.len(), m * n);
    debug_assert_eq!(a.len(), m * kd);
    debug_assert_eq!(b.len(), kd * n);
    if m % 4 == 0 {
        for_each_chunk_mut(out, 4 * n, |blk, rows| {
            let r0_base = 4 * blk;
            let (r01, r23) = rows.split_at_mut(2 * n);
            let (r0, r1) = r01.split_at_mut(n);
            let (r2, r3) = r23.split_at_mut(n);
            // two k-rows of `b` per pass halves the streaming reads of `b`
            let mut p = 0;
            while p + 1 < kd {
                let w0 = a[r0_base * kd + p];
                let w1 = a[(r0_base + 1) * kd + p];
                let w2 = a[(r0_base + 2) * kd + p];
                let w3 = a[(r0_base + 3) * kd + p];
                let v0 = a[r0_base * kd + p + 1];
                let v1 = a[(r0_base + 1) * kd + p + 1];
                let v2 = a[(r0_base + 2) * kd + p + 1];
                let v3 = a[(r0_base + 3) * kd + p + 1];
                let br = &b[p * n..(p + 1) * n];
                let cr = &b[(p + 1) * n..(p + 2) * n];
                let it = r0
                    .iter_mut()
                    .zip(r1.iter_mut())
                    .zip(r2.iter_mut())
                    .zip(r3.iter_mut())
                    .zip(br)
                    .zip(cr);
                for (((((o0, o1), o2), o3), &bv), &cv) in it {
                    *o0 += w0 * bv + v0 * cv;
                    *o1 += w1 * bv + v1 * cv;
                    *o2 += w2 * bv + v2 * cv;
                    *o3 += w3 * bv + v3 * cv;
                }
                p += 2;
            }
            if p < kd {
                let w0 = a[r0_base * kd + p];
                let w1 = a[(r0_base + 1) * kd + p];
                let w2 = a[(r0_base + 2) * kd + p];
                let w3 = a[(r0_base + 3) * kd + p];
                let br = &b[p * n..(p + 1) * n];
                let it = r0
                    .iter_mut()
                    .zip(r1.iter_mut())
                    .zip(r2.iter_mut())
                    .zip(r3.iter_mut())
                    .zip(br);
                for ((((o0, o1), o2), o3), &bv) in it {
                    *o0 += w0 * bv;
                    *o1 += w1 * bv;
                    *o2 += w2 * bv;
                    *o3 += w3 * bv;
                }
            }
        });
    } else {
        for_each_chunk_mut(out, n, |r, row| {
            for p in 0..kd {
                let wt = a[r * kd + p];
                for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                    *o += wt * bv;
                }
            }
        });
    }
}

/// Dot product with eight independent accumulators: strict float
/// semantics forbid reassociating a single-accumulator reduction, which
/// otherwise serializes on the add latency.
fn dot8<R: Real>(a: &[R], b: &[R]) -> R {
    let mut acc = [R::ZERO; 8];
    let main = a.len() - a.len() % 8;
    for (ca, cb) in a[..main].chunks_exact(8).zip(b[..main].chunks_exact(8)) {
        for i in 0..8 {
            acc[i] += ca[i] * cb[i];
        }
    }
    let mut s = R::ZERO;
    for v in acc {
        s += v;
    }
    for (&x, &y) in a[main..].iter().zip(&b[main..]) {
        s += x * y;
    }
    s
}

/// Gathers `[B, C, W_in]` into the im2col matrix `[C*K, B*W_out]`; taps
/// that fall outside the padded input read as zero.
fn im2col<R: Real>(
    xd: &[R],
    bsz: usize,
    c_in: usize,
    w_in: usize,
    k: usize,
    stride: usize,
    padding: usize,
    w_out: usize,
) -> Vec<R> {
    let n = bsz * w_out;
    let mut col = vec![R::ZERO; c_in * k * n];
    for ci in 0..c_in {
        for j in 0..k {
            let off = j as isize - padding as isize;
            let row = &mut col[(ci * k + j) * n..(ci * k + j + 1) * n];
            let (lo, hi) = valid_range(w_out, w_in, stride, off);
            for bi in 0..bsz {
                let xr = &xd[(bi * c_in + ci) * w_in..(bi * c_in + ci + 1) * w_in];
                let seg = &mut row[bi * w_out..(bi + 1) * w_out];
                if lo >= hi {
                    continue;
                }
                if stride == 1 {
                    seg[lo..hi].copy_from_slice(
                        &xr[(lo as isize + off) as usize..(hi as isize + off) as usize],
                    );
                } else {
                    for wo in lo..hi {
                        seg[wo] = xr[((wo * stride) as isize + off) as usize];
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: accumulates `[C*K, B*W_out]` back into
/// `[B, C, W_in]`.
#[allow(clippy::too_many_arguments)]
fn col2im_add<R: Real>(
    gx: &mut [R],
    col: &[R],
    bsz: usize,
    c_in: usize,
    w_in: usize,
    k: usize,
    stride: usize,
    padding: usize,
    w_out: usize,
) {
    let n = bsz * w_out;
    for ci in 0..c_in {
        for j in 0..k {
            let off = j as isize - padding as isize;
            let row = &col[(ci * k + j) * n..(ci * k + j + 1) * n];
            let (lo, hi) = valid_range(w_out, w_in, stride, off);
            for bi in 0..bsz {
                let gxr = &mut gx[(bi * c_in + ci) * w_in..(bi * c_in + ci + 1) * w_in];
                let seg = &row[bi * w_out..(bi + 1) * w_out];
                if lo >= hi {
                    continue;
                }
                if stride == 1 {
                    let dst = &mut gxr[(lo as isize + off) as usize..(hi as isize + off) as usize];
                    for (d, &sv) in dst.iter_mut().zip(&seg[lo..hi]) {
                        *d += sv;
                    }
                } else {
                    for wo in lo..hi {
                        gxr[((wo * stride) as isize + off) as usize] += seg[wo];
                    }
                }
            }
        }
    }
}

/// Indices `i` in `0..n_a` with `0 <= i*stride + off < n_b`, as `lo..hi`.
#[inline]
fn valid_range(n_a: usize, n_b: usize, stride: usize, off: isize) -> (usize, usize) {
    let lo = if off >= 0 {
        0
    } else {
        ((-off) as usize).div_ceil(stride)
    };
    let limit = n_b as isize - off;
    let hi = if limit <= 0 {
        0
    } else {
        (((limit - 1) as usize) / stride + 1).min(n_a)
    };
    (lo.min(hi), hi)
}
