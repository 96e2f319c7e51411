//! Encoder and decoder networks.
//!
//! The encoder maps a 128-bin CQT slice through six conv/BN/ReLU/pool
//! blocks (channels d*[1,2,4,8,8,8], widths 128 -> 64 -> ... -> 2) into a
//! 16d-dimensional embedding, then a 48-unit pitch head and a sigmoid
//! confidence head. The decoder mirrors it: dense 1 -> 48 -> 16*d_dec,
//! reshape to [8*d_dec x 2], six stride-2 transposed-conv blocks back up
//! to width 128, and a final 1-channel conv.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dsp::SLICE_BINS;
use crate::nn::{
    he_uniform, Checkpoint, LayerSpec, NetworkSpec, NnError, NodeId, Parameter, RunningStats, Tape,
};
use crate::real::Real;

const BN_MOMENTUM: f64 = 0.99;
const BN_EPS: f64 = 1e-5;
const KERNEL: usize = 3;
const ENC_MULT: [usize; 6] = [1, 2, 4, 8, 8, 8];
const HEAD_HIDDEN: usize = 48;

struct ConvBlock<R: Real> {
    w: Parameter<R>,
    b: Parameter<R>,
    gamma: Parameter<R>,
    beta: Parameter<R>,
    stats: RunningStats<R>,
}

impl<R: Real> ConvBlock<R> {
    fn new(rng: &mut ChaCha8Rng, prefix: &str, shape_w: Vec<usize>, out_ch: usize, fan_in: usize) -> Self {
        let n: usize = shape_w.iter().product();
        Self {
            w: Parameter::new(format!("{prefix}.w"), shape_w, he_uniform(rng, fan_in, n)),
            b: Parameter::zeros(format!("{prefix}.b"), vec![out_ch]),
            gamma: Parameter::new(format!("{prefix}.gamma"), vec![out_ch], vec![R::ONE; out_ch]),
            beta: Parameter::zeros(format!("{prefix}.beta"), vec![out_ch]),
            stats: RunningStats::new(out_ch),
        }
    }
}

pub struct EncoderOut {
    pub embedding: NodeId,
    pub y: NodeId,
    pub c: NodeId,
}

pub struct Encoder<R: Real> {
    pub d: usize,
    blocks: Vec<ConvBlock<R>>,
    pitch_w1: Parameter<R>,
    pitch_b1: Parameter<R>,
    pitch_w2: Parameter<R>,
    pitch_b2: Parameter<R>,
    conf_w: Parameter<R>,
    conf_b: Parameter<R>,
}

impl<R: Real> Encoder<R> {
    pub fn new(d: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut blocks = Vec::with_capacity(6);
        let mut in_ch = 1;
        for (i, m) in ENC_MULT.iter().enumerate() {
            let out_ch = d * m;
            blocks.push(ConvBlock::new(
                rng,
                &format!("enc.block{i}"),
                vec![out_ch, in_ch, KERNEL],
                out_ch,
                in_ch * KERNEL,
            ));
            in_ch = out_ch;
        }
        let emb = 16 * d;
        let mk = |rng: &mut ChaCha8Rng, name: &str, rows: usize, cols: usize| {
            Parameter::new(
                name.to_string(),
                vec![rows, cols],
                he_uniform(rng, rows, rows * cols),
            )
        };
        Self {
            d,
            blocks,
            pitch_w1: mk(rng, "enc.pitch.w1", emb, HEAD_HIDDEN),
            pitch_b1: Parameter::zeros("enc.pitch.b1", vec![HEAD_HIDDEN]),
            pitch_w2: mk(rng, "enc.pitch.w2", HEAD_HIDDEN, 1),
            pitch_b2: Parameter::zeros("enc.pitch.b2", vec![1]),
            conf_w: mk(rng, "enc.conf.w", emb, 1),
            conf_b: Parameter::zeros("enc.conf.b", vec![1]),
        }
    }

    pub fn embedding_dim(&self) -> usize {
        16 * self.d
    }

    pub fn spec(&self) -> NetworkSpec {
        let mut layers = Vec::new();
        let mut in_ch = 1;
        for m in ENC_MULT {
            let out_ch = self.d * m;
            layers.push(LayerSpec::Conv1d {
                in_ch,
                out_ch,
                kernel: KERNEL,
                stride: 1,
                padding: 1,
            });
            layers.push(LayerSpec::BatchNorm { channels: out_ch });
            layers.push(LayerSpec::Relu);
            layers.push(LayerSpec::MaxPool {
                size: 3,
                stride: 2,
                ceil_mode: true,
            });
            in_ch = out_ch;
        }
        layers.push(LayerSpec::Flatten);
        NetworkSpec { layers }
    }

    /// Forward a batch of slices `[B, 1, 128]`; leaf order matches
    /// [`Encoder::visit_params`] and is returned for gradient application.
    pub fn forward(
        &mut self,
        tape: &mut Tape<R>,
        x: NodeId,
        train: bool,
    ) -> (EncoderOut, Vec<NodeId>) {
        assert_eq!(tape.shape(x)[2], SLICE_BINS, "encoder expects 128-bin slices");
        let bsz = tape.shape(x)[0];
        let mut nodes = Vec::new();
        let mut cur = x;
        for blk in self.blocks.iter_mut() {
            let w = blk.w.leaf(tape);
            let b = blk.b.leaf(tape);
            let gamma = blk.gamma.leaf(tape);
            let beta = blk.beta.leaf(tape);
            nodes.extend([w, b, gamma, beta]);
            let c = tape.conv1d(cur, w, b, 1, 1);
            let n = tape.batchnorm1d(c, gamma, beta, &mut blk.stats, train, BN_MOMENTUM, BN_EPS);
            let r = tape.relu(n);
            cur = tape.maxpool1d(r, 3, 2, true);
        }
        let embedding = tape.reshape(cur, vec![bsz, self.embedding_dim()]);

        let pw1 = self.pitch_w1.leaf(tape);
        let pb1 = self.pitch_b1.leaf(tape);
        let pw2 = self.pitch_w2.leaf(tape);
        let pb2 = self.pitch_b2.leaf(tape);
        let cw = self.conf_w.leaf(tape);
        let cb = self.conf_b.leaf(tape);
        nodes.extend([pw1, pb1, pw2, pb2, cw, cb]);

        let h = tape.dense(embedding, pw1, pb1);
        let h = tape.relu(h);
        let y = tape.dense(h, pw2, pb2);
        // the confidence head reads a detached embedding: its loss trains
        // only the head itself, never the trunk
        let emb_detached = tape.stop_gradient(embedding);
        let cl = tape.dense(emb_detached, cw, cb);
        let c = tape.sigmoid(cl);

        (EncoderOut { embedding, y, c }, nodes)
    }

    pub fn visit_params(&mut self, f: &mut impl FnMut(&mut Parameter<R>)) {
        for blk in self.blocks.iter_mut() {
            f(&mut blk.w);
            f(&mut blk.b);
            f(&mut blk.gamma);
            f(&mut blk.beta);
        }
        f(&mut self.pitch_w1);
        f(&mut self.pitch_b1);
        f(&mut self.pitch_w2);
        f(&mut self.pitch_b2);
        f(&mut self.conf_w);
        f(&mut self.conf_b);
    }

    fn buffers(&self) -> Vec<(String, &RunningStats<R>)> {
        self.blocks
            .iter()
            .enumerate()
            .map(|(i, b)| (format!("enc.block{i}"), &b.stats))
            .collect()
    }
}

pub struct Decoder<R: Real> {
    pub d: usize,
    dense_w1: Parameter<R>,
    dense_b1: Parameter<R>,
    dense_w2: Parameter<R>,
    dense_b2: Parameter<R>,
    blocks: Vec<ConvBlock<R>>,
    final_w: Parameter<R>,
    final_b: Parameter<R>,
}

/// Transposed-conv output channels per block, as multiples of d; the
/// reversed encoder ladder.
const DEC_MULT: [usize; 6] = [8, 8, 4, 2, 1, 1];

impl<R: Real> Decoder<R> {
    pub fn new(d: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut blocks = Vec::with_capacity(6);
        let mut in_ch = 8 * d;
        for (i, m) in DEC_MULT.iter().enumerate() {
            let out_ch = d * m;
            // transposed-conv weights are [C_in, C_out, K]
            blocks.push(ConvBlock::new(
                rng,
                &format!("dec.block{i}"),
                vec![in_ch, out_ch, KERNEL],
                out_ch,
                in_ch * KERNEL,
            ));
            in_ch = out_ch;
        }
        let latent = 16 * d;
        Self {
            d,
            dense_w1: Parameter::new(
                "dec.dense.w1".to_string(),
                vec![1, HEAD_HIDDEN],
                he_uniform(rng, 1, HEAD_HIDDEN),
            ),
            dense_b1: Parameter::zeros("dec.dense.b1", vec![HEAD_HIDDEN]),
            dense_w2: Parameter::new(
                "dec.dense.w2".to_string(),
                vec![HEAD_HIDDEN, latent],
                he_uniform(rng, HEAD_HIDDEN, HEAD_HIDDEN * latent),
            ),
            dense_b2: Parameter::zeros("dec.dense.b2", vec![latent]),
            blocks,
            final_w: Parameter::new(
                "dec.final.w".to_string(),
                vec![1, d, KERNEL],
                he_uniform(rng, d * KERNEL, d * KERNEL),
            ),
            final_b: Parameter::zeros("dec.final.b", vec![1]),
        }
    }

    pub fn spec(&self) -> NetworkSpec {
        let mut layers = vec![
            LayerSpec::Dense {
                inputs: 1,
                outputs: HEAD_HIDDEN,
            },
            LayerSpec::Relu,
            LayerSpec::Dense {
                inputs: HEAD_HIDDEN,
                outputs: 16 * self.d,
            },
            LayerSpec::Relu,
            LayerSpec::Reshape {
                channels: 8 * self.d,
                width: 2,
            },
        ];
        let mut in_ch = 8 * self.d;
        for m in DEC_MULT {
            let out_ch = self.d * m;
            layers.push(LayerSpec::ConvT1d {
                in_ch,
                out_ch,
                kernel: KERNEL,
                stride: 2,
                padding: 1,
                output_padding: 1,
            });
            layers.push(LayerSpec::BatchNorm { channels: out_ch });
            layers.push(LayerSpec::Relu);
            in_ch = out_ch;
        }
        layers.push(LayerSpec::Conv1d {
            in_ch,
            out_ch: 1,
            kernel: KERNEL,
            stride: 1,
            padding: 1,
        });
        NetworkSpec { layers }
    }

    /// Forward pitch scalars `[B, 1]` to reconstructed slices `[B, 128]`.
    pub fn forward(
        &mut self,
        tape: &mut Tape<R>,
        y: NodeId,
        train: bool,
    ) -> (NodeId, Vec<NodeId>) {
        let bsz = tape.shape(y)[0];
        let mut nodes = Vec::new();
        let w1 = self.dense_w1.leaf(tape);
        let b1 = self.dense_b1.leaf(tape);
        let w2 = self.dense_w2.leaf(tape);
        let b2 = self.dense_b2.leaf(tape);
        nodes.extend([w1, b1, w2, b2]);
        let h = tape.dense(y, w1, b1);
        let h = tape.relu(h);
        let h = tape.dense(h, w2, b2);
        let h = tape.relu(h);
        let mut cur = tape.reshape(h, vec![bsz, 8 * self.d, 2]);
        for blk in self.blocks.iter_mut() {
            let w = blk.w.leaf(tape);
            let b = blk.b.leaf(tape);
            let gamma = blk.gamma.leaf(tape);
            let beta = blk.beta.leaf(tape);
            nodes.extend([w, b, gamma, beta]);
            let t = tape.conv_transpose1d(cur, w, b, 2, 1, 1);
            let n = tape.batchnorm1d(t, gamma, beta, &mut blk.stats, train, BN_MOMENTUM, BN_EPS);
            cur = tape.relu(n);
        }
        let fw = self.final_w.leaf(tape);
        let fb = self.final_b.leaf(tape);
        nodes.extend([fw, fb]);
        let out = tape.conv1d(cur, fw, fb, 1, 1);
        let out = tape.reshape(out, vec![bsz, SLICE_BINS]);
        (out, nodes)
    }

    pub fn visit_params(&mut self, f: &mut impl FnMut(&mut Parameter<R>)) {
        f(&mut self.dense_w1);
        f(&mut self.dense_b1);
        f(&mut self.dense_w2);
        f(&mut self.dense_b2);
        for blk in self.blocks.iter_mut() {
            f(&mut blk.w);
            f(&mut blk.b);
            f(&mut blk.gamma);
            f(&mut blk.beta);
        }
        f(&mut self.final_w);
        f(&mut self.final_b);
    }

    fn buffers(&self) -> Vec<(String, &RunningStats<R>)> {
        self.blocks
            .iter()
            .enumerate()
            .map(|(i, b)| (format!("dec.block{i}"), &b.stats))
            .collect()
    }
}

pub struct SpiceModel<R: Real> {
    pub encoder: Encoder<R>,
    pub decoder: Decoder<R>,
}

impl<R: Real> SpiceModel<R> {
    pub fn new(d_enc: usize, d_dec: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            encoder: Encoder::new(d_enc, &mut rng),
            decoder: Decoder::new(d_dec, &mut rng),
        }
    }

    pub fn visit_params(&mut self, f: &mut impl FnMut(&mut Parameter<R>)) {
        self.encoder.visit_params(f);
        self.decoder.visit_params(f);
    }

    pub fn to_checkpoint(&mut self, step: u64, config_hash: String) -> Checkpoint {
        let mut ck = Checkpoint::new(step, config_hash, self.encoder.spec(), self.decoder.spec());
        self.visit_params(&mut |p| ck.put_parameter(p));
        for (name, stats) in self
            .encoder
            .buffers()
            .into_iter()
            .chain(self.decoder.buffers())
        {
            ck.put_buffer(&format!("{name}.running_mean"), &stats.mean);
            ck.put_buffer(&format!("{name}.running_var"), &stats.var);
        }
        ck
    }

    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<(), NnError> {
        let mut res = Ok(());
        self.visit_params(&mut |p| {
            if res.is_ok() {
                res = ck.load_parameter(p);
            }
        });
        res?;
        for blk in self.encoder.blocks.iter_mut().enumerate().map(|(i, b)| (format!("enc.block{i}"), b))
            .collect::<Vec<_>>()
        {
            ck.load_buffer(&format!("{}.running_mean", blk.0), &mut blk.1.stats.mean)?;
            ck.load_buffer(&format!("{}.running_var", blk.0), &mut blk.1.stats.var)?;
        }
        for blk in self.decoder.blocks.iter_mut().enumerate().map(|(i, b)| (format!("dec.block{i}"), b))
            .collect::<Vec<_>>()
        {
            ck.load_buffer(&format!("{}.running_mean", blk.0), &mut blk.1.stats.mean)?;
            ck.load_buffer(&format!("{}.running_var", blk.0), &mut blk.1.stats.var)?;
        }
        Ok(())
    }

    pub fn n_params(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.data.len());
        n
    }
}

/// Builds a batched slice tensor `[B, 1, 128]` on the tape from raw rows.
pub fn slices_to_input<R: Real>(tape: &mut Tape<R>, rows: &[&[f32]]) -> NodeId {
    let bsz = rows.len();
    let mut data = Vec::with_capacity(bsz * SLICE_BINS);
    for r in rows {
        assert_eq!(r.len(), SLICE_BINS);
        data.extend(r.iter().map(|&v| R::from_f64(v as f64)));
    }
    tape.constant(vec![bsz, 1, SLICE_BINS], data)
}
