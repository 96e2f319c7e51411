//! The pitch model: encoder/decoder networks, the equivariance, recon and
//! confidence losses, the training loop, and frame-level inference.

mod infer;
mod loss;
mod net;
mod pool;
mod train;

pub use infer::{
    estimates_to_track, evaluate_corpus_items, infer, pearson, write_infer_csv, CorpusEvalReport,
    FrameEstimate,
};
pub use loss::{loss_conf, loss_pitch, loss_pitch_noisy, loss_recon, pitch_error};
pub use net::{slices_to_input, Decoder, Encoder, EncoderOut, SpiceModel};
pub use pool::{build_frame_pool, FramePool, PooledFrame};
pub use train::{train, LossRow, TrainOpts, TrainReport};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{CqtParams, DspError};
use crate::nn::{LossKind, NnError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("training corpus contains no frames")]
    EmptyPool,
    #[error("training diverged at step {step}: non-finite {what}")]
    Diverged { step: u64, what: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
}

/// Full training/model configuration. `sigma` and `tau` are derived, not
/// stored, so they cannot drift out of sync with the pitch range.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpiceConfig {
    /// Slice offset range (inclusive) in CQT bins.
    pub k_min: usize,
    pub k_max: usize,
    /// Pitch range the equivariance scaling is normalized over, Hz.
    pub f_min: f64,
    pub f_max: f64,
    pub w_pitch: f64,
    pub w_recon: f64,
    pub w_conf: f64,
    pub lr: f64,
    pub batch_size: usize,
    /// Encoder/decoder base channel counts.
    pub d_enc: usize,
    pub d_dec: usize,
    /// Add octave-shifted (±1) copies of every track to the frame pool.
    pub augment_octaves: bool,
    /// Train on SNR-mixed inputs with the four-way pitch error.
    pub noisy_training: bool,
    pub snr_db: (f64, f64),
    pub loss_kind: LossKind,
    pub seed: u64,
    pub cqt: CqtParams,
}

impl Default for SpiceConfig {
    fn default() -> Self {
        Self {
            k_min: 0,
            k_max: 8,
            // three octaves, A1..A4, so sigma comes out to 1/72
            f_min: 55.0,
            f_max: 440.0,
            w_pitch: 1e4,
            w_recon: 1.0,
            w_conf: 1.0,
            lr: 1e-4,
            batch_size: 64,
            d_enc: 64,
            d_dec: 64,
            augment_octaves: false,
            noisy_training: false,
            snr_db: (-5.0, 25.0),
            loss_kind: LossKind::Huber,
            seed: 0,
            cqt: CqtParams::default(),
        }
    }
}

impl SpiceConfig {
    /// Pitch-difference scale: sigma = 1 / (Q * log2(f_max / f_min)).
    pub fn sigma(&self) -> f64 {
        1.0 / (self.cqt.bins_per_octave as f64 * (self.f_max / self.f_min).log2())
    }

    /// Huber threshold, tau = 0.25 * sigma.
    pub fn tau(&self) -> f64 {
        0.25 * self.sigma()
    }

    /// Fixed inference-time slice offset, the midpoint of the offset range.
    pub fn k_star(&self) -> usize {
        (self.k_min + self.k_max + 1) / 2
    }

    /// Recommended pitch-loss weight for noisy training.
    pub fn noisy_w_pitch() -> f64 {
        3e5
    }

    /// FNV-1a hash of the serialized config, recorded in checkpoints.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in json.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}
