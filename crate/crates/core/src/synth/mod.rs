//! Synthetic signal generation: piece-wise harmonic calibration waveforms
//! and a labeled desk-scale corpus of harmonic/noise segments.

mod calibration;
mod corpus;
mod harmonic;
mod noise;

pub use calibration::{gen_calibration_set, CalibrationSample, CalibrationSetConfig};
pub use corpus::{gen_training_corpus, load_corpus, save_corpus, CorpusConfig, CorpusItem};
pub use harmonic::{gen_harmonic_piece, HarmonicSpec};
pub use noise::pink_noise;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("all harmonic amplitudes are zero (or above Nyquist)")]
    AllZeroAmplitudes,
    #[error("invalid frequency range [{0}, {1}]")]
    InvalidRange(f64, f64),
    #[error("empty corpus configuration")]
    EmptyConfig,
    #[error(transparent)]
    Dsp(#[from] crate::dsp::DspError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed label file {path}: {msg}")]
    BadLabelFile { path: String, msg: String },
}
