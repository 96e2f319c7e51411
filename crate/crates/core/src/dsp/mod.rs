//! Audio frontend: WAV I/O, resampling, the constant-Q transform, exact
//! octave pitch-shifting and SNR mixing.

mod audio;
mod cqt;
mod mix;
mod resample;
mod wav;

pub use audio::AudioBuffer;
pub use cqt::{compute_cqt, slice_cqt, CqtMatrix, CqtParams, CqtPlan, CqtSlice, SLICE_BINS};
pub use mix::mix_at_snr;
pub use resample::{pitch_shift_octaves, resample};
pub use wav::{load_wav, load_wav_channel, write_wav, Channel};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported wav encoding: {0}")]
    UnsupportedWav(String),
    #[error("truncated wav file")]
    Truncated,
    #[error("zero-length audio")]
    EmptyAudio,
    #[error("invalid sample rate {0}")]
    InvalidRate(u32),
    #[error("highest CQT bin {freq:.1} Hz is at or above Nyquist ({nyquist:.1} Hz)")]
    BinAboveNyquist { freq: f64, nyquist: f64 },
    #[error("slice out of range: frame {t}, offset {k}")]
    SliceOutOfRange { t: usize, k: usize },
    #[error("sample rate mismatch: {0} vs {1}")]
    RateMismatch(u32, u32),
    #[error("undefined SNR: clean signal is silent")]
    SilentClean,
    #[error("undefined SNR: noise signal is silent")]
    SilentNoise,
}
