use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{gen_harmonic_piece, HarmonicSpec, SynthError};
use crate::dsp::AudioBuffer;

/// One piece of the piece-wise harmonic calibration waveform.
#[derive(Debug, Clone)]
pub struct CalibrationSample {
    pub audio: AudioBuffer,
    /// Known pitch, semitones above `f_base`.
    pub f0_semitones: f64,
    pub f0_hz: f64,
    /// Center frame within the piece (`floor(n_frames / 2)`).
    pub center_frame: usize,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSetConfig {
    /// Number of pieces M.
    pub n_pieces: usize,
    /// Frames per piece N.
    pub frames_per_piece: usize,
    /// Hop H in samples.
    pub hop: usize,
    /// Higher-order harmonics K.
    pub n_harmonics: usize,
    pub f_lo: f64,
    pub f_hi: f64,
    pub sample_rate: u32,
    pub f_base: f64,
}

impl Default for CalibrationSetConfig {
    fn default() -> Self {
        Self {
            n_pieces: 5,
            frames_per_piece: 11,
            hop: 512,
            n_harmonics: 3,
            f_lo: 110.0, // A2
            f_hi: 440.0, // A4
            sample_rate: 16000,
            f_base: crate::dsp::CqtParams::default().f_base,
        }
    }
}

/// Generates `M` harmonic pieces, each `N * H` samples, with fundamentals
/// on the equal-tempered semitone grid anchored at `f_lo`.
///
/// The first-harmonic amplitude is `a_0 ~ N(0,1)`, resampled while
/// `|a_0| < 0.1` so no piece is near-silent; overtones get
/// `a_k ~ |a_0| * U(0,1)` and random phases.
pub fn gen_calibration_set(
    cfg: &CalibrationSetConfig,
    seed: u64,
) -> Result<Vec<CalibrationSample>, SynthError> {
    if !(cfg.f_lo > 0.0 && cfg.f_lo < cfg.f_hi) {
        return Err(SynthError::InvalidRange(cfg.f_lo, cfg.f_hi));
    }
    assert!(cfg.n_pieces >= 2, "need at least two pieces");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_samples = cfg.frames_per_piece * cfg.hop;
    let max_semitone = (12.0 * (cfg.f_hi / cfg.f_lo).log2()).floor() as u32;

    let mut out = Vec::with_capacity(cfg.n_pieces);
    for _ in 0..cfg.n_pieces {
        let s = rng.gen_range(0..=max_semitone);
        let f0 = cfg.f_lo * 2f64.powf(s as f64 / 12.0);
        let a0 = loop {
            // Box-Muller standard normal
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let v = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            if v.abs() >= 0.1 {
                break v;
            }
        };
        let mut amplitudes = vec![a0];
        let mut phases = vec![rng.gen_range(0.0..2.0 * std::f64::consts::PI)];
        for _ in 0..cfg.n_harmonics {
            amplitudes.push(a0.abs() * rng.gen_range(0.0..1.0));
            phases.push(rng.gen_range(0.0..2.0 * std::f64::consts::PI));
        }
        let spec = HarmonicSpec {
            f0,
            amplitudes,
            phases,
        };
        out.push(CalibrationSample {
            audio: gen_harmonic_piece(&spec, n_samples, cfg.sample_rate)?,
            f0_semitones: 12.0 * (f0 / cfg.f_base).log2(),
            f0_hz: f0,
            center_frame: cfg.frames_per_piece / 2,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fundamentals_on_semitone_grid() {
        let cfg = CalibrationSetConfig {
            n_pieces: 40,
            ..Default::default()
        };
        let set = gen_calibration_set(&cfg, 5).unwrap();
        for s in &set {
            let steps = 12.0 * (s.f0_hz / 110.0).log2();
            assert!((steps - steps.round()).abs() < 1e-9);
            let r = steps.round() as i64;
            assert!((0..=24).contains(&r), "semitone {r} out of A2..A4");
        }
    }

    #[test]
    fn piece_length_and_center_frame() {
        let cfg = CalibrationSetConfig::default();
        let set = gen_calibration_set(&cfg, 1).unwrap();
        for s in &set {
            assert_eq!(s.audio.len(), 11 * 512);
            assert_eq!(s.center_frame, 5);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let cfg = CalibrationSetConfig::default();
        let a = gen_calibration_set(&cfg, 42).unwrap();
        let b = gen_calibration_set(&cfg, 42).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.audio.samples, y.audio.samples);
            assert_eq!(x.f0_hz, y.f0_hz);
        }
    }

    #[test]
    fn invalid_range_rejected() {
        let cfg = CalibrationSetConfig {
            f_lo: 440.0,
            f_hi: 110.0,
            ..Default::default()
        };
        assert!(matches!(
            gen_calibration_set(&cfg, 0),
            Err(SynthError::InvalidRange(_, _))
        ));
    }
}
