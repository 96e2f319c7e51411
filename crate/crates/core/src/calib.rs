//! Affine calibration of the encoder's relative-pitch scalar: fits
//! p = b + s*y by least squares on synthetic harmonic pieces, so absolute
//! pitch comes out without any labeled data.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{compute_cqt, DspError, SLICE_BINS};
use crate::model::{ModelError, SpiceConfig, SpiceModel};
use crate::nn::Tape;
use crate::synth::{gen_calibration_set, CalibrationSetConfig, SynthError};

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("calibration fit needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("calibration fit is degenerate: all y values equal")]
    DegenerateFit,
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AffineCalibration {
    /// Semitones at y = 0.
    pub intercept: f64,
    /// Semitones per unit y.
    pub slope: f64,
    /// Reference frequency of semitone 0, Hz.
    pub f_base: f64,
    /// Slice offset the fit was made at; inference must use the same one.
    pub k_star: usize,
    /// Number of fit points (M).
    pub n_points: usize,
    pub residual_rms: f64,
    /// Hash of the model checkpoint config this calibration belongs to.
    pub checkpoint_hash: String,
}

impl AffineCalibration {
    pub fn predict_semitones(&self, y: f64) -> f64 {
        self.intercept + self.slope * y
    }

    pub fn semitones_to_hz(&self, p: f64) -> f64 {
        self.f_base * 2f64.powf(p / 12.0)
    }

    pub fn hz_to_semitones(&self, f: f64) -> f64 {
        12.0 * (f / self.f_base).log2()
    }

    pub fn save(&self, path: &Path) -> Result<(), CalibError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CalibError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Ordinary least squares for p = b + s*y.
pub fn fit(points: &[(f64, f64)]) -> Result<AffineCalibration, CalibError> {
    if points.len() < 2 {
        return Err(CalibError::TooFewPoints(points.len()));
    }
    let n = points.len() as f64;
    let my: f64 = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mp: f64 = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - my) * (p.0 - my)).sum();
    if sxx == 0.0 {
        return Err(CalibError::DegenerateFit);
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - my) * (p.1 - mp)).sum();
    let slope = sxy / sxx;
    let intercept = mp - slope * my;
    let residual_rms = (points
        .iter()
        .map(|p| {
            let r = p.1 - (intercept + slope * p.0);
            r * r
        })
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(AffineCalibration {
        intercept,
        slope,
        f_base: crate::dsp::CqtParams::default().f_base,
        k_star: 0,
        n_points: points.len(),
        residual_rms,
        checkpoint_hash: String::new(),
    })
}

/// Generates `synth_cfg.n_pieces` harmonic waveforms, encodes the center
/// frame of each at the inference offset k*, and fits the affine map from
/// y to the known semitone values.
pub fn calibrate_model(
    model: &mut SpiceModel<f32>,
    cfg: &SpiceConfig,
    synth_cfg: &CalibrationSetConfig,
    seed: u64,
) -> Result<AffineCalibration, CalibError> {
    let samples = gen_calibration_set(synth_cfg, seed)?;
    let k = cfg.k_star();
    let points: Vec<(f64, f64)> = samples
        .iter()
        .map(|s| -> Result<(f64, f64), CalibError> {
            let cqt = compute_cqt(&s.audio, &cfg.cqt)?;
            let frame = cqt.frame(s.center_frame.min(cqt.n_frames - 1));
            let row = &frame[k..k + SLICE_BINS];
            let mut tape: Tape<f32> = Tape::new();
            let x = crate::model::slices_to_input(&mut tape, &[row]);
            let (out, _) = model.encoder.forward(&mut tape, x, false);
            Ok((tape.data(out.y)[0] as f64, s.f0_semitones))
        })
        .collect::<Result<_, _>>()?;
    let mut cal = fit(&points)?;
    cal.f_base = synth_cfg.f_base;
    cal.k_star = k;
    cal.checkpoint_hash = cfg.hash();
    Ok(cal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_line_recovered() {
        let pts: Vec<(f64, f64)> = [-1.0, 0.0, 0.5, 2.0]
            .iter()
            .map(|&y| (y, 3.0 + 2.0 * y))
            .collect();
        let cal = fit(&pts).unwrap();
        assert!((cal.intercept - 3.0).abs() < 1e-12);
        assert!((cal.slope - 2.0).abs() < 1e-12);
        assert!(cal.residual_rms < 1e-12);
    }

    #[test]
    fn two_points_interpolate_exactly() {
        let cal = fit(&[(0.0, 1.0), (1.0, 5.0)]).unwrap();
        assert!((cal.predict_semitones(0.0) - 1.0).abs() < 1e-12);
        assert!((cal.predict_semitones(1.0) - 5.0).abs() < 1e-12);
        assert!(cal.residual_rms < 1e-12);
    }

    #[test]
    fn degenerate_inputs_rejected() {
        assert!(matches!(fit(&[(0.5, 1.0)]), Err(CalibError::TooFewPoints(1))));
        assert!(matches!(
            fit(&[(0.5, 1.0), (0.5, 2.0), (0.5, 3.0)]),
            Err(CalibError::DegenerateFit)
        ));
    }

    #[test]
    fn monte_carlo_noisy_line() {
        // p = b + s*y + N(0, 0.1), 50 points, averaged over seeds
        let (b, s) = (3.0, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (mut db, mut ds) = (0.0, 0.0);
        let reps = 20;
        for _ in 0..reps {
            let pts: Vec<(f64, f64)> = (0..50)
                .map(|_| {
                    let y: f64 = rng.gen_range(-1.0..1.0);
                    // Box-Muller
                    let u1: f64 = rng.gen_range(1e-12..1.0);
                    let u2: f64 = rng.gen_range(0.0..1.0);
                    let z = (-2.0 * u1.ln()).sqrt()
                        * (2.0 * std::f64::consts::PI * u2).cos();
                    (y, b + s * y + 0.1 * z)
                })
                .collect();
            let cal = fit(&pts).unwrap();
            db += (cal.intercept - b).abs();
            ds += (cal.slope - s).abs();
        }
        let (db, ds) = (db / reps as f64, ds / reps as f64);
        assert!(db < 0.15, "intercept error {db}");
        assert!(ds < 0.15, "slope error {ds}");
    }

    #[test]
    fn roundtrip_and_anchor_frequencies() {
        let cal = fit(&[(0.0, 0.0), (1.0, 1.0)]).unwrap();
        assert!((cal.semitones_to_hz(0.0) - 32.7032).abs() < 1e-3);
        assert!((cal.semitones_to_hz(12.0) - 65.4064).abs() < 1e-3);
        assert!((cal.hz_to_semitones(440.0) - 45.0).abs() < 1e-4);
        for p in [-12.0, 0.0, 7.3, 45.0] {
            let back = cal.hz_to_semitones(cal.semitones_to_hz(p));
            assert!((back - p).abs() < 1e-9);
        }
    }

    #[test]
    fn fit_is_scale_equivariant_and_order_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<(f64, f64)> = (0..30)
            .map(|_| {
                let y: f64 = rng.gen_range(-1.0..1.0);
                (y, 10.0 - 4.0 * y + 0.01 * rng.gen_range(-1.0..1.0))
            })
            .collect();
        let cal = fit(&pts).unwrap();
        let gamma = 3.7;
        let scaled: Vec<(f64, f64)> = pts.iter().map(|&(y, p)| (gamma * y, p)).collect();
        let cal_s = fit(&scaled).unwrap();
        assert!((cal_s.slope - cal.slope / gamma).abs() < 1e-9);
        for &(y, _) in &pts {
            let a = cal.predict_semitones(y);
            let b = cal_s.predict_semitones(gamma * y);
            assert!((a - b).abs() < 1e-9);
        }
        let mut rev = pts.clone();
        rev.reverse();
        let cal_r = fit(&rev).unwrap();
        assert!((cal_r.intercept - cal.intercept).abs() < 1e-12);
        assert!((cal_r.slope - cal.slope).abs() < 1e-12);
    }

    #[test]
    fn calibrate_model_deterministic_with_seed() {
        let mut m: SpiceModel<f32> = SpiceModel::new(4, 4, 9);
        let cfg = SpiceConfig {
            d_enc: 4,
            d_dec: 4,
            ..SpiceConfig::default()
        };
        let synth_cfg = CalibrationSetConfig::default();
        let a = calibrate_model(&mut m, &cfg, &synth_cfg, 21).unwrap();
        let b = calibrate_model(&mut m, &cfg, &synth_cfg, 21).unwrap();
        assert_eq!(a.intercept, b.intercept);
        assert_eq!(a.slope, b.slope);
        assert_eq!(a.k_star, cfg.k_star());
        assert_eq!(a.n_points, 5);
    }
}
