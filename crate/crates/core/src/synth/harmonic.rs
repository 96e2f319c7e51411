use super::SynthError;
use crate::dsp::AudioBuffer;

/// A stationary harmonic tone: fundamental plus `K` overtones.
#[derive(Debug, Clone)]
pub struct HarmonicSpec {
    pub f0: f64,
    /// `amplitudes[k]` drives harmonic `k+1` at frequency `(k+1)*f0`.
    pub amplitudes: Vec<f64>,
    /// Phase per harmonic, radians.
    pub phases: Vec<f64>,
}

impl HarmonicSpec {
    pub fn n_harmonics(&self) -> usize {
        self.amplitudes.len().saturating_sub(1)
    }
}

/// Renders `sum_k a_k sin(2 pi (k+1) f0 t + phi_k)`, dropping harmonics at
/// or above Nyquist, peak-normalized to 0.8.
pub fn gen_harmonic_piece(
    spec: &HarmonicSpec,
    n_samples: usize,
    sample_rate: u32,
) -> Result<AudioBuffer, SynthError> {
    assert!(n_samples > 0 && spec.f0 > 0.0);
    let nyquist = sample_rate as f64 / 2.0;
    let active: Vec<(f64, f64, f64)> = spec
        .amplitudes
        .iter()
        .zip(&spec.phases)
        .enumerate()
        .filter(|(k, (&a, _))| a != 0.0 && (*k as f64 + 1.0) * spec.f0 < nyquist)
        .map(|(k, (&a, &p))| ((k as f64 + 1.0) * spec.f0, a, p))
        .collect();
    if active.is_empty() {
        return Err(SynthError::AllZeroAmplitudes);
    }
    let mut samples = vec![0.0f32; n_samples];
    for &(freq, amp, phase) in &active {
        let w = 2.0 * std::f64::consts::PI * freq / sample_rate as f64;
        for (i, s) in samples.iter_mut().enumerate() {
            *s += (amp * (w * i as f64 + phase).sin()) as f32;
        }
    }
    let peak = samples.iter().fold(0.0f32, |m, &s| m.max(s.abs()));
    if peak == 0.0 {
        return Err(SynthError::AllZeroAmplitudes);
    }
    let scale = 0.8 / peak;
    for s in &mut samples {
        *s *= scale;
    }
    Ok(AudioBuffer::new(samples, sample_rate)?)
}
