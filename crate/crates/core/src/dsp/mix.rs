use super::{AudioBuffer, DspError};

/// Adds `noise` to `clean` at the requested signal-to-noise ratio.
///
/// The noise is looped or truncated to the clean length, then scaled by
/// `g = rms(clean)/rms(noise) * 10^(-snr_db/20)`. No clipping
/// normalization is applied; the peak of the mix may exceed 1.
pub fn mix_at_snr(
    clean: &AudioBuffer,
    noise: &AudioBuffer,
    snr_db: f64,
) -> Result<AudioBuffer, DspError> {
    if clean.sample_rate != noise.sample_rate {
        return Err(DspError::RateMismatch(clean.sample_rate, noise.sample_rate));
    }
    let clean_rms = clean.rms();
    if clean_rms == 0.0 {
        return Err(DspError::SilentClean);
    }
    let noise_rms = noise.rms();
    if noise_rms == 0.0 {
        return Err(DspError::SilentNoise);
    }
    let g = (clean_rms / noise_rms * 10f64.powf(-snr_db / 20.0)) as f32;
    let nn = noise.samples.len();
    let samples = clean
        .samples
        .iter()
        .enumerate()
        .map(|(i, &s)| s + g * noise.samples[i % nn])
        .collect();
    AudioBuffer::new(samples, clean.sample_rate)
}
