//! Band-limited resampling via a windowed-sinc interpolation kernel.

use super::{AudioBuffer, DspError};

/// Half-width of the sinc kernel, in periods of the lower sample rate.
const KERNEL_HALF_WIDTH: usize = 24;

/// Resamples to `target_rate`, low-pass filtering below the output Nyquist
/// when downsampling. Output length is `round(n * target / source)`.
pub fn resample(audio: &AudioBuffer, target_rate: u32) -> Result<AudioBuffer, DspError> {
    if target_rate == 0 {
        return Err(DspError::InvalidRate(target_rate));
    }
    if target_rate == audio.sample_rate {
        return Ok(audio.clone());
    }
    let src = &audio.samples;
    let n = src.len();
    let ratio = target_rate as f64 / audio.sample_rate as f64;
    let out_len = ((n as f64) * ratio).round().max(1.0) as usize;

    // cutoff relative to source Nyquist; <1 when downsampling
    let cutoff = ratio.min(1.0);
    let half = (KERNEL_HALF_WIDTH as f64 / cutoff).ceil() as isize;

    let out = crate::parallel::map_indices(out_len, |m| {
        let center = m as f64 / ratio;
        let lo = (center.floor() as isize - half).max(0);
        let hi = (center.floor() as isize + half + 1).min(n as isize);
        let mut acc = 0.0f64;
        for i in lo..hi {
            let d = (i as f64 - center) * cutoff;
            // normalized sinc
            let sinc = if d.abs() < 1e-12 {
                1.0
            } else {
                let pd = std::f64::consts::PI * d;
                pd.sin() / pd
            };
            // Hann taper over the kernel support
            let u = d / KERNEL_HALF_WIDTH as f64;
            if u.abs() >= 1.0 {
                continue;
            }
            let w = 0.5 * (1.0 + (std::f64::consts::PI * u).cos());
            acc += src[i as usize] as f64 * sinc * w * cutoff;
        }
        acc as f32
    });
    AudioBuffer::new(out, target_rate)
}

/// Shifts pitch by exactly `n` octaves (`n` in {-1, 0, +1}) by resampling
/// and relabeling the rate; duration changes by the factor `2^-n`.
pub fn pitch_shift_octaves(audio: &AudioBuffer, n: i32) -> Result<AudioBuffer, DspError> {
    assert!((-1..=1).contains(&n), "octave shift must be in -1..=1");
    if n == 0 {
        return Ok(audio.clone());
    }
    // pitch up = decimate (band-limited), pitch down = interpolate
    let virtual_rate = if n > 0 {
        audio.sample_rate / 2
    } else {
        audio.sample_rate * 2
    };
    let mut out = resample(audio, virtual_rate)?;
    out.sample_rate = audio.sample_rate;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, rate: u32, n: usize) -> AudioBuffer {
        let samples = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin() as f32 * 0.5)
            .collect();
        AudioBuffer::new(samples, rate).unwrap()
    }

    /// Naive DFT magnitude at the bin nearest `freq`; used as a spectral oracle.
    pub fn dominant_frequency(audio: &AudioBuffer) -> f64 {
        let n = audio.samples.len();
        let mut best = (0usize, 0.0f64);
        for bin in 1..n / 2 {
            let w = -2.0 * std::f64::consts::PI * bin as f64 / n as f64;
            let (mut re, mut im) = (0.0f64, 0.0f64);
            for (i, &s) in audio.samples.iter().enumerate() {
                let ph = w * i as f64;
                re += s as f64 * ph.cos();
                im += s as f64 * ph.sin();
            }
            let mag = re * re + im * im;
            if mag > best.1 {
                best = (bin, mag);
            }
        }
        best.0 as f64 * audio.sample_rate as f64 / n as f64
    }

    #[test]
    fn identity_when_rates_match() {
        let a = sine(440.0, 16000, 1600);
        let b = resample(&a, 16000).unwrap();
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn downsample_preserves_tone() {
        let a = sine(440.0, 32000, 6400);
        let b = resample(&a, 16000).unwrap();
        let f = dominant_frequency(&b);
        assert!(
            (f - 440.0).abs() < 16000.0 / b.len() as f64 * 1.5,
            "dominant {f} Hz"
        );
    }

    #[test]
    fn length_contract() {
        for (n, src, dst) in [(1000usize, 16000u32, 48000u32), (999, 44100, 16000)] {
            let a = sine(200.0, src, n);
            let b = resample(&a, dst).unwrap();
            let expect = (n as f64 * dst as f64 / src as f64).round() as i64;
            assert!((b.len() as i64 - expect).abs() <= 1);
        }
    }

    #[test]
    fn duration_preserved() {
        let a = sine(300.0, 32000, 32000);
        let b = resample(&a, 16000).unwrap();
        assert!((a.duration_secs() - b.duration_secs()).abs() <= 1.0 / 16000.0);
    }

    #[test]
    fn octave_up_doubles_frequency_and_halves_length() {
        let a = sine(220.0, 16000, 16000);
        let b = pitch_shift_octaves(&a, 1).unwrap();
        assert!((b.len() as i64 - 8000).abs() <= 1);
        assert_eq!(b.sample_rate, 16000);
        let f = dominant_frequency(&b);
        assert!((f - 440.0).abs() < 16000.0 / b.len() as f64 * 1.5, "{f}");
    }

    #[test]
    fn octave_zero_is_identity() {
        let a = sine(220.0, 16000, 4000);
        let b = pitch_shift_octaves(&a, 0).unwrap();
        assert_eq!(a.samples, b.samples);
    }
}
