//! Constant-Q transform on a log-frequency grid.
//!
//! Bin `k` has center frequency `f_base * 2^(k/Q)` and is analyzed with a
//! Hann-windowed complex sinusoid atom whose length scales as `Q * sr / f`,
//! so the quality factor (and therefore bandwidth in octaves) is the same
//! for every bin. A pitch shift by a factor `a` then appears as a
//! translation of `Q * log2(a)` bins.

use std::io::Write;
use std::path::Path;

use super::{AudioBuffer, DspError};
use crate::parallel::for_each_chunk_mut;

/// Slice width consumed by the encoder.
pub const SLICE_BINS: usize = 128;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CqtParams {
    /// Bins per octave (Q).
    pub bins_per_octave: u32,
    /// Frequency of bin 0, Hz.
    pub f_base: f64,
    /// Number of bins.
    pub n_bins: usize,
    /// Hop between frame centers, samples.
    pub hop: usize,
    /// Sample rate the grid is designed for.
    pub sample_rate: u32,
    /// Cap on atom length in samples. Bins whose nominal window would be
    /// longer are analyzed with a wider bandwidth instead; with the default
    /// grid this affects only bins below ~47 Hz.
    pub max_window: usize,
}

impl Default for CqtParams {
    fn default() -> Self {
        Self {
            bins_per_octave: 24,
            f_base: 32.703_195_662_574_83, // C1
            n_bins: 190,
            hop: 512,
            sample_rate: 16000,
            max_window: 8192,
        }
    }
}

impl CqtParams {
    /// Center frequency of bin `k`.
    pub fn bin_freq(&self, k: usize) -> f64 {
        self.f_base * 2f64.powf(k as f64 / self.bins_per_octave as f64)
    }

    /// Nearest (fractional) bin for a frequency.
    pub fn freq_to_bin(&self, f: f64) -> f64 {
        self.bins_per_octave as f64 * (f / self.f_base).log2()
    }

    pub fn validate(&self) -> Result<(), DspError> {
        if self.sample_rate == 0 {
            return Err(DspError::InvalidRate(self.sample_rate));
        }
        let top = self.bin_freq(self.n_bins - 1);
        let nyquist = self.sample_rate as f64 / 2.0;
        if top >= nyquist {
            return Err(DspError::BinAboveNyquist { freq: top, nyquist });
        }
        assert!(self.bins_per_octave > 0 && self.n_bins > 0 && self.hop > 0 && self.f_base > 0.0);
        Ok(())
    }
}

struct Atom {
    re: Vec<f32>,
    im: Vec<f32>,
}

/// Precomputed analysis atoms; build once, reuse across tracks.
pub struct CqtPlan {
    pub params: CqtParams,
    atoms: Vec<Atom>,
    max_len: usize,
}

impl CqtPlan {
    pub fn new(params: CqtParams) -> Result<Self, DspError> {
        params.validate()?;
        let sr = params.sample_rate as f64;
        let mut atoms = Vec::with_capacity(params.n_bins);
        let mut max_len = 0;
        for k in 0..params.n_bins {
            let freq = params.bin_freq(k);
            let nominal = (params.bins_per_octave as f64 * sr / freq).ceil() as usize;
            let len = nominal.min(params.max_window).max(4);
            max_len = max_len.max(len);
            // periodic Hann window, peak-normalized so a unit sinusoid at
            // the bin frequency responds with magnitude ~1
            let mut re = Vec::with_capacity(len);
            let mut im = Vec::with_capacity(len);
            let wsum: f64 = (0..len)
                .map(|n| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos()))
                .sum();
            let scale = 2.0 / wsum;
            for n in 0..len {
                let w = 0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos());
                let ph = 2.0 * std::f64::consts::PI * freq * (n as f64 - len as f64 / 2.0) / sr;
                re.push((w * scale * ph.cos()) as f32);
                im.push((w * scale * ph.sin()) as f32);
            }
            atoms.push(Atom { re, im });
        }
        Ok(Self {
            params,
            atoms,
            max_len,
        })
    }

    /// Longest analysis atom in samples. Inputs shorter than this still
    /// work (the window runs into padding), but the lowest bins see mostly
    /// zeros.
    pub fn min_input_len(&self) -> usize {
        self.max_len
    }

    pub fn compute(&self, audio: &AudioBuffer) -> Result<CqtMatrix, DspError> {
        let p = &self.params;
        if audio.sample_rate != p.sample_rate {
            return Err(DspError::RateMismatch(audio.sample_rate, p.sample_rate));
        }
        let n = audio.samples.len();
        if n == 0 {
            return Err(DspError::EmptyAudio);
        }

        // reflection padding (single reflection, zeros beyond)
        let pad = self.max_len / 2 + 1;
        let mut x = vec![0.0f32; n + 2 * pad];
        x[pad..pad + n].copy_from_slice(&audio.samples);
        for i in 1..=pad {
            if i < n {
                x[pad - i] = audio.samples[i];
            }
            let j = n as isize - 2 - i as isize + 1;
            if j >= 0 {
                x[pad + n + i - 1] = audio.samples[j as usize];
            }
        }

        let n_frames = n / p.hop + 1;
        let n_bins = p.n_bins;
        let mut values = vec![0.0f32; n_frames * n_bins];
        for_each_chunk_mut(&mut values, n_bins, |t, row| {
            let center = pad + t * p.hop;
            for (k, atom) in self.atoms.iter().enumerate() {
                let len = atom.re.len();
                let start = center - len / 2;
                let seg = &x[start..start + len];
                let (re, im) = dot2(seg, &atom.re, &atom.im);
                row[k] = (re * re + im * im).sqrt();
            }
        });
        Ok(CqtMatrix {
            values,
            n_frames,
            params: p.clone(),
        })
    }
}

/// Two dot products in one pass, with lane-split accumulation so the loop
/// vectorizes and the reduction order is fixed.
fn dot2(x: &[f32], a: &[f32], b: &[f32]) -> (f32, f32) {
    const LANES: usize = 8;
    let mut acc_a = [0.0f32; LANES];
    let mut acc_b = [0.0f32; LANES];
    let chunks = x.len() / LANES;
    for c in 0..chunks {
        let o = c * LANES;
        for l in 0..LANES {
            acc_a[l] += x[o + l] * a[o + l];
            acc_b[l] += x[o + l] * b[o + l];
        }
    }
    let (mut ra, mut rb) = (0.0f32, 0.0f32);
    for l in 0..LANES {
        ra += acc_a[l];
        rb += acc_b[l];
    }
    for i in chunks * LANES..x.len() {
        ra += x[i] * a[i];
        rb += x[i] * b[i];
    }
    (ra, rb)
}

/// Nonnegative magnitude spectrogram, `n_frames x n_bins`, row-major.
#[derive(Debug, Clone)]
pub struct CqtMatrix {
    pub values: Vec<f32>,
    pub n_frames: usize,
    pub params: CqtParams,
}

impl CqtMatrix {
    pub fn frame(&self, t: usize) -> &[f32] {
        let f = self.params.n_bins;
        &self.values[t * f..(t + 1) * f]
    }

    pub fn argmax_bin(&self, t: usize) -> usize {
        let row = self.frame(t);
        let mut best = 0;
        for (k, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = k;
            }
        }
        best
    }

    /// Debug export: one row per frame, 9 significant digits.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<(), DspError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        for t in 0..self.n_frames {
            let row: Vec<String> = self.frame(t).iter().map(|v| format!("{v:.8e}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// A 128-bin view of one frame, tagged with its bin offset.
#[derive(Debug, Clone, PartialEq)]
pub struct CqtSlice {
    pub values: Vec<f32>,
    pub offset: usize,
    pub frame: usize,
}

pub fn slice_cqt(matrix: &CqtMatrix, t: usize, k: usize) -> Result<CqtSlice, DspError> {
    if t >= matrix.n_frames || k + SLICE_BINS > matrix.params.n_bins {
        return Err(DspError::SliceOutOfRange { t, k });
    }
    let row = matrix.frame(t);
    Ok(CqtSlice {
        values: row[k..k + SLICE_BINS].to_vec(),
        offset: k,
        frame: t,
    })
}

/// One-shot convenience; builds a plan internally.
pub fn compute_cqt(audio: &AudioBuffer, params: &CqtParams) -> Result<CqtMatrix, DspError> {
    CqtPlan::new(params.clone())?.compute(audio)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, rate: u32, n: usize, amp: f64) -> AudioBuffer {
        let samples = (0..n)
            .map(|i| ((2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin() * amp) as f32)
            .collect();
        AudioBuffer::new(samples, rate).unwrap()
    }

    fn interior_frames(m: &CqtMatrix) -> std::ops::Range<usize> {
        // skip frames whose longest in-band atoms touch the padding
        let edge = m.params.max_window / m.params.hop / 2 + 1;
        edge..m.n_frames.saturating_sub(edge)
    }

    #[test]
    fn sine_at_bin_48_peaks_at_bin_48() {
        let p = CqtParams::default();
        let f = p.bin_freq(48); // f_base * 4 ~ 130.8 Hz
        let a = sine(f, 16000, 32000, 0.8);
        let m = compute_cqt(&a, &p).unwrap();
        let r = interior_frames(&m);
        assert!(!r.is_empty());
        for t in r {
            assert_eq!(m.argmax_bin(t), 48, "frame {t}");
        }
    }

    #[test]
    fn unit_sinusoid_peak_magnitude_near_one() {
        let p = CqtParams::default();
        for k in [48usize, 72, 120] {
            let a = sine(p.bin_freq(k), 16000, 32000, 1.0);
            let m = compute_cqt(&a, &p).unwrap();
            for t in interior_frames(&m) {
                let v = m.frame(t)[k];
                assert!((v - 1.0).abs() < 0.05, "bin {k} frame {t}: {v}");
            }
        }
    }

    #[test]
    fn silence_gives_tiny_magnitudes() {
        let p = CqtParams::default();
        let a = AudioBuffer::new(vec![0.0; 16000], 16000).unwrap();
        let m = compute_cqt(&a, &p).unwrap();
        assert!(m.values.iter().all(|&v| v < 1e-6));
    }

    #[test]
    fn octave_pair_argmax_differs_by_q_bins() {
        let p = CqtParams::default();
        let f = 220.0;
        let a = sine(f, 16000, 32000, 0.8);
        let b = sine(2.0 * f, 16000, 32000, 0.8);
        let ma = compute_cqt(&a, &p).unwrap();
        let mb = compute_cqt(&b, &p).unwrap();
        for t in interior_frames(&ma) {
            assert_eq!(
                mb.argmax_bin(t) as i64 - ma.argmax_bin(t) as i64,
                p.bins_per_octave as i64
            );
        }
    }

    #[test]
    fn deterministic() {
        let p = CqtParams::default();
        let a = sine(200.0, 16000, 16000, 0.7);
        let m1 = compute_cqt(&a, &p).unwrap();
        let m2 = compute_cqt(&a, &p).unwrap();
        assert_eq!(m1.values, m2.values);
    }

    #[test]
    fn magnitudes_scale_linearly_with_amplitude() {
        let p = CqtParams::default();
        let a = sine(330.0, 16000, 16000, 0.25);
        let mut doubled = a.clone();
        for s in &mut doubled.samples {
            *s *= 2.0;
        }
        let m1 = compute_cqt(&a, &p).unwrap();
        let m2 = compute_cqt(&doubled, &p).unwrap();
        for (x, y) in m1.values.iter().zip(&m2.values) {
            assert!((2.0 * x - y).abs() <= 1e-4 * y.abs().max(1e-6));
        }
    }

    #[test]
    fn slice_bounds() {
        let p = CqtParams::default();
        let a = sine(200.0, 16000, 16000, 0.5);
        let m = compute_cqt(&a, &p).unwrap();
        let s0 = slice_cqt(&m, 0, 0).unwrap();
        assert_eq!(s0.values.len(), SLICE_BINS);
        assert_eq!(s0.values, m.frame(0)[0..128].to_vec());
        let last = slice_cqt(&m, 0, 62).unwrap(); // 62 + 128 = 190
        assert_eq!(last.offset, 62);
        assert!(matches!(
            slice_cqt(&m, 0, 63),
            Err(DspError::SliceOutOfRange { .. })
        ));
        assert!(matches!(
            slice_cqt(&m, m.n_frames, 0),
            Err(DspError::SliceOutOfRange { .. })
        ));
    }

    #[test]
    fn short_audio_still_analyzes() {
        // one hop of a 1 kHz tone: a single frame whose mid bins still
        // peak near the tone even though low-bin windows overhang
        let p = CqtParams::default();
        let a = sine(1000.0, 16000, 512, 0.5);
        let m = compute_cqt(&a, &p).unwrap();
        assert_eq!(m.n_frames, 2);
        let expect = p.freq_to_bin(1000.0).round() as usize;
        assert!((m.argmax_bin(0) as i64 - expect as i64).abs() <= 1);
    }

    #[test]
    fn top_bin_above_nyquist_rejected() {
        let p = CqtParams {
            sample_rate: 8000,
            ..CqtParams::default()
        };
        assert!(matches!(
            p.validate(),
            Err(DspError::BinAboveNyquist { .. })
        ));
    }

    #[test]
    fn frame_count_contract() {
        let p = CqtParams::default();
        let a = sine(200.0, 16000, 16000, 0.5);
        let m = compute_cqt(&a, &p).unwrap();
        assert_eq!(m.n_frames, 16000 / 512 + 1);
    }
}
