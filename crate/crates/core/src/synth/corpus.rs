//! Desk-scale synthetic training/eval corpus: items alternating voiced
//! harmonic segments (slow vibrato, occasional linear glides) with unvoiced
//! pink-noise segments, labeled per CQT frame.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{pink_noise, SynthError};
use crate::dsp::AudioBuffer;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub n_items: usize,
    /// Item length in seconds (each item is trimmed to a whole number of hops).
    pub item_secs: f64,
    pub f_lo: f64,
    pub f_hi: f64,
    /// Fraction of segments that are unvoiced noise.
    pub unvoiced_fraction: f64,
    /// Max vibrato depth, semitones (peak).
    pub vibrato_depth: f64,
    /// Voiced segment duration range, seconds.
    pub voiced_secs: (f64, f64),
    /// Unvoiced segment duration range, seconds. Kept long relative to the
    /// CQT atoms (up to 0.5 s at the lowest bins) so interior noise frames
    /// are not smeared with energy from neighboring tones.
    pub unvoiced_secs: (f64, f64),
    /// Peak amplitude of unvoiced noise segments.
    pub noise_peak: f64,
    /// Probability that a voiced segment draws flat overtone amplitudes
    /// (a_k ~ a_0*U(0,1), overtones can rival the fundamental) instead of
    /// the geometric rolloff. Without these the encoder maps
    /// overtone-heavy harmonic signals to a biased pitch.
    pub flat_timbre_prob: f64,
    /// Vibrato rate range, Hz.
    pub vibrato_rate: (f64, f64),
    /// Max linear glide over a segment, semitones.
    pub glide_semitones: f64,
    /// Harmonic count K drawn uniformly from this inclusive range.
    pub harmonics: (usize, usize),
    pub hop: usize,
    pub sample_rate: u32,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_items: 200,
            item_secs: 3.0,
            f_lo: 110.0, // A2
            f_hi: 880.0, // A5
            unvoiced_fraction: 0.2,
            vibrato_depth: 0.2,
            voiced_secs: (0.4, 0.9),
            unvoiced_secs: (0.9, 1.8),
            noise_peak: 0.6,
            flat_timbre_prob: 0.5,
            vibrato_rate: (4.0, 7.0),
            glide_semitones: 2.0,
            harmonics: (1, 6),
            hop: 512,
            sample_rate: 16000,
        }
    }
}

/// One synthetic track plus its per-frame ground truth (`None` = unvoiced).
#[derive(Debug, Clone)]
pub struct CorpusItem {
    pub audio: AudioBuffer,
    pub labels: Vec<Option<f64>>,
    pub hop: usize,
}

struct Segment {
    start: usize,
    end: usize,
    voiced: bool,
    /// Per-sample f0 in Hz for voiced segments.
    f0: Vec<f64>,
}

fn render_voiced<R: Rng>(rng: &mut R, cfg: &CorpusConfig, n: usize) -> (Vec<f32>, Vec<f64>) {
    let sr = cfg.sample_rate as f64;
    let base = cfg.f_lo * (cfg.f_hi / cfg.f_lo).powf(rng.gen_range(0.0..1.0));
    let k = rng.gen_range(cfg.harmonics.0..=cfg.harmonics.1);
    let a0: f64 = rng.gen_range(0.3..1.0);
    let mut amps = vec![a0];
    let mut phases = vec![rng.gen_range(0.0..2.0 * std::f64::consts::PI)];
    let flat = rng.gen_bool(cfg.flat_timbre_prob);
    for j in 1..=k {
        // flat profiles let overtones rival the fundamental; rolloff
        // profiles keep it dominant
        let rolloff = if flat { 1.0 } else { 0.8f64.powi(j as i32) };
        amps.push(a0 * rng.gen_range(0.0..1.0) * rolloff);
        phases.push(rng.gen_range(0.0..2.0 * std::f64::consts::PI));
    }
    let vib_depth = rng.gen_range(0.0..cfg.vibrato_depth.max(1e-9));
    let vib_rate = rng.gen_range(cfg.vibrato_rate.0..cfg.vibrato_rate.1);
    let vib_phase = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
    let glide = if rng.gen_bool(0.5) {
        rng.gen_range(-cfg.glide_semitones..cfg.glide_semitones)
    } else {
        0.0
    };
    // keep the glide inside the pitch range
    let max_up = 12.0 * (cfg.f_hi / base).log2();
    let max_down = -12.0 * (base / cfg.f_lo).log2();
    let glide = glide.clamp(max_down, max_up);

    let mut f0 = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / sr;
        let dur = n as f64 / sr;
        let st = glide * (t / dur)
            + vib_depth * (2.0 * std::f64::consts::PI * vib_rate * t + vib_phase).sin();
        f0.push(base * 2f64.powf(st / 12.0));
    }

    let mut samples = vec![0.0f32; n];
    let mut phase = phases.clone();
    for (i, s) in samples.iter_mut().enumerate() {
        let mut v = 0.0f64;
        for (j, &a) in amps.iter().enumerate() {
            let freq = (j as f64 + 1.0) * f0[i];
            if freq < sr / 2.0 {
                v += a * phase[j].sin();
            }
            phase[j] += 2.0 * std::f64::consts::PI * freq / sr;
        }
        *s = v as f32;
    }
    let peak = samples.iter().fold(0.0f32, |m, &s| m.max(s.abs()));
    let scale = 0.8 / peak.max(1e-9);
    for s in &mut samples {
        *s *= scale;
    }
    (samples, f0)
}

fn apply_fade(seg: &mut [f32], fade: usize) {
    let fade = fade.min(seg.len() / 2);
    for i in 0..fade {
        let g = i as f32 / fade as f32;
        seg[i] *= g;
        let n = seg.len();
        seg[n - 1 - i] *= g;
    }
}

fn gen_item(cfg: &CorpusConfig, rng: &mut ChaCha8Rng) -> CorpusItem {
    let sr = cfg.sample_rate as f64;
    let total = ((cfg.item_secs * sr) as usize / cfg.hop) * cfg.hop;
    let mut samples = vec![0.0f32; total];
    let mut segments: Vec<Segment> = Vec::new();
    let mut pos = 0usize;
    while pos < total {
        let voiced = !rng.gen_bool(cfg.unvoiced_fraction);
        let dur_secs = if voiced {
            rng.gen_range(cfg.voiced_secs.0..cfg.voiced_secs.1)
        } else {
            rng.gen_range(cfg.unvoiced_secs.0..cfg.unvoiced_secs.1)
        };
        let n = ((dur_secs * sr) as usize).min(total - pos).max(cfg.hop);
        let n = n.min(total - pos);
        if n == 0 {
            break;
        }
        let (mut seg, f0) = if voiced {
            render_voiced(rng, cfg, n)
        } else {
            let mut noise = pink_noise(rng, n);
            let peak = noise.iter().fold(0.0f32, |m, &s| m.max(s.abs()));
            let scale = cfg.noise_peak as f32 / peak.max(1e-9);
            for s in &mut noise {
                *s *= scale;
            }
            (noise, Vec::new())
        };
        apply_fade(&mut seg, (0.01 * sr) as usize);
        samples[pos..pos + n].copy_from_slice(&seg);
        segments.push(Segment {
            start: pos,
            end: pos + n,
            voiced,
            f0,
        });
        pos += n;
    }

    // per-frame labels: frame t is centered at t*hop; voiced only when the
    // center sits a full hop inside a voiced segment (1-frame guard band)
    let n_frames = total / cfg.hop + 1;
    let labels = (0..n_frames)
        .map(|t| {
            let c = t * cfg.hop;
            segments.iter().find_map(|s| {
                if s.voiced && c >= s.start + cfg.hop && c + cfg.hop <= s.end {
                    Some(s.f0[c - s.start])
                } else {
                    None
                }
            })
        })
        .collect();

    CorpusItem {
        audio: AudioBuffer::new(samples, cfg.sample_rate).expect("non-empty item"),
        labels,
        hop: cfg.hop,
    }
}

/// Generates the corpus; each item draws its own seeded sub-generator so
/// output is independent of evaluation order.
pub fn gen_training_corpus(cfg: &CorpusConfig, seed: u64) -> Result<Vec<CorpusItem>, SynthError> {
    if cfg.n_items == 0 || cfg.item_secs <= 0.0 {
        return Err(SynthError::EmptyConfig);
    }
    if !(cfg.f_lo > 0.0 && cfg.f_lo < cfg.f_hi) {
        return Err(SynthError::InvalidRange(cfg.f_lo, cfg.f_hi));
    }
    Ok(crate::parallel::map_indices(cfg.n_items, |i| {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ (0x51ce_5eedu64 + i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        gen_item(cfg, &mut rng)
    }))
}

/// Writes one WAV per item plus a `time_sec,f0_hz` sidecar CSV (empty f0
/// field for unvoiced frames).
pub fn save_corpus<P: AsRef<Path>>(dir: P, items: &[CorpusItem]) -> Result<(), SynthError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for (i, item) in items.iter().enumerate() {
        let stem = format!("item_{i:04}");
        crate::dsp::write_wav(dir.join(format!("{stem}.wav")), &item.audio)?;
        let mut csv = String::from("time_sec,f0_hz\n");
        for (t, lab) in item.labels.iter().enumerate() {
            let time = t as f64 * item.hop as f64 / item.audio.sample_rate as f64;
            match lab {
                Some(f0) => csv.push_str(&format!("{time:.6},{f0:.6}\n")),
                None => csv.push_str(&format!("{time:.6},\n")),
            }
        }
        std::fs::write(dir.join(format!("{stem}.csv")), csv)?;
    }
    Ok(())
}

/// Loads a corpus saved by [`save_corpus`] (any `*.wav` with a matching
/// `*.csv` sidecar, sorted by name).
pub fn load_corpus<P: AsRef<Path>>(dir: P) -> Result<Vec<CorpusItem>, SynthError> {
    let dir = dir.as_ref();
    let mut wavs: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "wav").unwrap_or(false))
        .collect();
    wavs.sort();
    if wavs.is_empty() {
        return Err(SynthError::EmptyConfig);
    }
    let mut items = Vec::with_capacity(wavs.len());
    for wav in wavs {
        let audio = crate::dsp::load_wav(&wav)?;
        let csv_path = wav.with_extension("csv");
        let text = std::fs::read_to_string(&csv_path)?;
        let mut labels = Vec::new();
        let mut times = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            if ln == 0 && line.starts_with("time_sec") {
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let (time, f0) = line.split_once(',').ok_or_else(|| SynthError::BadLabelFile {
                path: csv_path.display().to_string(),
                msg: format!("line {}: expected time_sec,f0_hz", ln + 1),
            })?;
            let time: f64 = time.trim().parse().map_err(|_| SynthError::BadLabelFile {
                path: csv_path.display().to_string(),
                msg: format!("line {}: bad time", ln + 1),
            })?;
            times.push(time);
            let f0 = f0.trim();
            labels.push(if f0.is_empty() {
                None
            } else {
                Some(f0.parse().map_err(|_| SynthError::BadLabelFile {
                    path: csv_path.display().to_string(),
                    msg: format!("line {}: bad f0", ln + 1),
                })?)
            });
        }
        let hop = if times.len() >= 2 {
            ((times[1] - times[0]) * audio.sample_rate as f64).round() as usize
        } else {
            512
        };
        items.push(CorpusItem { audio, labels, hop });
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{compute_cqt, CqtParams};

    fn small_cfg() -> CorpusConfig {
        CorpusConfig {
            n_items: 3,
            item_secs: 1.2,
            ..Default::default()
        }
    }

    #[test]
    fn unvoiced_fraction_zero_all_voiced_interior() {
        let cfg = CorpusConfig {
            unvoiced_fraction: 0.0,
            ..small_cfg()
        };
        let items = gen_training_corpus(&cfg, 9).unwrap();
        for item in &items {
            // guard bands at segment boundaries may still be unvoiced,
            // but a large majority of frames must be voiced
            let voiced = item.labels.iter().filter(|l| l.is_some()).count();
            assert!(voiced * 10 >= item.labels.len() * 6);
        }
    }

    #[test]
    fn labels_in_pitch_range() {
        let items = gen_training_corpus(&small_cfg(), 21).unwrap();
        for item in &items {
            for f0 in item.labels.iter().flatten() {
                assert!(
                    (110.0 / 2f64.powf(0.5 / 12.0)..880.0 * 2f64.powf(0.5 / 12.0))
                        .contains(f0),
                    "label {f0} outside range"
                );
            }
        }
    }

    #[test]
    fn label_count_matches_cqt_frames() {
        let items = gen_training_corpus(&small_cfg(), 4).unwrap();
        let p = CqtParams::default();
        for item in &items {
            let m = compute_cqt(&item.audio, &p).unwrap();
            assert_eq!(item.labels.len(), m.n_frames);
        }
    }

    #[test]
    fn labels_align_with_cqt_argmax() {
        // rolloff-only timbres: the argmax oracle assumes the fundamental
        // carries the most energy
        let cfg = CorpusConfig {
            n_items: 4,
            item_secs: 2.0,
            flat_timbre_prob: 0.0,
            ..Default::default()
        };
        let items = gen_training_corpus(&cfg, 33).unwrap();
        let p = CqtParams::default();
        for (i, item) in items.iter().enumerate() {
            let m = compute_cqt(&item.audio, &p).unwrap();
            let mut voiced = 0usize;
            let mut hits = 0usize;
            for (t, lab) in item.labels.iter().enumerate() {
                if let Some(f0) = lab {
                    voiced += 1;
                    let expect = p.freq_to_bin(*f0).round() as i64;
                    let got = m.argmax_bin(t) as i64;
                    if (got - expect).abs() <= 1 {
                        hits += 1;
                    }
                }
            }
            assert!(voiced > 0);
            assert!(
                hits as f64 >= 0.95 * voiced as f64,
                "item {i}: {hits}/{voiced} frames aligned"
            );
        }
    }

    #[test]
    fn deterministic_and_bounded() {
        let a = gen_training_corpus(&small_cfg(), 77).unwrap();
        let b = gen_training_corpus(&small_cfg(), 77).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.audio.samples, y.audio.samples);
        }
        for item in &a {
            assert!(item.audio.peak() <= 0.81);
        }
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let items = gen_training_corpus(&small_cfg(), 5).unwrap();
        save_corpus(dir.path(), &items).unwrap();
        let loaded = load_corpus(dir.path()).unwrap();
        assert_eq!(items.len(), loaded.len());
        for (a, b) in items.iter().zip(&loaded) {
            assert_eq!(a.labels.len(), b.labels.len());
            assert_eq!(a.hop, b.hop);
            for (x, y) in a.labels.iter().zip(&b.labels) {
                match (x, y) {
                    (Some(u), Some(v)) => assert!((u - v).abs() < 1e-4),
                    (None, None) => {}
                    _ => panic!("voicing flipped in roundtrip"),
                }
            }
        }
    }
}
