//! Evaluation: ground-truth ingestion, track resampling, raw pitch
//! accuracy, voicing recall at a fixed false-alarm rate, ROC, and an
//! error-by-frequency breakdown.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}:{line}: malformed row: {msg}")]
    MalformedRow {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}:{line}: negative pitch")]
    NegativePitch { path: String, line: usize },
    #[error("{path}: nonuniform timestamps (expected hop {expected:.6}s, saw {saw:.6}s at line {line})")]
    NonuniformHop {
        path: String,
        expected: f64,
        saw: f64,
        line: usize,
    },
    #[error("tracks disagree: {0}")]
    TrackMismatch(String),
    #[error("no voiced frames in ground truth")]
    NoVoicedFrames,
    #[error("no unvoiced frames in ground truth")]
    NoUnvoicedFrames,
    #[error("estimate track carries no confidence values")]
    NoConfidence,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Per-frame pitch in semitones (`None` = unvoiced) on a uniform time
/// grid, with optional per-frame confidence.
#[derive(Debug, Clone)]
pub struct PitchTrack {
    pub hop_secs: f64,
    pub pitch: Vec<Option<f64>>,
    pub confidence: Option<Vec<f64>>,
}

impl PitchTrack {
    pub fn len(&self) -> usize {
        self.pitch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pitch.is_empty()
    }
}

/// Builds a ground-truth track from per-frame f0 labels in Hz
/// (`None`/0 = unvoiced).
pub fn track_from_labels(labels: &[Option<f64>], hop_secs: f64, f_base: f64) -> PitchTrack {
    PitchTrack {
        hop_secs,
        pitch: labels
            .iter()
            .map(|l| l.filter(|&f| f > 0.0).map(|f| 12.0 * (f / f_base).log2()))
            .collect(),
        confidence: None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruthFormat {
    /// Rows `time_sec,pitch_semitones`.
    SemitoneCsv,
    /// Rows `time_sec,f0_hz`; converted via 12*log2(f/f_base).
    HzCsv,
}

/// Parses a ground-truth CSV. Empty or zero pitch fields mean unvoiced;
/// timestamps must advance by `label_hop` uniformly (0.1% tolerance).
pub fn load_ground_truth(
    path: &Path,
    format: TruthFormat,
    label_hop: f64,
    f_base: f64,
) -> Result<PitchTrack, EvalError> {
    let text = std::fs::read_to_string(path)?;
    let pname = path.display().to_string();
    let mut pitch = Vec::new();
    let mut row_idx = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        // skip a header row
        if lineno == 0 && line.chars().any(|c| c.is_ascii_alphabetic()) {
            continue;
        }
        let mut parts = line.splitn(2, ',');
        let t_str = parts.next().unwrap_or("");
        let v_str = parts.next().unwrap_or("").trim();
        let t: f64 = t_str.trim().parse().map_err(|_| EvalError::MalformedRow {
            path: pname.clone(),
            line: lineno + 1,
            msg: format!("bad timestamp {t_str:?}"),
        })?;
        let expected = row_idx as f64 * label_hop;
        if (t - expected).abs() > 1e-3 * label_hop.max(1e-9) + 1e-9 {
            return Err(EvalError::NonuniformHop {
                path: pname,
                expected: label_hop,
                saw: t - (row_idx.saturating_sub(1)) as f64 * label_hop,
                line: lineno + 1,
            });
        }
        let value = if v_str.is_empty() {
            None
        } else {
            let v: f64 = v_str.parse().map_err(|_| EvalError::MalformedRow {
                path: pname.clone(),
                line: lineno + 1,
                msg: format!("bad pitch {v_str:?}"),
            })?;
            if v < 0.0 {
                return Err(EvalError::NegativePitch {
                    path: pname,
                    line: lineno + 1,
                });
            }
            if v == 0.0 {
                None
            } else {
                Some(match format {
                    TruthFormat::SemitoneCsv => v,
                    TruthFormat::HzCsv => 12.0 * (v / f_base).log2(),
                })
            }
        };
        pitch.push(value);
        row_idx += 1;
    }
    Ok(PitchTrack {
        hop_secs: label_hop,
        pitch,
        confidence: None,
    })
}

/// Nearest-neighbor resampling onto a new uniform grid. A target frame is
/// unvoiced exactly when its nearest source frame is.
pub fn resample_track(track: &PitchTrack, target_hop: f64) -> PitchTrack {
    assert!(target_hop > 0.0 && track.hop_secs > 0.0);
    if (target_hop - track.hop_secs).abs() < 1e-12 {
        return track.clone();
    }
    let n_src = track.len();
    let duration = (n_src.saturating_sub(1)) as f64 * track.hop_secs;
    let n_out = (duration / target_hop).floor() as usize + 1;
    let nearest = |t_out: usize| -> usize {
        let t = t_out as f64 * target_hop;
        ((t / track.hop_secs).round() as usize).min(n_src - 1)
    };
    PitchTrack {
        hop_secs: target_hop,
        pitch: (0..n_out).map(|t| track.pitch[nearest(t)]).collect(),
        confidence: track
            .confidence
            .as_ref()
            .map(|c| (0..n_out).map(|t| c[nearest(t)]).collect()),
    }
}

fn check_aligned(estimate: &PitchTrack, truth: &PitchTrack) -> Result<usize, EvalError> {
    if (estimate.hop_secs - truth.hop_secs).abs() > 1e-9 {
        return Err(EvalError::TrackMismatch(format!(
            "hop {} vs {}",
            estimate.hop_secs, truth.hop_secs
        )));
    }
    let (ne, nt) = (estimate.len(), truth.len());
    if ne.abs_diff(nt) > 1 {
        return Err(EvalError::TrackMismatch(format!(
            "length {ne} vs {nt}"
        )));
    }
    Ok(ne.min(nt))
}

/// Raw pitch accuracy: percent of truth-voiced frames with absolute error
/// strictly under 0.5 semitones. Estimate voicing is ignored; a missing
/// estimate pitch counts as a miss.
pub fn rpa(estimate: &PitchTrack, truth: &PitchTrack) -> Result<f64, EvalError> {
    let n = check_aligned(estimate, truth)?;
    let mut voiced = 0usize;
    let mut hit = 0usize;
    for t in 0..n {
        let Some(p_true) = truth.pitch[t] else { continue };
        voiced += 1;
        if let Some(p_est) = estimate.pitch[t] {
            if (p_est - p_true).abs() < 0.5 {
                hit += 1;
            }
        }
    }
    if voiced == 0 {
        return Err(EvalError::NoVoicedFrames);
    }
    Ok(100.0 * hit as f64 / voiced as f64)
}

/// Voicing ROC: (false-alarm rate, recall) per confidence threshold,
/// sorted by FA, always anchored at (0,0) and (1,1).
pub fn roc(estimate: &PitchTrack, truth: &PitchTrack) -> Result<Vec<(f64, f64)>, EvalError> {
    let n = check_aligned(estimate, truth)?;
    let conf = estimate.confidence.as_ref().ok_or(EvalError::NoConfidence)?;
    let n_voiced = truth.pitch[..n].iter().filter(|p| p.is_some()).count();
    let n_unvoiced = n - n_voiced;
    if n_voiced == 0 {
        return Err(EvalError::NoVoicedFrames);
    }
    if n_unvoiced == 0 {
        return Err(EvalError::NoUnvoicedFrames);
    }
    let mut thresholds: Vec<f64> = conf[..n].to_vec();
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    thresholds.dedup();
    let mut points = vec![(0.0, 0.0)];
    for &th in thresholds.iter().rev() {
        let mut fa = 0usize;
        let mut tp = 0usize;
        for t in 0..n {
            if conf[t] >= th {
                if truth.pitch[t].is_some() {
                    tp += 1;
                } else {
                    fa += 1;
                }
            }
        }
        points.push((fa as f64 / n_unvoiced as f64, tp as f64 / n_voiced as f64));
    }
    if points.last() != Some(&(1.0, 1.0)) {
        points.push((1.0, 1.0));
    }
    Ok(points)
}

/// Recall at the given voicing false-alarm rate, linearly interpolated
/// between adjacent sweep points, as a percentage.
pub fn vrr_at_fa(
    estimate: &PitchTrack,
    truth: &PitchTrack,
    fa_target: f64,
) -> Result<f64, EvalError> {
    let points = roc(estimate, truth)?;
    for w in points.windows(2) {
        let ((fa0, r0), (fa1, r1)) = (w[0], w[1]);
        if fa_target <= fa1 {
            let r = if fa1 == fa0 {
                r1.max(r0)
            } else {
                r0 + (r1 - r0) * (fa_target - fa0) / (fa1 - fa0)
            };
            return Ok(100.0 * r);
        }
    }
    Ok(100.0 * points.last().unwrap().1)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FreqBin {
    pub lo_semitones: f64,
    pub hi_semitones: f64,
    pub count: usize,
    pub mean_abs_error: f64,
}

/// Mean absolute voiced error bucketed by ground-truth pitch.
pub fn error_by_frequency(
    estimate: &PitchTrack,
    truth: &PitchTrack,
    n_bins: usize,
) -> Result<Vec<FreqBin>, EvalError> {
    assert!(n_bins > 0);
    let n = check_aligned(estimate, truth)?;
    let voiced: Vec<(f64, f64)> = (0..n)
        .filter_map(|t| match (truth.pitch[t], estimate.pitch[t]) {
            (Some(p), Some(e)) => Some((p, (e - p).abs())),
            _ => None,
        })
        .collect();
    if voiced.is_empty() {
        return Err(EvalError::NoVoicedFrames);
    }
    let lo = voiced.iter().map(|v| v.0).fold(f64::INFINITY, f64::min);
    let hi = voiced.iter().map(|v| v.0).fold(f64::NEG_INFINITY, f64::max);
    let width = ((hi - lo) / n_bins as f64).max(1e-9);
    let mut bins: Vec<FreqBin> = (0..n_bins)
        .map(|i| FreqBin {
            lo_semitones: lo + i as f64 * width,
            hi_semitones: lo + (i + 1) as f64 * width,
            count: 0,
            mean_abs_error: 0.0,
        })
        .collect();
    for (p, e) in voiced {
        let i = (((p - lo) / width) as usize).min(n_bins - 1);
        bins[i].count += 1;
        bins[i].mean_abs_error += e;
    }
    for b in bins.iter_mut() {
        if b.count > 0 {
            b.mean_abs_error /= b.count as f64;
        }
    }
    Ok(bins)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub rpa: f64,
    pub vrr_at_10fa: Option<f64>,
    pub n_voiced: usize,
    pub n_total: usize,
    pub roc: Vec<(f64, f64)>,
    pub error_by_freq: Vec<FreqBin>,
}

impl EvalReport {
    /// RPA always; voicing metrics when the truth has unvoiced frames and
    /// the estimate carries confidences.
    pub fn compute(estimate: &PitchTrack, truth: &PitchTrack) -> Result<Self, EvalError> {
        let n = check_aligned(estimate, truth)?;
        let rpa_v = rpa(estimate, truth)?;
        let (vrr, roc_pts) = match roc(estimate, truth) {
            Ok(pts) => (Some(vrr_at_fa(estimate, truth, 0.10)?), pts),
            Err(EvalError::NoUnvoicedFrames | EvalError::NoConfidence) => (None, Vec::new()),
            Err(e) => return Err(e),
        };
        Ok(Self {
            rpa: rpa_v,
            vrr_at_10fa: vrr,
            n_voiced: truth.pitch[..n].iter().filter(|p| p.is_some()).count(),
            n_total: n,
            roc: roc_pts,
            error_by_freq: error_by_frequency(estimate, truth, 10)?,
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<(), EvalError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn write_text(&self, path: &Path) -> Result<(), EvalError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("{:<22}{:>10.2}\n", "RPA (%)", self.rpa));
        match self.vrr_at_10fa {
            Some(v) => s.push_str(&format!("{:<22}{:>10.2}\n", "VRR @ 10% FA (%)", v)),
            None => s.push_str(&format!("{:<22}{:>10}\n", "VRR @ 10% FA (%)", "n/a")),
        }
        s.push_str(&format!("{:<22}{:>10}\n", "voiced frames", self.n_voiced));
        s.push_str(&format!("{:<22}{:>10}\n", "total frames", self.n_total));
        s
    }

    pub fn write_roc_csv(&self, path: &Path) -> Result<(), EvalError> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "fa_rate,recall")?;
        for (fa, r) in &self.roc {
            writeln!(f, "{fa:.6},{r:.6}")?;
        }
        Ok(())
    }

    pub fn write_error_csv(&self, path: &Path) -> Result<(), EvalError> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "lo_semitones,hi_semitones,count,mean_abs_error")?;
        for b in &self.error_by_freq {
            writeln!(
                f,
                "{:.4},{:.4},{},{:.6}",
                b.lo_semitones, b.hi_semitones, b.count, b.mean_abs_error
            )?;
        }
        Ok(())
    }
}
