//! Frame-level inference: one slice per CQT frame at the fixed offset
//! k*, batched through the encoder in infer mode.

use std::io::Write as _;
use std::path::Path;

use crate::calib::AffineCalibration;
use crate::dsp::{compute_cqt, AudioBuffer, DspError};
use crate::nn::Tape;

use super::net::slices_to_input;
use super::{ModelError, SpiceConfig, SpiceModel};

#[derive(Debug, Clone, Copy)]
pub struct FrameEstimate {
    pub time_sec: f64,
    pub y: f64,
    pub confidence: f64,
    pub pitch_semitones: Option<f64>,
    pub pitch_hz: Option<f64>,
}

/// Runs the encoder over every frame of `audio`. Pitch fields are present
/// iff a calibration is supplied.
pub fn infer(
    audio: &AudioBuffer,
    model: &mut SpiceModel<f32>,
    cfg: &SpiceConfig,
    calib: Option<&AffineCalibration>,
) -> Result<Vec<FrameEstimate>, ModelError> {
    let cqt = compute_cqt(audio, &cfg.cqt)?;
    if cqt.n_frames == 0 {
        return Err(ModelError::Dsp(DspError::EmptyAudio));
    }
    let k = cfg.k_star();
    let hop_secs = cfg.cqt.hop as f64 / cfg.cqt.sample_rate as f64;

    // batch in blocks so tape memory stays bounded on long tracks
    const BLOCK: usize = 256;
    let mut out = Vec::with_capacity(cqt.n_frames);
    let mut t0 = 0;
    while t0 < cqt.n_frames {
        let t1 = (t0 + BLOCK).min(cqt.n_frames);
        let rows: Vec<&[f32]> = (t0..t1)
            .map(|t| &cqt.frame(t)[k..k + crate::dsp::SLICE_BINS])
            .collect();
        let mut tape: Tape<f32> = Tape::new();
        let x = slices_to_input(&mut tape, &rows);
        let (enc, _) = model.encoder.forward(&mut tape, x, false);
        let ys = tape.data(enc.y);
        let cs = tape.data(enc.c);
        for (i, t) in (t0..t1).enumerate() {
            let y = ys[i] as f64;
            let (p, f) = match calib {
                Some(cal) => {
                    let p = cal.predict_semitones(y);
                    (Some(p), Some(cal.semitones_to_hz(p)))
                }
                None => (None, None),
            };
            out.push(FrameEstimate {
                time_sec: t as f64 * hop_secs,
                y,
                confidence: cs[i] as f64,
                pitch_semitones: p,
                pitch_hz: f,
            });
        }
        t0 = t1;
    }
    Ok(out)
}

/// Repackages calibrated estimates as an evaluation track. Every frame is
/// reported as pitched; voicing decisions are left to the confidence
/// threshold sweep in the evaluator.
pub fn estimates_to_track(frames: &[FrameEstimate], hop_secs: f64) -> crate::eval::PitchTrack {
    crate::eval::PitchTrack {
        hop_secs,
        pitch: frames.iter().map(|f| f.pitch_semitones).collect(),
        confidence: Some(frames.iter().map(|f| f.confidence).collect()),
    }
}

/// Pooled evaluation of a model over a subset of corpus items, plus the
/// raw (y, log2 f0) pairs behind it for linearity checks.
pub struct CorpusEvalReport {
    pub report: crate::eval::EvalReport,
    /// One (uncalibrated y, log2 f0_hz) pair per truth-voiced frame.
    pub pairs: Vec<(f64, f64)>,
}

/// Runs calibrated inference over `idx` into one pooled frame set and
/// scores it against the items' own labels.
pub fn evaluate_corpus_items(
    model: &mut SpiceModel<f32>,
    cfg: &SpiceConfig,
    cal: &AffineCalibration,
    items: &[crate::synth::CorpusItem],
    idx: &[usize],
) -> Result<CorpusEvalReport, ModelError> {
    let hop_secs = cfg.cqt.hop as f64 / cfg.cqt.sample_rate as f64;
    let mut est = crate::eval::PitchTrack {
        hop_secs,
        pitch: Vec::new(),
        confidence: Some(Vec::new()),
    };
    let mut gt = crate::eval::PitchTrack {
        hop_secs,
        pitch: Vec::new(),
        confidence: None,
    };
    let mut pairs = Vec::new();
    for &i in idx {
        let item = &items[i];
        let frames = infer(&item.audio, model, cfg, Some(cal))?;
        let n = frames.len().min(item.labels.len());
        for (f, lab) in frames[..n].iter().zip(&item.labels[..n]) {
            est.pitch.push(f.pitch_semitones);
            est.confidence.as_mut().unwrap().push(f.confidence);
            let truth = lab.filter(|&hz| hz > 0.0);
            gt.pitch
                .push(truth.map(|hz| 12.0 * (hz / cfg.cqt.f_base).log2()));
            if let Some(hz) = truth {
                pairs.push((f.y, hz.log2()));
            }
        }
    }
    Ok(CorpusEvalReport {
        report: crate::eval::EvalReport::compute(&est, &gt)?,
        pairs,
    })
}

/// Pearson correlation; NaN-free inputs assumed.
pub fn pearson(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len() as f64;
    let (mx, my) = pairs
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (mx / n, my / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx.sqrt() * syy.sqrt()).max(1e-300)
}

/// CSV with header `time_sec,y,confidence[,pitch_semitones,pitch_hz]`.
pub fn write_infer_csv(path: &Path, frames: &[FrameEstimate]) -> Result<(), std::io::Error> {
    let calibrated = frames.first().is_some_and(|f| f.pitch_semitones.is_some());
    let mut f = std::fs::File::create(path)?;
    if calibrated {
        writeln!(f, "time_sec,y,confidence,pitch_semitones,pitch_hz")?;
    } else {
        writeln!(f, "time_sec,y,confidence")?;
    }
    for fr in frames {
        if calibrated {
            writeln!(
                f,
                "{:.6},{:.8e},{:.6},{:.6},{:.6}",
                fr.time_sec,
                fr.y,
                fr.confidence,
                fr.pitch_semitones.unwrap(),
                fr.pitch_hz.unwrap()
            )?;
        } else {
            writeln!(f, "{:.6},{:.8e},{:.6}", fr.time_sec, fr.y, fr.confidence)?;
        }
    }
    Ok(())
}
