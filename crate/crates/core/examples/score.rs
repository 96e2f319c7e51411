//! Scores a saved pilot checkpoint against corpus variants (eval split
//! only) to probe how the corpus parameters move RPA / VRR without paying
//! for a retrain.
//!
//! Usage: score <checkpoint.json>

use pitchkit::calib::calibrate_model;
use pitchkit::model::{evaluate_corpus_items, pearson, SpiceConfig, SpiceModel};
use pitchkit::nn::Checkpoint;
use pitchkit::synth::{gen_training_corpus, CalibrationSetConfig, CorpusConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let ck = Checkpoint::load(std::path::Path::new(&args[1])).unwrap();
    let cfg = SpiceConfig {
        d_enc: 16,
        d_dec: 8,
        seed: 42,
        ..SpiceConfig::default()
    };
    let mut model = SpiceModel::new(cfg.d_enc, cfg.d_dec, cfg.seed);
    model.load_checkpoint(&ck).unwrap();
    let cal_cfg = CalibrationSetConfig {
        n_pieces: 10,
        ..CalibrationSetConfig::default()
    };
    let cal = calibrate_model(&mut model, &cfg, &cal_cfg, 7).unwrap();
    println!("cal slope {:.4} intercept {:.3} rms {:.3}", cal.slope, cal.intercept, cal.residual_rms);

    let base = CorpusConfig::default();
    let variants: Vec<(&str, CorpusConfig)> = vec![
        ("default", base.clone()),
        (
            "noise 0.8",
            CorpusConfig {
                noise_peak: 0.8,
                ..base.clone()
            },
        ),
        (
            "unvoiced 0.9-1.8s",
            CorpusConfig {
                unvoiced_secs: (0.9, 1.8),
                ..base.clone()
            },
        ),
        (
            "noise 0.8 + unvoiced 0.9-1.8s",
            CorpusConfig {
                noise_peak: 0.8,
                unvoiced_secs: (0.9, 1.8),
                ..base.clone()
            },
        ),
        (
            "no vibrato",
            CorpusConfig {
                vibrato_depth: 0.0,
                ..base.clone()
            },
        ),
    ];
    // diagnostic upper bound: fit the affine map on the train split's own
    // (y, truth) pairs and score the eval split with it
    {
        let items = gen_training_corpus(&base, 42).unwrap();
        let cut = items.len() - items.len() / 5;
        let train_idx: Vec<usize> = (0..cut).collect();
        let eval_idx: Vec<usize> = (cut..items.len()).collect();
        let tr = evaluate_corpus_items(&mut model, &cfg, &cal, &items, &train_idx).unwrap();
        let pts: Vec<(f64, f64)> = tr
            .pairs
            .iter()
            .map(|&(y, lf)| (y, 12.0 * lf - 12.0 * cfg.cqt.f_base.log2()))
            .collect();
        let sup = pitchkit::calib::fit(&pts).unwrap();
        let sup_cal = pitchkit::calib::AffineCalibration { k_star: cal.k_star, ..sup };
        let ev = evaluate_corpus_items(&mut model, &cfg, &sup_cal, &items, &eval_idx).unwrap();
        println!(
            "supervised-fit bound             rpa {:6.2} (slope {:+.3} vs cal {:+.3})",
            ev.report.rpa, sup_cal.slope, cal.slope
        );
    }

    // residual structure of calibration pieces against the supervised line
    {
        let items = gen_training_corpus(&base, 42).unwrap();
        let cut = items.len() - items.len() / 5;
        let train_idx: Vec<usize> = (0..cut).collect();
        let tr = evaluate_corpus_items(&mut model, &cfg, &cal, &items, &train_idx).unwrap();
        let pts: Vec<(f64, f64)> = tr
            .pairs
            .iter()
            .map(|&(y, lf)| (y, 12.0 * lf - 12.0 * cfg.cqt.f_base.log2()))
            .collect();
        let sup = pitchkit::calib::fit(&pts).unwrap();
        let many = pitchkit::synth::gen_calibration_set(
            &CalibrationSetConfig {
                n_pieces: 40,
                ..CalibrationSetConfig::default()
            },
            123,
        )
        .unwrap();
        let k = cfg.k_star();
        println!("calibration residuals vs supervised line (st):");
        for s in &many {
            let cqt = pitchkit::dsp::compute_cqt(&s.audio, &cfg.cqt).unwrap();
            let frame = cqt.frame(s.center_frame.min(cqt.n_frames - 1));
            let row = &frame[k..k + pitchkit::dsp::SLICE_BINS];
            let mut tape: pitchkit::nn::Tape<f32> = pitchkit::nn::Tape::new();
            let x = pitchkit::model::slices_to_input(&mut tape, &[row]);
            let (out, _) = model.encoder.forward(&mut tape, x, false);
            let y = tape.data(out.y)[0] as f64;
            let pred = sup.intercept + sup.slope * y;
            println!("  f0 {:7.2} Hz st {:6.2} resid {:+.3}", s.f0_hz, s.f0_semitones, pred - s.f0_semitones);
        }
    }

    for (name, ccfg) in variants {
        let items = gen_training_corpus(&ccfg, 42).unwrap();
        let cut = items.len() - items.len() / 5;
        let eval_idx: Vec<usize> = (cut..items.len()).collect();
        let ev = evaluate_corpus_items(&mut model, &cfg, &cal, &items, &eval_idx).unwrap();
        let corr = pearson(&ev.pairs);
        println!(
            "{name:32} rpa {:6.2} vrr {} corr {:+.4}",
            ev.report.rpa,
            ev.report
                .vrr_at_10fa
                .map(|v| format!("{v:6.2}"))
                .unwrap_or_else(|| "   n/a".into()),
            corr,
        );
    }
}
