//! Desk-scale pilot: trains the reduced model on a fresh synthetic corpus
//! and prints RPA / VRR / linearity every few thousand steps, to validate
//! end-to-end thresholds and wall-clock budget on this machine.
//!
//! Usage: pilot [total_steps] [chunk] [mode] [checkpoint_out]
//!   mode: baseline | norecon | l1 | noisy

use std::time::Instant;

use pitchkit::calib::calibrate_model;
use pitchkit::model::{
    build_frame_pool, evaluate_corpus_items, pearson, train, SpiceConfig, SpiceModel, TrainOpts,
};
use pitchkit::nn::LossKind;
use pitchkit::synth::{gen_training_corpus, CalibrationSetConfig, CorpusConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let total: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(15000);
    let chunk: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2500);
    let mode = args.get(3).map(|s| s.as_str()).unwrap_or("baseline");

    let mut cfg = SpiceConfig {
        d_enc: 16,
        d_dec: 8,
        seed: 42,
        ..SpiceConfig::default()
    };
    match mode {
        "baseline" => {}
        "norecon" => cfg.w_recon = 0.0,
        "l1" => cfg.loss_kind = LossKind::L1,
        "noisy" => cfg.noisy_training = true,
        other => panic!("unknown mode {other}"),
    }

    let corpus_cfg = CorpusConfig::default();
    let t0 = Instant::now();
    let items = gen_training_corpus(&corpus_cfg, 42).unwrap();
    let n_eval = items.len() / 5;
    let cut = items.len() - n_eval;
    let train_idx: Vec<usize> = (0..cut).collect();
    let eval_idx: Vec<usize> = (cut..items.len()).collect();
    let pool = build_frame_pool(&items, &cfg).unwrap();
    println!(
        "[{:7.1}s] corpus {} items, pool built, mode={mode}",
        t0.elapsed().as_secs_f64(),
        items.len()
    );

    let mut model = SpiceModel::new(cfg.d_enc, cfg.d_dec, cfg.seed);
    let cal_cfg = CalibrationSetConfig {
        n_pieces: 10,
        ..CalibrationSetConfig::default()
    };

    let mut done = 0u64;
    while done < total {
        let steps = chunk.min(total - done);
        let opts = TrainOpts {
            steps,
            checkpoint_every: None,
            checkpoint_dir: None,
            log_path: None,
            log_every: 500,
            train_items: train_idx.clone(),
        };
        let rep = train(&pool, &cfg, &mut model, &opts).unwrap();
        done += steps;
        let cal = calibrate_model(&mut model, &cfg, &cal_cfg, 7).unwrap();
        let ev = evaluate_corpus_items(&mut model, &cfg, &cal, &items, &eval_idx).unwrap();
        let corr = pearson(&ev.pairs);
        println!(
            "[{:7.1}s] step {:6} pitch_loss {:.3e} rpa {:6.2} vrr {} corr {:+.4} cal_rms {:.3}",
            t0.elapsed().as_secs_f64(),
            done,
            rep.last_pitch_loss,
            ev.report.rpa,
            ev.report
                .vrr_at_10fa
                .map(|v| format!("{v:6.2}"))
                .unwrap_or_else(|| "  n/a".into()),
            corr,
            cal.residual_rms,
        );
    }

    if let Some(path) = args.get(4) {
        let ck = model.to_checkpoint(done, "pilot".into());
        ck.save(std::path::Path::new(path)).unwrap();
        println!("checkpoint -> {path}");
    }

    if mode == "noisy" {
        // compare clean-eval RPA against 10 dB-corrupted eval
        let cal = calibrate_model(&mut model, &cfg, &cal_cfg, 7).unwrap();
        let clean = evaluate_corpus_items(&mut model, &cfg, &cal, &items, &eval_idx).unwrap();
        let mut noisy_items = items.clone();
        for &i in &eval_idx {
            use rand::SeedableRng;
            let n = noisy_items[i].audio.len();
            let sr = noisy_items[i].audio.sample_rate;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1234 + i as u64);
            let noise = pitchkit::dsp::AudioBuffer::new(
                pitchkit::synth::pink_noise(&mut rng, n),
                sr,
            )
            .unwrap();
            noisy_items[i].audio =
                pitchkit::dsp::mix_at_snr(&noisy_items[i].audio, &noise, 10.0).unwrap();
        }
        let noisy = evaluate_corpus_items(&mut model, &cfg, &cal, &noisy_items, &eval_idx).unwrap();
        println!(
            "clean rpa {:.2} vs 10dB rpa {:.2}",
            clean.report.rpa, noisy.report.rpa
        );
    }
}
