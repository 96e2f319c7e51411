//! `pitchkit` command-line front end: corpus synthesis, training,
//! calibration, inference, evaluation, and the ablation matrix, driven by
//! a TOML config plus flag overrides.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use pitchkit::calib::{calibrate_model, AffineCalibration};
use pitchkit::dsp::{load_wav_channel, Channel};
use pitchkit::eval::{
    load_ground_truth, resample_track, EvalReport, PitchTrack, TruthFormat,
};
use pitchkit::model::{
    build_frame_pool, infer, train, write_infer_csv, SpiceConfig, SpiceModel,
    TrainOpts,
};
use pitchkit::nn::{Checkpoint, LossKind};
use pitchkit::synth::{
    gen_training_corpus, load_corpus, save_corpus, CalibrationSetConfig, CorpusConfig, CorpusItem,
};

#[derive(Debug, Error)]
enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}: {1}")]
    Io(String, std::io::Error),
    #[error("synth: {0}")]
    Synth(#[from] pitchkit::synth::SynthError),
    #[error("dsp: {0}")]
    Dsp(#[from] pitchkit::dsp::DspError),
    #[error("model: {0}")]
    Model(#[from] pitchkit::model::ModelError),
    #[error("nn: {0}")]
    Nn(#[from] pitchkit::nn::NnError),
    #[error("calibration: {0}")]
    Calib(#[from] pitchkit::calib::CalibError),
    #[error("eval: {0}")]
    Eval(#[from] pitchkit::eval::EvalError),
    #[error("estimate csv: {0}")]
    EstimateCsv(String),
}

// ---------------------------------------------------------------------------
// config file

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    seed: Option<u64>,
    model: SpiceConfig,
    corpus: CorpusConfig,
    calibration: CalibrationSetConfig,
    train: TrainSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainSection {
    steps: u64,
    checkpoint_every: Option<u64>,
    log_every: u64,
    /// Trailing fraction of corpus items held out from training.
    eval_fraction: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            steps: 1000,
            checkpoint_every: None,
            log_every: 50,
            eval_fraction: 0.2,
        }
    }
}

impl RunConfig {
    fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Io(p.display().to_string(), e))?;
                toml::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
            }
        }
    }

    /// Precedence: --seed flag, then config file, then SPICE_SEED, then 0.
    fn resolve_seed(&mut self, flag: Option<u64>) -> Result<(), CliError> {
        let env = match std::env::var("SPICE_SEED") {
            Ok(s) => Some(s.parse::<u64>().map_err(|_| {
                CliError::Config(format!("SPICE_SEED is not an integer: {s:?}"))
            })?),
            Err(_) => None,
        };
        let seed = flag.or(self.seed).or(env).unwrap_or(0);
        self.seed = Some(seed);
        self.model.seed = seed;
        Ok(())
    }

    fn write_resolved(&self, out_dir: &Path) -> Result<(), CliError> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| CliError::Config(format!("serialize resolved config: {e}")))?;
        let p = out_dir.join("resolved_config.toml");
        std::fs::write(&p, text).map_err(|e| CliError::Io(p.display().to_string(), e))
    }
}

// ---------------------------------------------------------------------------
// argument surface

#[derive(Parser)]
#[command(name = "pitchkit", version, about = "self-supervised pitch estimation toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct Common {
    /// TOML run config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config-file seed (SPICE_SEED env is the fallback).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum VoiceChannel {
    Left,
    Right,
}

#[derive(Clone, Copy, ValueEnum)]
enum TruthFormatArg {
    SemitoneCsv,
    HzCsv,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a labeled training corpus (WAV + f0 CSV per item).
    SynthGen {
        #[command(flatten)]
        common: Common,
        /// Overrides [corpus] n_items.
        #[arg(long)]
        n_items: Option<usize>,
    },
    /// Train a model on a synthesized corpus.
    Train {
        #[command(flatten)]
        common: Common,
        /// Corpus directory from synth-gen.
        #[arg(long)]
        corpus: PathBuf,
        /// Overrides [train] steps.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Fit the affine pitch calibration for a trained checkpoint.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Overrides [calibration] n_pieces (M).
        #[arg(long)]
        m: Option<usize>,
    },
    /// Run pitch inference over WAV files, one CSV per input.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Calibration JSON; without it only raw y and confidence are
        /// written.
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Which channel to analyze for stereo files (default: mixdown).
        #[arg(long, value_enum)]
        voice_channel: Option<VoiceChannel>,
        /// Input WAV paths.
        #[arg(required = true)]
        wavs: Vec<PathBuf>,
    },
    /// Score an inference CSV against ground truth.
    Eval {
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, value_enum)]
        truth_format: TruthFormatArg,
        /// Ground-truth label hop in seconds.
        #[arg(long)]
        truth_hop: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train/calibrate/evaluate the full ablation matrix:
    /// {huber,l1,l2} x {recon on/off} x {augment on/off}.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        steps: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // one line, machine-parsable: "error: <category>: <detail>";
            // multi-line sources (e.g. TOML diagnostics) are flattened
            let msg: String = e.to_string().split_whitespace().collect::<Vec<_>>().join(" ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::SynthGen { common, n_items } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            cfg.resolve_seed(common.seed)?;
            if let Some(n) = n_items {
                cfg.corpus.n_items = n;
            }
            mkdir(&common.out)?;
            let items = gen_training_corpus(&cfg.corpus, cfg.seed.unwrap())?;
            save_corpus(&common.out, &items)?;
            cfg.write_resolved(&common.out)?;
            println!("wrote {} items to {}", items.len(), common.out.display());
            Ok(())
        }
        Cmd::Train {
            common,
            corpus,
            steps,
        } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            cfg.resolve_seed(common.seed)?;
            if let Some(s) = steps {
                cfg.train.steps = s;
            }
            mkdir(&common.out)?;
            let items = load_corpus(&corpus)?;
            let (train_items, _) = split_items(items.len(), cfg.train.eval_fraction);
            let pool = build_frame_pool(&items, &cfg.model)?;
            let mut model = SpiceModel::new(cfg.model.d_enc, cfg.model.d_dec, cfg.model.seed);
            let opts = TrainOpts {
                steps: cfg.train.steps,
                checkpoint_every: Some(cfg.train.checkpoint_every.unwrap_or(cfg.train.steps)),
                checkpoint_dir: Some(common.out.clone()),
                log_path: Some(common.out.join("train_log.csv")),
                log_every: cfg.train.log_every,
                train_items,
            };
            let report = train(&pool, &cfg.model, &mut model, &opts)?;
            cfg.write_resolved(&common.out)?;
            println!(
                "trained {} steps; pitch loss {:.4e} -> {:.4e}",
                report.steps, report.first_pitch_loss, report.last_pitch_loss
            );
            Ok(())
        }
        Cmd::Calibrate {
            common,
            checkpoint,
            m,
        } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            cfg.resolve_seed(common.seed)?;
            if let Some(m) = m {
                cfg.calibration.n_pieces = m;
            }
            mkdir(&common.out)?;
            let mut model = model_from_checkpoint(&checkpoint, &mut cfg.model)?;
            let cal = calibrate_model(
                &mut model,
                &cfg.model,
                &cfg.calibration,
                cfg.seed.unwrap(),
            )?;
            let out = common.out.join("calibration.json");
            cal.save(&out)?;
            cfg.write_resolved(&common.out)?;
            println!(
                "calibration: intercept {:.4} slope {:.4} rms {:.4} -> {}",
                cal.intercept,
                cal.slope,
                cal.residual_rms,
                out.display()
            );
            Ok(())
        }
        Cmd::Infer {
            common,
            checkpoint,
            calibration,
            voice_channel,
            mut wavs,
        } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            cfg.resolve_seed(common.seed)?;
            mkdir(&common.out)?;
            let mut model = model_from_checkpoint(&checkpoint, &mut cfg.model)?;
            let cal = calibration
                .as_deref()
                .map(AffineCalibration::load)
                .transpose()?;
            let channel = match voice_channel {
                Some(VoiceChannel::Left) => Channel::Left,
                Some(VoiceChannel::Right) => Channel::Right,
                None => Channel::Mix,
            };
            wavs.sort();
            for wav in &wavs {
                let audio = load_wav_channel(wav, channel)?;
                let frames = infer(&audio, &mut model, &cfg.model, cal.as_ref())?;
                let stem = wav
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "out".to_string());
                let out = common.out.join(format!("{stem}.csv"));
                write_infer_csv(&out, &frames)
                    .map_err(|e| CliError::Io(out.display().to_string(), e))?;
                println!("{} -> {} ({} frames)", wav.display(), out.display(), frames.len());
            }
            cfg.write_resolved(&common.out)?;
            Ok(())
        }
        Cmd::Eval {
            estimate,
            truth,
            truth_format,
            truth_hop,
            out,
        } => {
            mkdir(&out)?;
            let est = read_estimate_csv(&estimate)?;
            let format = match truth_format {
                TruthFormatArg::SemitoneCsv => TruthFormat::SemitoneCsv,
                TruthFormatArg::HzCsv => TruthFormat::HzCsv,
            };
            let f_base = pitchkit::dsp::CqtParams::default().f_base;
            let gt = load_ground_truth(&truth, format, truth_hop, f_base)?;
            let gt = resample_track(&gt, est.hop_secs);
            let report = EvalReport::compute(&est, &gt)?;
            report.write_json(&out.join("report.json"))?;
            report.write_text(&out.join("report.txt"))?;
            report.write_roc_csv(&out.join("roc.csv"))?;
            report.write_error_csv(&out.join("error_by_freq.csv"))?;
            print!("{}", report.to_text());
            Ok(())
        }
        Cmd::Ablate {
            common,
            corpus,
            steps,
        } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            cfg.resolve_seed(common.seed)?;
            if let Some(s) = steps {
                cfg.train.steps = s;
            }
            mkdir(&common.out)?;
            let items = load_corpus(&corpus)?;
            cmd_ablate(&cfg, &items, &common.out)?;
            cfg.write_resolved(&common.out)?;
            Ok(())
        }
    }
}

fn mkdir(p: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(p).map_err(|e| CliError::Io(p.display().to_string(), e))
}

/// First (1 - eval_fraction) of the items train; the rest are held out.
fn split_items(n: usize, eval_fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let n_eval = ((n as f64 * eval_fraction).round() as usize).min(n.saturating_sub(1));
    let cut = n - n_eval;
    ((0..cut).collect(), (cut..n).collect())
}

/// Rebuilds a model sized from the checkpoint's own tensors, then loads
/// the weights; the config's d_enc/d_dec are updated to match.
fn model_from_checkpoint(
    path: &Path,
    cfg: &mut SpiceConfig,
) -> Result<SpiceModel<f32>, CliError> {
    let ck = Checkpoint::load(path)?;
    let enc_w = ck
        .tensors
        .get("enc.block0.w")
        .ok_or_else(|| CliError::Config(format!("{}: missing enc.block0.w", path.display())))?;
    let dec_w = ck
        .tensors
        .get("dec.block0.w")
        .ok_or_else(|| CliError::Config(format!("{}: missing dec.block0.w", path.display())))?;
    cfg.d_enc = enc_w.shape[0];
    cfg.d_dec = dec_w.shape[0] / 8;
    let mut model = SpiceModel::new(cfg.d_enc, cfg.d_dec, 0);
    model.load_checkpoint(&ck)?;
    Ok(model)
}

/// Parses a CSV written by `infer` back into a track. Requires the
/// calibrated header (pitch columns present).
fn read_estimate_csv(path: &Path) -> Result<PitchTrack, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Io(path.display().to_string(), e))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if !header.starts_with("time_sec,y,confidence,pitch_semitones") {
        return Err(CliError::EstimateCsv(format!(
            "{}: expected calibrated header, got {header:?}",
            path.display()
        )));
    }
    let mut times = Vec::new();
    let mut pitch = Vec::new();
    let mut conf = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() < 4 {
            return Err(CliError::EstimateCsv(format!(
                "{}:{}: short row",
                path.display(),
                i + 2
            )));
        }
        let parse = |s: &str| {
            s.parse::<f64>().map_err(|_| {
                CliError::EstimateCsv(format!("{}:{}: bad number {s:?}", path.display(), i + 2))
            })
        };
        times.push(parse(cols[0])?);
        conf.push(parse(cols[2])?);
        pitch.push(Some(parse(cols[3])?));
    }
    if times.len() < 2 {
        return Err(CliError::EstimateCsv(format!(
            "{}: need at least two rows",
            path.display()
        )));
    }
    Ok(PitchTrack {
        hop_secs: times[1] - times[0],
        pitch,
        confidence: Some(conf),
    })
}

fn cmd_ablate(cfg: &RunConfig, items: &[CorpusItem], out: &Path) -> Result<(), CliError> {
    let (train_items, eval_items) = split_items(items.len(), cfg.train.eval_fraction);
    let mut summary = String::from("variant,loss,recon,augment,rpa,vrr_at_10fa\n");
    for loss in [LossKind::Huber, LossKind::L1, LossKind::L2] {
        for recon in [true, false] {
            for augment in [true, false] {
                let loss_name = match loss {
                    LossKind::Huber => "huber",
                    LossKind::L1 => "l1",
                    LossKind::L2 => "l2",
                };
                let variant = format!(
                    "{loss_name}_{}_{}",
                    if recon { "recon" } else { "norecon" },
                    if augment { "aug" } else { "noaug" }
                );
                let mut mc = cfg.model.clone();
                mc.loss_kind = loss;
                mc.w_recon = if recon { mc.w_recon } else { 0.0 };
                mc.augment_octaves = augment;
                let pool = build_frame_pool(items, &mc)?;
                let mut model = SpiceModel::new(mc.d_enc, mc.d_dec, mc.seed);
                let opts = TrainOpts {
                    steps: cfg.train.steps,
                    checkpoint_every: None,
                    checkpoint_dir: None,
                    log_path: None,
                    log_every: cfg.train.log_every,
                    train_items: train_items.clone(),
                };
                train(&pool, &mc, &mut model, &opts)?;
                let cal =
                    calibrate_model(&mut model, &mc, &cfg.calibration, cfg.seed.unwrap())?;
                let report = pitchkit::model::evaluate_corpus_items(
                    &mut model,
                    &mc,
                    &cal,
                    items,
                    &eval_items,
                )?
                .report;
                let dir = out.join(&variant);
                mkdir(&dir)?;
                report.write_json(&dir.join("report.json"))?;
                let vrr = report
                    .vrr_at_10fa
                    .map(|v| format!("{v:.2}"))
                    .unwrap_or_else(|| "".to_string());
                summary.push_str(&format!(
                    "{variant},{loss_name},{recon},{augment},{:.2},{vrr}\n",
                    report.rpa
                ));
                println!(
                    "{variant}: rpa {:.2} vrr {}",
                    report.rpa,
                    report.vrr_at_10fa.map(|v| format!("{v:.2}")).unwrap_or_default()
                );
            }
        }
    }
    let p = out.join("summary.csv");
    std::fs::write(&p, summary).map_err(|e| CliError::Io(p.display().to_string(), e))?;
    Ok(())
}
