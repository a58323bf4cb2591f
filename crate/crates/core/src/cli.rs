//! Command-line front end.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::datapipe;
use crate::error::{Error, Result};
use crate::imgcore::{self, BitDepth};
use crate::metrics::{self, MetricParams, Scale};
use crate::trainer::{self, checkpoint, AugmentedSource, DataSource, FixedSamples, Trainer};

pub const THREADS_ENV: &str = "ALPHAGAN_THREADS";
pub const EFFECTIVE_CONFIG: &str = "effective_config.json";

#[derive(Debug, Parser)]
#[command(name = "alphagan", version, about = "Trimap-guided alpha matting with an adversarial generator")]
pub struct Cli {
    /// JSON config file; values override built-in defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config value, e.g. `--set train.lr_g=2e-4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// More log output on standard error (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a fixed composited dataset from foregrounds, mattes and backgrounds.
    Compose(ComposeArgs),
    /// Train the generator and discriminator.
    Train(TrainArgs),
    /// Predict an alpha matte for one image and trimap.
    Predict(PredictArgs),
    /// Score predicted mattes against ground truth.
    Evaluate(EvaluateArgs),
    /// Write augmented training samples for inspection.
    Preview(PreviewArgs),
}

#[derive(Debug, Args)]
pub struct ComposeArgs {
    #[arg(long)]
    pub fg: PathBuf,
    #[arg(long)]
    pub alpha: PathBuf,
    #[arg(long)]
    pub bg: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub per_fg: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Stride {
    #[value(name = "8")]
    Eight,
    #[value(name = "16")]
    Sixteen,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory with `fg/`, `alpha/` and `bg/` subdirectories.
    #[arg(long, required_unless_present = "synthetic")]
    pub data: Option<PathBuf>,
    /// Train on this many procedurally generated samples instead of `--data`.
    #[arg(long, conflicts_with = "data")]
    pub synthetic: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a checkpoint directory.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Encoder weights (a tensor directory with unprefixed backbone names).
    #[arg(long, conflicts_with = "resume")]
    pub pretrained: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub no_gan: bool,
    #[arg(long)]
    pub no_aspp: bool,
    #[arg(long)]
    pub no_skips: bool,
    #[arg(long, value_enum)]
    pub output_stride: Option<Stride>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// A checkpoint directory, or a tensor directory of generator weights.
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub trimap: PathBuf,
    /// Output PNG (16-bit grayscale).
    #[arg(long)]
    pub out: PathBuf,
    /// Keep the network output on definite foreground and background.
    #[arg(long)]
    pub no_clamp: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScaleArg {
    Raw,
    Benchmark,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub trimap: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "raw")]
    pub scale: ScaleArg,
}

#[derive(Debug, Args)]
pub struct PreviewArgs {
    /// Directory with `fg/`, `alpha/` and `bg/` subdirectories.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub n: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Config file, then `--set` overrides.
fn base_config(cli: &Cli, start: Option<ExperimentConfig>) -> Result<ExperimentConfig> {
    let mut cfg = match (start, &cli.config) {
        (Some(c), Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let doc = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            c.merged(doc)?
        }
        (Some(c), None) => c,
        (None, Some(path)) => ExperimentConfig::from_file(path)?,
        (None, None) => ExperimentConfig::default(),
    };
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{kv}` is not KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn write_effective_config(dir: &Path, command: &str, cfg: &ExperimentConfig, extra: serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let doc = json!({
        "command": command,
        "config": cfg,
        "arguments": extra,
    });
    let path = dir.join(EFFECTIVE_CONFIG);
    fs::write(&path, serde_json::to_string_pretty(&doc)?).map_err(|e| Error::io(&path, e))
}

fn cmd_compose(cli: &Cli, a: &ComposeArgs) -> Result<()> {
    let cfg = base_config(cli, None)?;
    let manifest = datapipe::build_composition_set(&a.fg, &a.alpha, &a.bg, &a.out, a.per_fg, a.seed)?;
    log::info!("wrote {} composites to {}", manifest.samples.len(), a.out.display());
    write_effective_config(
        &a.out,
        "compose",
        &cfg,
        json!({"fg": a.fg, "alpha": a.alpha, "bg": a.bg, "per_fg": a.per_fg, "seed": a.seed}),
    )
}

fn train_config(cli: &Cli, a: &TrainArgs, start: Option<ExperimentConfig>) -> Result<ExperimentConfig> {
    let mut cfg = base_config(cli, start)?;
    if let Some(s) = a.steps {
        cfg.train.steps = s;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
        cfg.augment.seed = s;
    }
    if a.no_gan {
        cfg.train.gan_enabled = false;
    }
    if a.no_aspp {
        cfg.generator.use_aspp = false;
    }
    if a.no_skips {
        cfg.generator.use_skips = false;
    }
    if let Some(os) = a.output_stride {
        cfg.generator.output_stride = match os {
            Stride::Eight => 8,
            Stride::Sixteen => 16,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let (mut trainer, cfg) = match &a.resume {
        Some(dir) => {
            let ckpt = checkpoint::load_checkpoint(dir)?;
            let cfg = train_config(cli, a, Some(ckpt.config.clone()))?;
            (Trainer::from_checkpoint(ckpt, Some(&cfg))?, cfg)
        }
        None => {
            let cfg = train_config(cli, a, None)?;
            let pretrained = a.pretrained.as_deref().map(checkpoint::load_weights).transpose()?;
            (Trainer::new(&cfg, pretrained.as_ref())?, cfg)
        }
    };
    let source: Box<dyn DataSource> = match (&a.data, a.synthetic) {
        (Some(dir), _) => Box::new(AugmentedSource::from_dir(dir, cfg.augment.clone())?),
        (None, Some(n)) => {
            let samples = (0..n as u64)
                .map(|i| datapipe::synthetic_sample(cfg.augment.seed.wrapping_add(i), cfg.augment.out_size, 7))
                .collect::<Result<Vec<_>>>()?;
            Box::new(FixedSamples(samples))
        }
        (None, None) => return Err(Error::Config("either --data or --synthetic is required".into())),
    };
    write_effective_config(
        &a.out,
        "train",
        &cfg,
        json!({"data": a.data, "synthetic": a.synthetic, "resume": a.resume, "pretrained": a.pretrained}),
    )?;
    let log_path = a.out.join("train_log.jsonl");
    let file = fs::OpenOptions::new()
        .create(true)
        .append(a.resume.is_some())
        .write(true)
        .truncate(a.resume.is_none())
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    trainer.train_loop(source.as_ref(), Some(&a.out), Some(&mut log))?;
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    log::info!("final checkpoint in {}", a.out.join("final").display());
    Ok(())
}

fn cmd_predict(cli: &Cli, a: &PredictArgs) -> Result<()> {
    let (cfg, weights) = if a.weights.join(checkpoint::STATE_FILE).exists() {
        let ckpt = checkpoint::load_checkpoint(&a.weights)?;
        (base_config(cli, Some(ckpt.config))?, ckpt.generator)
    } else {
        (base_config(cli, None)?, checkpoint::load_weights(&a.weights)?)
    };
    let image = imgcore::load_rgb(&a.image)?;
    let trimap = imgcore::load_trimap(&a.trimap)?;
    let alpha = trainer::predict(&image, &trimap, &weights, &cfg.generator, !a.no_clamp)?;
    let dir = a.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    imgcore::save_alpha(&alpha, &a.out, BitDepth::Sixteen)?;
    write_effective_config(
        dir,
        "predict",
        &cfg,
        json!({"weights": a.weights, "image": a.image, "trimap": a.trimap, "out": a.out, "clamp_known": !a.no_clamp}),
    )
}

fn cmd_evaluate(cli: &Cli, a: &EvaluateArgs) -> Result<()> {
    let cfg = base_config(cli, None)?;
    let params = MetricParams {
        scale: match a.scale {
            ScaleArg::Raw => Scale::Raw,
            ScaleArg::Benchmark => Scale::Benchmark,
        },
        ..MetricParams::default()
    };
    let report = metrics::evaluate_dirs(&a.pred, &a.gt, &a.trimap, &params)?;
    report.write(&a.out)?;
    write_effective_config(
        &a.out,
        "evaluate",
        &cfg,
        json!({"pred": a.pred, "gt": a.gt, "trimap": a.trimap, "params": params}),
    )
}

fn cmd_preview(cli: &Cli, a: &PreviewArgs) -> Result<()> {
    let mut cfg = base_config(cli, None)?;
    if let Some(s) = a.seed {
        cfg.augment.seed = s;
    }
    let source = AugmentedSource::from_dir(&a.data, cfg.augment.clone())?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut files = Vec::new();
    for i in 0..a.n {
        let s = source.sample(i as u64)?;
        let names = [
            format!("{i:04}_composite.png"),
            format!("{i:04}_trimap.png"),
            format!("{i:04}_alpha.png"),
        ];
        imgcore::save_rgb(&s.composite, a.out.join(&names[0]), BitDepth::Eight)?;
        imgcore::save_trimap(&s.trimap, a.out.join(&names[1]))?;
        imgcore::save_alpha(&s.alpha_gt, a.out.join(&names[2]), BitDepth::Sixteen)?;
        files.push(json!({"index": i, "composite": names[0], "trimap": names[1], "alpha": names[2]}));
    }
    let manifest = a.out.join("manifest.json");
    let doc = json!({"seed": cfg.augment.seed, "samples": files});
    fs::write(&manifest, serde_json::to_string_pretty(&doc)?).map_err(|e| Error::io(&manifest, e))?;
    write_effective_config(&a.out, "preview", &cfg, json!({"data": a.data, "n": a.n}))
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Compose(a) => cmd_compose(cli, a),
        Command::Train(a) => cmd_train(cli, a),
        Command::Predict(a) => cmd_predict(cli, a),
        Command::Evaluate(a) => cmd_evaluate(cli, a),
        Command::Preview(a) => cmd_preview(cli, a),
    }
}

fn init_threads() {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return;
    };
    match raw.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                log::warn!("could not size the worker pool: {e}");
            }
        }
        _ => log::warn!("ignoring {THREADS_ENV}={raw:?}; expected a positive integer"),
    }
}

/// Parse arguments, run the command, and map the outcome to an exit code.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .target(env_logger::Target::Stderr)
        .try_init();
    init_threads();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
