//! Command-line front end: `generate`, `train`, `evaluate` and `predict`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::checkpoint::Checkpoint;
use crate::config::PipelineConfig;
use crate::encoders::Vocabulary;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, history_near, predict_image, render_report, EvalReport};
use crate::model::Model;
use crate::par::Exec;
use crate::synthgen::{generate_dataset, Manifest, Split, StageLabel, IMAGE_DIR, MANIFEST_FILE, NEUTRAL_PROMPT};
use crate::training::{fit, load_rgb, HISTORY_FILE};

pub const FINAL_CHECKPOINT: &str = "checkpoint_final.safetensors";
pub const BEST_CHECKPOINT: &str = "checkpoint_best.safetensors";
pub const VOCAB_FILE: &str = "vocab.txt";

#[derive(Debug, Parser)]
#[command(name = "cliptime", version, about = "Fungal growth stage and elapsed-time prediction from image and text")]
pub struct Cli {
    /// Run data-parallel kernels on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic dataset and its manifest into the data directory.
    Generate(GenerateArgs),
    /// Train a model and write checkpoints and loss history into the run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split and write the report.
    Evaluate(EvaluateArgs),
    /// Predict stage and hours for a single image.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Replace an existing dataset.
    #[arg(long)]
    pub force: bool,
    /// Override `gen.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override `paths.data_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Override `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override `paths.run_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Defaults to the best checkpoint in the run directory.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Text fused with every image; defaults to the neutral prompt.
    #[arg(long)]
    pub prompt: Option<String>,
    /// Report directory; defaults to `<run_dir>/eval-<split>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for the qualitative sample grid; defaults to `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Text fused with the image; defaults to the neutral prompt.
    #[arg(long)]
    pub prompt: Option<String>,
    pub image: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    match cli.command {
        Command::Generate(a) => cmd_generate(&a, exec).map(|_| ()),
        Command::Train(a) => cmd_train(&a, exec),
        Command::Evaluate(a) => cmd_evaluate(&a, exec).map(|_| ()),
        Command::Predict(a) => {
            println!("{}", cmd_predict(&a)?);
            Ok(())
        }
    }
}

fn remove_if_exists(path: &Path) -> Result<()> {
    let r = if path.is_dir() {
        fs::remove_dir_all(path)
    } else if path.exists() {
        fs::remove_file(path)
    } else {
        return Ok(());
    };
    r.map_err(|e| Error::io(path, e))
}

pub fn cmd_generate(args: &GenerateArgs, exec: Exec) -> Result<Manifest> {
    let mut cfg = PipelineConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.gen.seed = seed;
    }
    let data_dir = args.out.clone().unwrap_or(cfg.paths.data_dir);
    if args.force {
        remove_if_exists(&data_dir.join(MANIFEST_FILE))?;
        remove_if_exists(&data_dir.join(IMAGE_DIR))?;
    } else if data_dir.join(MANIFEST_FILE).exists() || data_dir.join(IMAGE_DIR).exists() {
        return Err(Error::Data(format!(
            "{} already holds a dataset; pass --force to replace it",
            data_dir.display()
        )));
    }
    let manifest = generate_dataset(&cfg.gen, &data_dir, exec)?;
    println!("dataset written to {}", data_dir.display());
    for stage in StageLabel::ALL {
        let per_split: Vec<String> = Split::ALL
            .iter()
            .map(|&sp| format!("{sp} {}", manifest.count(Some(sp), stage)))
            .collect();
        println!(
            "{:<9} {:>5}  ({})",
            stage.name(),
            manifest.count(None, stage),
            per_split.join(", ")
        );
    }
    Ok(manifest)
}

fn read_dataset(data_dir: &Path, config: &Path) -> Result<Manifest> {
    let path = data_dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::Data(format!(
            "no dataset at {}; create it with `cliptime generate --config {}`",
            data_dir.display(),
            config.display()
        )));
    }
    Manifest::read(&path)
}

pub fn cmd_train(args: &TrainArgs, exec: Exec) -> Result<()> {
    let mut cfg = PipelineConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    let run_dir = args.out.clone().unwrap_or(cfg.paths.run_dir.clone());
    let manifest = read_dataset(&cfg.paths.data_dir, &args.config)?;
    let mut model = Model::new(
        cfg.encoder.clone(),
        cfg.model.clone(),
        Vocabulary::from_templates(),
        cfg.train.seed,
    )?;
    log::info!(
        "training {} parameters on {} samples",
        model.params.len(),
        manifest.split(Split::Train).len()
    );
    let out = fit(&manifest, &cfg.paths.data_dir, &mut model, &cfg.train, exec)?;
    fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
    out.final_checkpoint.save(&run_dir.join(FINAL_CHECKPOINT))?;
    out.best_checkpoint.save(&run_dir.join(BEST_CHECKPOINT))?;
    out.history.write(&run_dir.join(HISTORY_FILE))?;
    model.vocab.write(&run_dir.join(VOCAB_FILE))?;
    let last = out.history.epochs.last().expect("at least one epoch");
    println!(
        "trained {} epochs: final train l_total {:.4}, val l_total {:.4}; best val {:.4} at epoch {}",
        last.epoch,
        last.train.l_total,
        last.val.l_total,
        out.best_checkpoint.val_loss.unwrap_or(f64::NAN),
        out.best_checkpoint.epoch
    );
    println!("checkpoints written to {}", run_dir.display());
    Ok(())
}

pub fn cmd_evaluate(args: &EvaluateArgs, exec: Exec) -> Result<EvalReport> {
    let cfg = PipelineConfig::load(&args.config)?;
    let ckpt_path = args
        .checkpoint
        .clone()
        .unwrap_or_else(|| cfg.paths.run_dir.join(BEST_CHECKPOINT));
    if !ckpt_path.exists() {
        return Err(Error::Data(format!(
            "checkpoint {} not found; train one with `cliptime train --config {}`",
            ckpt_path.display(),
            args.config.display()
        )));
    }
    let ckpt = Checkpoint::load(&ckpt_path)?;
    let manifest = read_dataset(&cfg.paths.data_dir, &args.config)?;
    let report = evaluate(&ckpt, &manifest, &cfg.paths.data_dir, args.split, args.prompt.as_deref(), exec)?;
    let out_dir = args
        .out
        .clone()
        .unwrap_or_else(|| cfg.paths.run_dir.join(format!("eval-{}", args.split)));
    let history = history_near(&ckpt_path);
    render_report(
        &report,
        history.as_ref(),
        &cfg.paths.data_dir,
        &out_dir,
        args.seed.unwrap_or(cfg.train.seed),
    )?;
    println!(
        "{} split: accuracy {:.4} ({} / {}), {} excluded",
        report.split,
        report.accuracy,
        crate::evaluation::trace(&report.confusion),
        report.n_samples,
        report.excluded.len()
    );
    for (stage, e) in StageLabel::ALL.iter().zip(&report.per_stage_mae) {
        match (e.mean, e.std) {
            (Some(m), Some(s)) => println!("  {:<9} MAE {m:7.1} h (std {s:6.1}, n = {})", stage.name(), e.count),
            _ => println!("  {:<9} MAE undefined (no samples)", stage.name()),
        }
    }
    println!("report written to {}", out_dir.display());
    Ok(report)
}

/// One JSON record with the predicted stage, class probabilities and hours.
pub fn cmd_predict(args: &PredictArgs) -> Result<String> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let img = load_rgb(&args.image)?;
    let p = predict_image(&ckpt, &img, args.prompt.as_deref())?;
    let probs: serde_json::Map<String, serde_json::Value> = StageLabel::ALL
        .iter()
        .zip(&p.probabilities)
        .map(|(s, &v)| (s.name().to_string(), json!(v)))
        .collect();
    Ok(json!({
        "image": args.image.display().to_string(),
        "prompt": args.prompt.as_deref().unwrap_or(NEUTRAL_PROMPT),
        "stage": p.stage.name(),
        "probabilities": probs,
        "hours": p.hours,
    })
    .to_string())
}
