//! Command-line entry points: dataset generation, training, evaluation,
//! proposal inspection, and chart rendering.
//!
//! Every command is an ordinary function over a typed argument struct, so
//! tests and examples drive them directly; the `rlsd` binary is a thin
//! wrapper. Results go to stdout (or the requested files); diagnostics go
//! through the logger to stderr. Exit status is zero exactly when the
//! command completed.

use crate::checkpoint;
use crate::config::RunConfig;
use crate::localizer::propose;
use crate::metrics::{pr_curve, recall_vs_area, write_xy_csv, MetricsReport};
use crate::synthdata::{self, decode_ppm, generate_dataset};
use crate::train::{evaluate_split, train_model, Dataset};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(
    name = "rlsd",
    version,
    about = "Multi-label image classification over latent semantic regions"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-label shape dataset
    GenData(GenDataArgs),
    /// Train a model and write a checkpoint plus a loss-curve CSV
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split
    Eval(EvalArgs),
    /// Emit the region proposals for one image
    Propose(ProposeArgs),
    /// Render an x,y CSV as an SVG line chart
    Plot(PlotArgs),
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(args) => cmd_gen_data(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Propose(args) => cmd_propose(&args),
        Command::Plot(args) => cmd_plot(&args),
    }
}

/// Defaults, then the config file top to bottom, then `--set` overrides.
fn resolve_config(file: Option<&Path>, sets: &[String]) -> Result<RunConfig> {
    let mut cfg = RunConfig::desk();
    if let Some(path) = file {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        cfg.apply_text(&text)?;
    }
    for pair in sets {
        let Some((key, value)) = pair.split_once('=') else {
            bail!("--set expects KEY=VALUE, got {pair:?}");
        };
        cfg.apply(key.trim(), value.trim())?;
    }
    Ok(cfg)
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Training images
    #[arg(long, default_value_t = 2000)]
    pub train: usize,
    /// Test images
    #[arg(long, default_value_t = 500)]
    pub test: usize,
    /// Scene seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of classes
    #[arg(long)]
    pub classes: Option<usize>,
    /// Config file of dotted keys (scene.* apply here)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra dotted-key override, repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Write into an existing non-empty directory
    #[arg(long)]
    pub force: bool,
}

pub fn cmd_gen_data(args: &GenDataArgs) -> Result<()> {
    let mut cfg = resolve_config(args.config.as_deref(), &args.set)?;
    if let Some(classes) = args.classes {
        cfg.apply("scene.classes", &classes.to_string())?;
    }
    if let Some(seed) = args.seed {
        cfg.apply("scene.seed", &seed.to_string())?;
    }
    if args.out.exists() && args.out.read_dir()?.next().is_some() && !args.force {
        bail!(
            "output directory {} is not empty (pass --force to write anyway)",
            args.out.display()
        );
    }
    generate_dataset(&cfg.scene, args.train, args.test, &args.out)?;
    println!("{}", args.out.join(synthdata::MANIFEST_FILE).display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Model kind: multi-cnn | cnn-lstm | rlsd | rlsd-ft-rpn
    #[arg(long)]
    pub model: Option<String>,
    /// Dataset root (as written by gen-data)
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint output path; the loss CSV lands next to it
    #[arg(long, default_value = "model.ckpt")]
    pub out: PathBuf,
    /// Training seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Config file of dotted keys
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra dotted-key override, repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut cfg = resolve_config(args.config.as_deref(), &args.set)?;
    if let Some(model) = &args.model {
        cfg.apply("model", model)?;
    }
    if let Some(seed) = args.seed {
        cfg.apply("train.seed", &seed.to_string())?;
    }
    cfg.apply("run.data", &args.data.display().to_string())?;
    cfg.apply("run.out", &args.out.display().to_string())?;
    cfg.validate()?;

    let ds = Dataset::load(&args.data)?;
    if ds.classes() != cfg.scene.classes {
        // The dataset is authoritative; keep the echo truthful.
        cfg.apply("scene.classes", &ds.classes().to_string())?;
    }
    let outcome = train_model(&cfg, &ds)?;
    cfg.train.epochs_completed = outcome.loss_log.len();

    checkpoint::save(&args.out, &outcome.params, &cfg.to_dotted())?;
    let csv_path = args.out.with_extension("loss.csv");
    let mut csv = String::from("epoch,loss\n");
    for (epoch, loss) in &outcome.loss_log {
        csv.push_str(&format!("{epoch},{loss:.6}\n"));
    }
    fs::write(&csv_path, csv)
        .with_context(|| format!("writing loss log {}", csv_path.display()))?;
    println!("{}", args.out.display());
    println!("{}", csv_path.display());
    Ok(())
}

/// Box-area fractions bounding the recall-vs-size bins: the last bin is
/// closed so a full-image box still lands somewhere.
const AREA_EDGES: [f64; 7] = [0.0, 0.02, 0.05, 0.1, 0.2, 0.35, 1.0 + 1e-9];

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint to evaluate
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset root
    #[arg(long)]
    pub data: PathBuf,
    /// Split: train | test
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Predicted labels per image
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Score floor for predictions
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Report path (stdout when omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the precision-recall curve CSV for this class name
    #[arg(long)]
    pub pr_class: Option<String>,
    /// Where the precision-recall CSV goes
    #[arg(long, default_value = "pr.csv")]
    pub pr_out: PathBuf,
    /// Also write the recall-vs-object-area CSV
    #[arg(long)]
    pub recall_area: bool,
    /// Where the recall-vs-area CSV goes
    #[arg(long, default_value = "recall_area.csv")]
    pub recall_area_out: PathBuf,
}

fn parse_split(name: &str) -> Result<crate::synthdata::Split> {
    match name {
        "train" => Ok(crate::synthdata::Split::Train),
        "test" => Ok(crate::synthdata::Split::Test),
        other => bail!("unknown split {other:?} (expected train or test)"),
    }
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let (params, echo) = checkpoint::load(&args.ckpt)?;
    let mut cfg = RunConfig::desk();
    cfg.apply_text(&echo)
        .with_context(|| format!("config echoed in {}", args.ckpt.display()))?;
    let ds = Dataset::load(&args.data)?;
    if ds.classes() != cfg.scene.classes {
        bail!(
            "checkpoint was trained for {} classes but the dataset has {}",
            cfg.scene.classes,
            ds.classes()
        );
    }
    let split = parse_split(&args.split)?;

    let records = evaluate_split(&params, &cfg, cfg.model, &ds, split)?;
    let report = MetricsReport::compute(&records, ds.classes(), args.k, args.threshold)?;
    let body = serde_json::to_string_pretty(&report)?;
    match &args.out {
        Some(path) => fs::write(path, body + "\n")
            .with_context(|| format!("writing report {}", path.display()))?,
        None => println!("{body}"),
    }

    if let Some(name) = &args.pr_class {
        let Some(class) = ds.manifest.class_id(name) else {
            bail!(
                "class {name:?} is not in the vocabulary ({})",
                ds.manifest.class_names.join(", ")
            );
        };
        let curve = pr_curve(&records, class);
        let mut out = Vec::new();
        write_xy_csv(&mut out, &curve)?;
        fs::write(&args.pr_out, out)
            .with_context(|| format!("writing PR curve {}", args.pr_out.display()))?;
    }

    if args.recall_area {
        let bins = recall_vs_area(&records, args.k, args.threshold, &AREA_EDGES)?;
        let points: Vec<(f64, f64)> =
            bins.iter().map(|b| ((b.lo + b.hi) / 2.0, b.recall)).collect();
        let mut out = Vec::new();
        write_xy_csv(&mut out, &points)?;
        fs::write(&args.recall_area_out, out)
            .with_context(|| format!("writing {}", args.recall_area_out.display()))?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ProposeArgs {
    /// Checkpoint holding a trained localizer
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Image to propose on (binary PPM, as written by gen-data)
    #[arg(long)]
    pub image: PathBuf,
    /// Region budget before the whole-image box (defaults to the trained M)
    #[arg(long)]
    pub m: Option<usize>,
}

#[derive(Debug, Serialize)]
struct ProposalRecord {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    confidence: f64,
}

pub fn cmd_propose(args: &ProposeArgs) -> Result<()> {
    let (params, echo) = checkpoint::load(&args.ckpt)?;
    let mut cfg = RunConfig::desk();
    cfg.apply_text(&echo)
        .with_context(|| format!("config echoed in {}", args.ckpt.display()))?;
    if params.get("rpn.hidden.weight").is_none() {
        bail!("checkpoint {} holds no localizer head", args.ckpt.display());
    }
    let bytes = fs::read(&args.image)
        .with_context(|| format!("reading image {}", args.image.display()))?;
    let image = decode_ppm(&bytes, &args.image.display().to_string())?;

    let proposals = propose(
        &params,
        &cfg.dims.backbone,
        &cfg.dims.anchor_scales,
        &cfg.dims.anchor_ratios,
        &image,
        args.m.unwrap_or(cfg.train.m),
        cfg.dims.nms_iou,
        cfg.dims.delta_clamp,
    )?;
    let records: Vec<ProposalRecord> = proposals
        .iter()
        .map(|p| ProposalRecord {
            x: p.bbox.x,
            y: p.bbox.y,
            w: p.bbox.w,
            h: p.bbox.h,
            confidence: p.confidence,
        })
        .collect();
    println!("{}", serde_json::to_string_pretty(&records)?);
    Ok(())
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Two-column CSV (header row allowed)
    #[arg(long)]
    pub input: PathBuf,
    /// SVG output path
    #[arg(long)]
    pub out: PathBuf,
    /// Chart title
    #[arg(long, default_value = "")]
    pub title: String,
}

pub fn cmd_plot(args: &PlotArgs) -> Result<()> {
    let text = fs::read_to_string(&args.input)
        .with_context(|| format!("reading {}", args.input.display()))?;
    let points = crate::plot::parse_xy_csv(&text)?;
    let svg = crate::plot::render_svg(&points, &args.title);
    fs::write(&args.out, svg)
        .with_context(|| format!("writing {}", args.out.display()))?;
    Ok(())
}
