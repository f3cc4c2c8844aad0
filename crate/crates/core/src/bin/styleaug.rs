//! Command-line front end. Exit codes: 0 success, 1 configuration error,
//! 2 data error, 3 training divergence.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use styleaug::dataset::{generate_synthetic, load_dataset, save_dataset, save_synthetic, split_train_val, Dataset, Image, Split, SyntheticSpec};
use styleaug::evaluate::{mc_dropout_evaluate_with, Aggregation, EnsembleMode, EvalOptions};
use styleaug::experiment::{self, dump_masks, emit_loss_curves, fit_prior, preview_stylization_file, ExperimentConfig};
use styleaug::segnet::{build_model, Model, SegNetConfig};
use styleaug::stylizer::{calibrate_stylizer, reconstruction_psnr, CalibrationConfig, StylePrior, Stylizer, StylizerConfig};
use styleaug::trainer::{train, TrainConfig};
use styleaug::{Error, Result};

#[derive(Parser)]
#[command(name = "styleaug", version, about = "Style augmentation for small-data segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load an annotated image folder, rasterize and resize, write PNG pairs.
    Ingest(IngestArgs),
    /// Generate a synthetic texture-shift dataset.
    Synth(SynthArgs),
    /// Calibrate the stylizer on a training split and fit the style prior.
    CalibrateStylizer(CalibrateArgs),
    /// Train one model.
    Train(TrainArgs),
    /// Monte-Carlo dropout evaluation of a checkpoint.
    Eval(EvalArgs),
    /// Train and evaluate the no-style and style arms over several seeds.
    Compare(CompareArgs),
    /// Preview random stylisations of an image.
    Stylize(StylizeArgs),
    /// Plot train and validation loss curves of a run.
    Plot(PlotArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Folder with `images/` and `annotations/` (XML) or `masks/` (PNG).
    #[arg(long)]
    root: PathBuf,
    #[arg(long, default_value = "train")]
    split: Split,
    #[arg(long, default_value_t = 512)]
    size: usize,
    /// Output root; files go to `<out>/<split>/{images,masks}`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// JSON synthetic spec; defaults to the built-in benchmark spec.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_val: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    /// Disable the test-time texture shift.
    #[arg(long)]
    no_shift: bool,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Training split folder (`images/` + `masks/`).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    size: Option<usize>,
    /// Output folder for `stylizer.bin`, `prior.json` and `calibration.json`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, default_value_t = 4.0)]
    inflation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset root with `train/` and optionally `val/`.
    #[arg(long)]
    data: PathBuf,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    /// JSON training config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "tiny")]
    preset: String,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    val_every: Option<usize>,
    /// Validation images split off `train/` when there is no `val/`.
    #[arg(long, default_value_t = 5)]
    n_val: usize,
    #[arg(long)]
    style: bool,
    #[arg(long)]
    no_geometric: bool,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    stylizer: Option<PathBuf>,
    #[arg(long)]
    prior: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Split folder (`images/` + `masks/` or `annotations/`).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long, default_value_t = 20)]
    n_instances: usize,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Pool pixel counts over images instead of averaging per image.
    #[arg(long)]
    pooled: bool,
    /// Average instance probabilities before scoring.
    #[arg(long)]
    ensemble: bool,
    /// Report file.
    #[arg(long)]
    out: PathBuf,
    /// Write predicted masks (0/255 PNG) to this folder.
    #[arg(long)]
    dump_masks: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Experiment JSON; defaults to the synthetic benchmark.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    name: Option<String>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    n_instances: Option<usize>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct StylizeArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    stylizer: PathBuf,
    #[arg(long)]
    prior: PathBuf,
    #[arg(long, default_value_t = 1)]
    n_styles: usize,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    history: PathBuf,
    /// SVG path; the summary is written next to it with a `.json` extension.
    #[arg(long)]
    out: PathBuf,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Native size of the first image under `<split>/images`, for saved datasets.
fn native_size(split_dir: &Path) -> Result<usize> {
    let dir = split_dir.join("images");
    let entries = fs::read_dir(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    let first = paths
        .into_iter()
        .find(|p| p.is_file())
        .ok_or_else(|| Error::Load(format!("no images under {}", dir.display())))?;
    Ok(styleaug::dataset::read_image(&first)?.height())
}

fn load_split(dir: &Path, split: Split, size: Option<usize>) -> Result<Dataset> {
    let size = match size {
        Some(s) => s,
        None => native_size(dir)?,
    };
    load_dataset(dir, split, size)
}

fn ingest(a: IngestArgs) -> Result<()> {
    let d = load_dataset(&a.root, a.split, a.size)?;
    save_dataset(&d, &a.out)?;
    println!("wrote {} samples to {}", d.len(), a.out.join(a.split.as_str()).display());
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut spec: SyntheticSpec = match &a.config {
        Some(p) => read_json(p)?,
        None => SyntheticSpec::default(),
    };
    if let Some(v) = a.seed {
        spec.seed = v;
    }
    if let Some(v) = a.image_size {
        spec.image_size = v;
    }
    if let Some(v) = a.n_train {
        spec.n_train = v;
    }
    if let Some(v) = a.n_val {
        spec.n_val = v;
    }
    if let Some(v) = a.n_test {
        spec.n_test = v;
    }
    if a.no_shift {
        spec.texture_shift = false;
    }
    spec.validate().map_err(|e| Error::Config(e.to_string()))?;
    let splits = generate_synthetic(&spec)?;
    save_synthetic(&splits, &spec, &a.out)?;
    println!("wrote synthetic dataset to {}", a.out.display());
    Ok(())
}

fn calibrate(a: CalibrateArgs) -> Result<()> {
    let data = load_split(&a.data, Split::Train, a.size)?;
    let mut sc = StylizerConfig {
        seed: a.seed,
        ..StylizerConfig::default()
    };
    if let Some(d) = a.dim {
        sc.dim = d;
    }
    let mut cc = CalibrationConfig {
        seed: a.seed,
        ..CalibrationConfig::default()
    };
    if let Some(s) = a.steps {
        cc.steps = s;
    }
    if let Some(lr) = a.learning_rate {
        cc.learning_rate = lr;
    }
    let images: Vec<Image> = data.samples().iter().map(|s| s.image.clone()).collect();
    let cal = calibrate_stylizer(&images, &sc, &cc)?;
    let prior = fit_prior(&cal.stylizer, &data, a.inflation)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    cal.stylizer.save(&a.out.join("stylizer.bin"))?;
    prior.save(&a.out.join("prior.json"))?;
    let psnr = reconstruction_psnr(&cal.stylizer, &images)?;
    write_json(
        &a.out.join("calibration.json"),
        &serde_json::json!({
            "stylizer": sc,
            "calibration": cc,
            "prior_inflation": a.inflation,
            "reconstruction_psnr_db": psnr,
            "loss_history": cal.loss_history,
        }),
    )?;
    println!("reconstruction PSNR {psnr:.2} dB; wrote {}", a.out.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut config: TrainConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = a.epochs {
        config.epochs = v;
    }
    if let Some(v) = a.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = a.learning_rate {
        config.optimizer.learning_rate = v;
    }
    if let Some(v) = a.seed {
        config.seed = v;
    }
    if let Some(v) = a.val_every {
        config.val_every = v;
    }
    if let Some(v) = a.alpha {
        config.policy.alpha = v;
    }
    if a.style {
        config.policy.style_enabled = true;
    }
    if a.no_geometric {
        config.policy.geometric_enabled = false;
    }
    config.validate()?;
    let model_config = SegNetConfig::preset(&a.preset)?.with_seed(config.seed);
    let full = load_split(&a.data.join("train"), Split::Train, a.size)?;
    let (train_set, val_set) = if a.data.join("val").is_dir() {
        let size = full.samples()[0].image.height();
        (full, load_dataset(&a.data.join("val"), Split::Val, size)?)
    } else {
        split_train_val(&full, a.n_val, config.seed)?
    };
    let (stylizer, prior) = if config.policy.style_enabled {
        let (Some(sp), Some(pp)) = (&a.stylizer, &a.prior) else {
            return Err(Error::Config("--style needs --stylizer and --prior".into()));
        };
        for p in [sp, pp] {
            if !p.is_file() {
                return Err(Error::Config(format!("{} not found", p.display())));
            }
        }
        (Some(Stylizer::load(sp)?), Some(StylePrior::load(pp)?))
    } else {
        (None, None)
    };
    let mut model = build_model(&model_config)?;
    let result = train(
        &mut model,
        &train_set,
        &val_set,
        &config,
        stylizer.as_ref(),
        prior.as_ref(),
        Some(&a.out),
    )?;
    println!(
        "best validation IoU {:.4} at epoch {}; checkpoint {}",
        result.best_val_iou,
        result.best_epoch,
        a.out.join("best.ckpt").display()
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    if !a.checkpoint.is_file() {
        return Err(Error::Config(format!("checkpoint {} not found", a.checkpoint.display())));
    }
    let (model, meta): (Model, _) = Model::load_checkpoint(&a.checkpoint)?;
    let test = load_split(&a.data, Split::Test, a.size)?;
    let options = EvalOptions {
        n_instances: a.n_instances,
        threshold: a.threshold,
        seed: a.seed,
        aggregation: if a.pooled { Aggregation::PooledPixels } else { Aggregation::PerImage },
        ensemble: if a.ensemble { EnsembleMode::AveragePredictions } else { EnsembleMode::AverageMetrics },
    };
    let report = mc_dropout_evaluate_with(&model, &test, &options)?;
    write_json(
        &a.out,
        &serde_json::json!({
            "checkpoint": a.checkpoint,
            "checkpoint_epoch": meta.epoch,
            "checkpoint_digest": model.params().digest(),
            "options": options,
            "metrics": report,
        }),
    )?;
    if let Some(dir) = &a.dump_masks {
        dump_masks(&model, &test, &options, dir)?;
    }
    println!(
        "IoU {:.4} ± {:.4}, Dice {:.4} ± {:.4} over {} instances",
        report.mean_iou, report.std_iou, report.mean_dice, report.std_dice, report.n_instances
    );
    Ok(())
}

fn compare(a: CompareArgs) -> Result<i32> {
    let mut config = match &a.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::synthetic_benchmark(),
    };
    if let Some(v) = a.out {
        config.output_root = v;
    }
    if let Some(v) = a.name {
        config.name = v;
    }
    if let Some(v) = a.seeds {
        config.seeds = v;
    }
    if let Some(v) = a.epochs {
        config.train.epochs = v;
    }
    if let Some(v) = a.n_instances {
        config.eval.n_instances = v;
    }
    config.validate()?;
    if a.print_config {
        println!("{}", serde_json::to_string_pretty(&config)?);
        return Ok(0);
    }
    let report = experiment::run_experiment(&config)?;
    print!("{}", report.to_markdown());
    Ok(report.failure_code())
}

fn stylize(a: StylizeArgs) -> Result<()> {
    preview_stylization_file(&a.image, &a.stylizer, &a.prior, a.n_styles, a.alpha, a.seed, &a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn plot(a: PlotArgs) -> Result<()> {
    let files = emit_loss_curves(&a.history, &a.out)?;
    println!("wrote {} and {}", files.plot.display(), files.summary.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => ingest(a).map(|_| 0),
        Command::Synth(a) => synth(a).map(|_| 0),
        Command::CalibrateStylizer(a) => calibrate(a).map(|_| 0),
        Command::Train(a) => train_cmd(a).map(|_| 0),
        Command::Eval(a) => eval(a).map(|_| 0),
        Command::Compare(a) => compare(a),
        Command::Stylize(a) => stylize(a).map(|_| 0),
        Command::Plot(a) => plot(a).map(|_| 0),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
