//! `hopwell` command-line harness.
//!
//! Subcommands: `train`, `wells`, `eval`, `pipeline`, `sweep`, `verify`,
//! `report`. Exit codes: 0 success, 1 usage error, 2 verification failure,
//! 3 runtime failure.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use hopwell::cnn::{load_checkpoint, save_checkpoint, train_cnn, Arch};
use hopwell::harness::{
    emit_report, extract_features, render_table, run_pipeline, run_sweep, run_verification,
    write_atomic, ExperimentConfig, ExperimentReport, SweepGrid, VerifyOptions,
};
use hopwell::kmeans::{build_wells, group_by_class, well_distances, WellSet};

#[derive(Parser)]
#[command(
    name = "hopwell",
    version,
    about = "Hybrid CNN + multi-well Hopfield energy classifier for MNIST"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Shared configuration flags; values given here override the config file.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// JSON experiment config (flat schema; all fields optional)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory with the four MNIST IDX files (falls back to
    /// $HOPWELL_DATA_DIR, then ./data)
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Output directory for artifacts and reports
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Master seed; all stage seeds derive from it
    #[arg(long)]
    seed: Option<u64>,
    /// Train on the first N samples of a seeded shuffle
    #[arg(long, value_name = "N")]
    subset_train: Option<usize>,
    /// Evaluate on the first N samples of a seeded shuffle
    #[arg(long, value_name = "N")]
    subset_test: Option<usize>,
    /// Force sequential evaluation (runs are deterministic either way)
    #[arg(long)]
    strict_determinism: bool,
    /// Use the full 60k train / 10k test splits
    #[arg(long)]
    full_scale: bool,
    /// Architecture: one_layer, three_layer, three_layer_wide, four_layer
    #[arg(long)]
    arch: Option<Arch>,
    #[arg(long)]
    epochs: Option<usize>,
    /// k-means clusters per class (wells = 10*K)
    #[arg(long, short = 'k')]
    wells_per_class: Option<usize>,
    /// Well sharpness β
    #[arg(long)]
    beta: Option<f64>,
    /// State regularizer λ
    #[arg(long)]
    lambda: Option<f64>,
    /// Descent step η
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Pre-train the CNN and write the checkpoint + training log
    Train(ConfigArgs),
    /// Build wells from a checkpoint and the training split
    Wells {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Checkpoint path (default `<out-dir>/cnn.hwcn`)
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a checkpoint + wells file on the test split
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Checkpoint path (default `<out-dir>/cnn.hwcn`)
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Wells file path (default `<out-dir>/wells.hwwl`)
        #[arg(long)]
        wells: Option<PathBuf>,
    },
    /// Full run: train, build wells, evaluate, report
    Pipeline(ConfigArgs),
    /// Cartesian hyperparameter sweep from a JSON grid file
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// JSON grid, e.g. {"beta": [0.01, 0.05], "wells_per_class": [5, 7]}
        #[arg(long)]
        grid: PathBuf,
    },
    /// Run the self-contained verification suite (no dataset needed)
    Verify,
    /// Re-render report files (JSON arrays or single reports) as a table
    Report {
        /// Report JSON files to merge
        #[arg(long, required = true, num_args = 1..)]
        from: Vec<PathBuf>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

fn resolve_config(args: &ConfigArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {path:?}: {e}")))?;
            ExperimentConfig::from_json(&text)
                .map_err(|e| CliError::Usage(format!("bad config {path:?}: {e}")))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(dir) = &args.data_dir {
        cfg.data_dir = dir.clone();
    }
    if let Some(dir) = &args.out_dir {
        cfg.out_dir = dir.clone();
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.full_scale {
        cfg.subset_train = None;
        cfg.subset_test = None;
    }
    if let Some(n) = args.subset_train {
        cfg.subset_train = Some(n);
    }
    if let Some(n) = args.subset_test {
        cfg.subset_test = Some(n);
    }
    if args.strict_determinism {
        cfg.strict_determinism = true;
    }
    if let Some(arch) = args.arch {
        cfg.arch = arch;
    }
    if let Some(epochs) = args.epochs {
        cfg.epochs = epochs;
    }
    if let Some(k) = args.wells_per_class {
        cfg.wells_per_class = k;
    }
    if let Some(beta) = args.beta {
        cfg.beta = beta;
    }
    if let Some(lambda) = args.lambda {
        cfg.lambda = lambda;
    }
    if let Some(eta) = args.eta {
        cfg.eta = eta;
    }
    if let Some(lr) = args.learning_rate {
        cfg.learning_rate = lr;
    }
    Ok(cfg)
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

fn cmd_train(args: &ConfigArgs) -> Result<(), CliError> {
    let cfg = resolve_config(args)?;
    let split = cfg.load_split().map_err(runtime)?;
    let (model, log) =
        train_cnn(&split, &cfg.cnn_config(), &cfg.train_config()).map_err(runtime)?;
    let ckpt = cfg.out_dir.join("cnn.hwcn");
    write_atomic(&ckpt, &save_checkpoint(&model)).map_err(runtime)?;
    let mut lines = Vec::new();
    for entry in &log {
        lines.extend_from_slice(serde_json::to_string(entry).map_err(runtime)?.as_bytes());
        lines.push(b'\n');
        println!(
            "epoch {}: loss {:.4}, accuracy {:.2}%",
            entry.epoch,
            entry.train_loss,
            entry.train_acc * 100.0
        );
    }
    write_atomic(&cfg.out_dir.join("train_log.jsonl"), &lines).map_err(runtime)?;
    println!("checkpoint written to {}", ckpt.display());
    Ok(())
}

fn load_model(path: &PathBuf) -> Result<hopwell::cnn::CnnModel, CliError> {
    let bytes =
        fs::read(path).map_err(|e| CliError::Runtime(format!("cannot read {path:?}: {e}")))?;
    load_checkpoint(&bytes).map_err(runtime)
}

fn cmd_wells(args: &ConfigArgs, checkpoint: &Option<PathBuf>) -> Result<(), CliError> {
    let cfg = resolve_config(args)?;
    let ckpt = checkpoint
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join("cnn.hwcn"));
    let model = load_model(&ckpt)?;
    let split = cfg.load_split().map_err(runtime)?;
    let (features, _) = extract_features(&model, &split.train, cfg.batch_size).map_err(runtime)?;
    let by_class = group_by_class(features.view(), &split.train.labels);
    let wells = build_wells(&by_class, &cfg.kmeans_config()).map_err(runtime)?;
    let distances = well_distances(&wells).map_err(runtime)?;
    let path = cfg.out_dir.join("wells.hwwl");
    write_atomic(&path, &wells.to_bytes()).map_err(runtime)?;
    println!(
        "{} wells (K = {}) written to {}; min distance {:.4}, mean {:.4}",
        wells.len(),
        wells.k,
        path.display(),
        distances.min,
        distances.mean
    );
    Ok(())
}

fn cmd_eval(
    args: &ConfigArgs,
    checkpoint: &Option<PathBuf>,
    wells_path: &Option<PathBuf>,
) -> Result<(), CliError> {
    let cfg = resolve_config(args)?;
    let ckpt = checkpoint
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join("cnn.hwcn"));
    let wells_file = wells_path
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join("wells.hwwl"));
    let model = load_model(&ckpt)?;
    let wells_bytes = fs::read(&wells_file)
        .map_err(|e| CliError::Runtime(format!("cannot read {wells_file:?}: {e}")))?;
    let wells = WellSet::from_bytes(&wells_bytes).map_err(runtime)?;
    let split = cfg.load_split().map_err(runtime)?;
    let (features, _) = extract_features(&model, &split.test, cfg.batch_size).map_err(runtime)?;
    let eval = hopwell::energy::evaluate_batch(
        features.view(),
        &split.test.labels,
        &wells,
        &cfg.energy_params(),
    )
    .map_err(runtime)?;
    let mut lines = Vec::new();
    for (index, (pred, &label)) in eval.predictions.iter().zip(&split.test.labels).enumerate() {
        let record = hopwell::energy::PredictionRecord {
            index,
            label,
            pred: pred.class,
            converged: pred.converged,
            iters: pred.iterations_used,
        };
        lines.extend_from_slice(serde_json::to_string(&record).map_err(runtime)?.as_bytes());
        lines.push(b'\n');
    }
    write_atomic(&cfg.out_dir.join("predictions.jsonl"), &lines).map_err(runtime)?;
    println!(
        "accuracy {:.2}% over {} samples ({:.1}% converged)",
        eval.accuracy * 100.0,
        eval.predictions.len(),
        eval.convergence_rate * 100.0
    );
    Ok(())
}

fn cmd_pipeline(args: &ConfigArgs) -> Result<(), CliError> {
    let cfg = resolve_config(args)?;
    let report = run_pipeline(&cfg).map_err(runtime)?;
    print!("{}", render_table(std::slice::from_ref(&report)));
    println!(
        "convergence {:.1}%; artifacts in {}",
        report.convergence_rate * 100.0,
        cfg.out_dir.display()
    );
    Ok(())
}

fn cmd_sweep(args: &ConfigArgs, grid_path: &PathBuf) -> Result<(), CliError> {
    let cfg = resolve_config(args)?;
    let grid_text = fs::read_to_string(grid_path)
        .map_err(|e| CliError::Usage(format!("cannot read grid {grid_path:?}: {e}")))?;
    let grid = SweepGrid::from_json(&grid_text)
        .map_err(|e| CliError::Usage(format!("bad grid {grid_path:?}: {e}")))?;
    let outcome = run_sweep(&cfg, &grid).map_err(runtime)?;
    let reports = outcome.reports();
    write_atomic(
        &cfg.out_dir.join("sweep_cells.json"),
        serde_json::to_string_pretty(&outcome.cells)
            .map_err(runtime)?
            .as_bytes(),
    )
    .map_err(runtime)?;
    if !reports.is_empty() {
        emit_report(&reports, &cfg.out_dir, "sweep").map_err(runtime)?;
        print!("{}", render_table(&reports));
    }
    let failed = outcome.cells.iter().filter(|c| c.error.is_some()).count();
    println!(
        "{} cells, {} trainings, {} failed; reports in {}",
        outcome.cells.len(),
        outcome.trainings,
        failed,
        cfg.out_dir.display()
    );
    for cell in outcome.cells.iter().filter(|c| c.error.is_some()) {
        eprintln!(
            "failed cell (K={}, beta={}): {}",
            cell.config.wells_per_class,
            cell.config.beta,
            cell.error.as_deref().unwrap_or("unknown")
        );
    }
    Ok(())
}

fn cmd_report(from: &[PathBuf], out_dir: &std::path::Path) -> Result<(), CliError> {
    let mut reports: Vec<ExperimentReport> = Vec::new();
    for path in from {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read {path:?}: {e}")))?;
        // accept a single report or an array of reports
        match serde_json::from_str::<Vec<ExperimentReport>>(&text) {
            Ok(mut list) => reports.append(&mut list),
            Err(_) => reports.push(
                serde_json::from_str::<ExperimentReport>(&text)
                    .map_err(|e| CliError::Usage(format!("bad report {path:?}: {e}")))?,
            ),
        }
    }
    if reports.is_empty() {
        return Err(CliError::Usage("no reports found".into()));
    }
    emit_report(&reports, out_dir, "report").map_err(runtime)?;
    print!("{}", render_table(&reports));
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Wells { cfg, checkpoint } => cmd_wells(cfg, checkpoint),
        Command::Eval {
            cfg,
            checkpoint,
            wells,
        } => cmd_eval(cfg, checkpoint, wells),
        Command::Pipeline(args) => cmd_pipeline(args),
        Command::Sweep { cfg, grid } => cmd_sweep(cfg, grid),
        Command::Verify => {
            let report = run_verification(&VerifyOptions::default());
            print!("{}", report.render());
            return if report.all_passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            };
        }
        Command::Report { from, out_dir } => cmd_report(from, out_dir),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.code())
        }
    }
}
