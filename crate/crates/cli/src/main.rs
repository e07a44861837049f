//! `liverfat`: runs the phantom study stage by stage over plain files.
//!
//! Exit status is 0 on success, 1 for invalid arguments or settings and 2
//! when a stage fails at run time.

mod atlas;
mod cohort;
mod config;
mod files;
mod net;
mod preprocess;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::config::{Invalid, Overrides, Settings};

#[derive(Debug, Parser)]
#[command(name = "liverfat", version, about = "Liver fat quantification on synthetic water/fat phantoms")]
struct Cli {
    /// Settings file with `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; overrides `seed` in the settings file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for per-subject parallelism (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Full-size grids, input layout, erosion and training schedule.
    #[arg(long, global = true)]
    paper_scale: bool,

    #[command(subcommand)]
    command: Command,
}

/// Directory overrides shared by every stage.
#[derive(Debug, Args, Clone, Default)]
struct Dirs {
    /// Cohort directory (phantoms, templates, truth and splits).
    #[arg(long)]
    cohort: Option<PathBuf>,

    /// Work directory for stage outputs.
    #[arg(long)]
    work: Option<PathBuf>,

    /// Report output directory.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthetic cohort generation.
    #[command(subcommand)]
    Cohort(CohortCmd),
    /// Fractions, body masks and network inputs.
    #[command(subcommand)]
    Preprocess(PreprocessCmd),
    /// Multi-atlas readout and its linear calibration.
    #[command(subcommand)]
    Atlas(AtlasCmd),
    /// Network cross-validation, training and inference.
    #[command(subcommand)]
    Net(NetCmd),
    /// Method comparison tables and plots.
    #[command(subcommand)]
    Report(ReportCmd),
}

#[derive(Debug, Subcommand)]
enum CohortCmd {
    /// Write phantom stations, templates, truth.csv and splits.csv.
    Generate {
        /// Number of subjects; overrides `n_subjects`.
        #[arg(long)]
        n: Option<usize>,
        #[command(flatten)]
        dirs: Dirs,
    },
}

#[derive(Debug, Subcommand)]
enum PreprocessCmd {
    /// Preprocess every subject of the cohort.
    Run {
        #[command(flatten)]
        dirs: Dirs,
    },
}

#[derive(Debug, Subcommand)]
enum AtlasCmd {
    /// Measure every preprocessed subject; writes atlas.csv.
    Run {
        /// Calibration file applied to the corrected_ff column.
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[command(flatten)]
        dirs: Dirs,
    },
    /// Fit the correction on dataset A; writes calibration.txt.
    Calibrate {
        #[command(flatten)]
        dirs: Dirs,
    },
}

#[derive(Debug, Subcommand)]
enum NetCmd {
    /// K-fold cross-validation on dataset A.
    Cv {
        #[command(flatten)]
        dirs: Dirs,
    },
    /// Train on all of dataset A; writes model.ffn.
    TrainFull {
        #[command(flatten)]
        dirs: Dirs,
    },
    /// Predict dataset B with a trained model.
    Infer {
        /// Checkpoint to load (default: <work>/model.ffn).
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        dirs: Dirs,
    },
}

#[derive(Debug, Subcommand)]
enum ReportCmd {
    /// Metrics, Bland-Altman plots and outliers for the four comparisons.
    Compare {
        #[command(flatten)]
        dirs: Dirs,
    },
}

fn settings(cli: &Cli, dirs: &Dirs, n_subjects: Option<usize>) -> Result<Settings> {
    let text = match &cli.config {
        Some(path) => Some(
            std::fs::read_to_string(path)
                .map_err(|e| Invalid(format!("cannot read settings file {}: {e}", path.display())))?,
        ),
        None => None,
    };
    let ov = Overrides {
        seed: cli.seed,
        paper_scale: cli.paper_scale,
        n_subjects,
        cohort_dir: dirs.cohort.clone(),
        work_dir: dirs.work.clone(),
        report_dir: dirs.report.clone(),
    };
    let settings = Settings::resolve(text.as_deref(), &ov).context("invalid settings")?;
    Ok(settings)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Invalid("--workers must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("starting the worker pool")?;
    }
    match &cli.command {
        Command::Cohort(CohortCmd::Generate { n, dirs }) => cohort::generate(&settings(&cli, dirs, *n)?),
        Command::Preprocess(PreprocessCmd::Run { dirs }) => preprocess::run(&settings(&cli, dirs, None)?),
        Command::Atlas(AtlasCmd::Run { calibration, dirs }) => {
            atlas::run(&settings(&cli, dirs, None)?, calibration.as_deref())
        }
        Command::Atlas(AtlasCmd::Calibrate { dirs }) => atlas::calibrate(&settings(&cli, dirs, None)?),
        Command::Net(NetCmd::Cv { dirs }) => net::cv(&settings(&cli, dirs, None)?),
        Command::Net(NetCmd::TrainFull { dirs }) => net::train_full(&settings(&cli, dirs, None)?),
        Command::Net(NetCmd::Infer { model, dirs }) => net::infer(&settings(&cli, dirs, None)?, model.as_deref()),
        Command::Report(ReportCmd::Compare { dirs }) => report::compare(&settings(&cli, dirs, None)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.chain().any(|c| c.is::<Invalid>()) {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
