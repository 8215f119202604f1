//! `mrnr` command-line front end: runs the pipeline stages on files.

mod config;
mod manifest;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mrnr::{Error, ErrorClass};

use config::{Overrides, PipelineConfig};
use stages::Context;

#[derive(Debug, Parser)]
#[command(name = "mrnr", version, about = "Multi-region neural representation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Width of the snapshot smoothing kernel, in samples.
    #[arg(long, global = true)]
    sigma_g: Option<f64>,
    /// Misclassification cost of the region classifiers.
    #[arg(long, global = true)]
    svm_c: Option<f64>,
    /// Positive category for training and evaluation.
    #[arg(long, global = true)]
    target: Option<String>,
    /// Seed of the simulation and of the label-shuffled control.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Experiment data directory.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Worker threads; all cores when unset.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic experiment to the data directory.
    Simulate,
    /// Design matrices, regressor maps and registration transforms.
    Design,
    /// Stimulus snapshots.
    Snapshot,
    /// Region features and correlation matrices.
    Extract,
    /// Final ensemble trained on all subjects.
    Train,
    /// Leave-one-subject-out evaluation.
    Evaluate,
    /// Every stage in order.
    Pipeline,
}

fn run(cli: &Cli) -> mrnr::Result<()> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot start {n} worker threads: {e}")))?;
    }
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    cfg.apply(&Overrides {
        sigma_g: cli.sigma_g,
        svm_c: cli.svm_c,
        target: cli.target.clone(),
        seed: cli.seed,
        out_dir: cli.out.clone(),
        data_dir: cli.data.clone(),
    });
    let ctx = Context::new(cfg)?;
    match cli.command {
        Command::Simulate => ctx.simulate(),
        Command::Design => ctx.design(),
        Command::Snapshot => ctx.snapshot(),
        Command::Extract => ctx.extract(),
        Command::Train => ctx.train(),
        Command::Evaluate => ctx.evaluate(),
        Command::Pipeline => ctx.pipeline(),
    }
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numerical => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let class = e.class();
            let record = serde_json::json!({
                "error": class.name(),
                "message": e.to_string(),
            });
            eprintln!("{record}");
            if let Some(out) = cli.out.as_ref() {
                let _ = mrnr::io::write_atomic(&out.join("error.json"), format!("{record}\n").as_bytes());
            }
            ExitCode::from(exit_code(class))
        }
    }
}
