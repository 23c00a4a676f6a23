//! `density`: generate synthetic screening corpora, train histogram and
//! multi-column CNN classifiers, and run the evaluation and agreement
//! studies.

mod commands;
mod config;
mod error;
mod store;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use density_core::corpus::Partition;

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "density",
    version,
    about = "Breast-density experiments on synthetic phantoms"
)]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (the corpus directory for `generate`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Corpus directory written by `generate`.
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PartitionArg {
    Validation,
    Test,
}

impl From<PartitionArg> for Partition {
    fn from(p: PartitionArg) -> Self {
        match p {
            PartitionArg::Validation => Partition::Validation,
            PartitionArg::Test => Partition::Test,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic corpus: PGM views, manifest and ground truth.
    Generate {
        #[arg(long)]
        exams: Option<usize>,
    },
    /// Exclude exams without a density label and split patients by date.
    Split,
    /// Train the histogram baseline, tuning the bin count on validation.
    TrainBaseline,
    /// Train the multi-column CNN on density labels.
    TrainCnn {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        fraction: Option<f64>,
        /// Pretrained BI-RADS weights to transfer from.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Train the 3-way BI-RADS model used for transfer initialisation.
    PretrainBirads {
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Compare transfer-initialised and scratch CNNs over several seeds.
    TransferStudy,
    /// Top-k, superclass, per-class AUC, macAUC and confusion matrix.
    Eval {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        partition: PartitionArg,
    },
    /// One-vs-rest ROC curves, one CSV per class.
    Roc {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        partition: PartitionArg,
    },
    /// Train on fractions of the training split over several seeds; with
    /// `--init`, a transfer-initialised arm runs alongside the scratch arm.
    ScaleStudy {
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Agreement tables and human-versus-model macAUC from reader rankings.
    ReaderStudy {
        #[arg(long)]
        rankings: PathBuf,
        #[arg(long)]
        cnn: Option<PathBuf>,
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Write rankings by simulated readers for the reader-study sample.
    SimulateReaders,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(corpus) = cli.corpus {
        cfg.corpus_dir = corpus;
    }
    if let Some(out) = cli.out {
        if matches!(cli.command, Command::Generate { .. }) {
            cfg.corpus_dir = out;
        } else {
            cfg.out_dir = out;
        }
    }
    match cli.command {
        Command::Generate { exams } => {
            if let Some(n) = exams {
                cfg.generation.exams = n;
            }
            cfg.validate()?;
            commands::generate(&cfg)
        }
        Command::Split => {
            cfg.validate()?;
            commands::split(&cfg)
        }
        Command::TrainBaseline => {
            cfg.validate()?;
            commands::train_baseline(&cfg)
        }
        Command::TrainCnn {
            epochs,
            fraction,
            init,
        } => {
            if let Some(e) = epochs {
                cfg.cnn.epochs = e;
            }
            if let Some(f) = fraction {
                cfg.cnn.training_fraction = f;
            }
            cfg.validate()?;
            commands::train_cnn(&cfg, init.as_deref())
        }
        Command::PretrainBirads { epochs } => {
            if let Some(e) = epochs {
                cfg.study.pretrain_epochs = e;
            }
            cfg.validate()?;
            commands::pretrain_birads(&cfg)
        }
        Command::TransferStudy => {
            cfg.validate()?;
            commands::transfer_study(&cfg)
        }
        Command::Eval { model, partition } => {
            cfg.validate()?;
            commands::eval(&cfg, model.as_deref(), partition.into())
        }
        Command::Roc { model, partition } => {
            cfg.validate()?;
            commands::roc(&cfg, model.as_deref(), partition.into())
        }
        Command::ScaleStudy { init } => {
            cfg.validate()?;
            commands::scale_study(&cfg, init.as_deref())
        }
        Command::ReaderStudy {
            rankings,
            cnn,
            baseline,
        } => {
            cfg.validate()?;
            commands::reader_study(&cfg, &rankings, cnn.as_deref(), baseline.as_deref())
        }
        Command::SimulateReaders => {
            cfg.validate()?;
            commands::simulate_readers(&cfg)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {message}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
