use std::path::Path;

use density_core::baseline::BaselineError;
use density_core::cnn::CnnError;
use density_core::corpus::{CorpusError, PgmError};
use density_core::evalkit::EvalError;
use density_core::experiment::ExperimentError;
use density_core::numerics::NumericsError;
use density_core::synthgen::SynthError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("missing artifact {0}")]
    MissingArtifact(String),
    #[error("{0}")]
    Format(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Training(String),
    #[error("{0}")]
    Evaluation(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Stable category printed ahead of the message.
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::MissingArtifact(_) => "missing-artifact",
            CliError::Format(_) => "format",
            CliError::Data(_) => "data",
            CliError::Training(_) => "training",
            CliError::Evaluation(_) => "evaluation",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } | CliError::MissingArtifact(_) => 3,
            CliError::Format(_) | CliError::Data(_) => 4,
            CliError::Training(_) | CliError::Evaluation(_) => 5,
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Pgm(p) => p.into(),
            CorpusError::Io { path, source } => CliError::Io { path, source },
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<PgmError> for CliError {
    fn from(e: PgmError) -> Self {
        match e {
            PgmError::Io { path, source } => CliError::Io { path, source },
            other => CliError::Format(other.to_string()),
        }
    }
}

impl From<NumericsError> for CliError {
    fn from(e: NumericsError) -> Self {
        CliError::Format(e.to_string())
    }
}

impl From<BaselineError> for CliError {
    fn from(e: BaselineError) -> Self {
        CliError::Training(e.to_string())
    }
}

impl From<CnnError> for CliError {
    fn from(e: CnnError) -> Self {
        CliError::Training(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::RankingsCsv(_) | EvalError::RocCsv(_) | EvalError::InvalidRanking(_) => {
                CliError::Format(e.to_string())
            }
            other => CliError::Evaluation(other.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Synth(e) => e.into(),
            ExperimentError::Corpus(e) => e.into(),
            ExperimentError::Baseline(e) => e.into(),
            ExperimentError::Cnn(e) => e.into(),
            ExperimentError::Eval(e) => e.into(),
            ExperimentError::Fraction(_) => CliError::Config(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}
