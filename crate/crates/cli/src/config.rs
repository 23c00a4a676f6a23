use std::path::{Path, PathBuf};

use density_core::baseline::{Variant, BIN_CANDIDATES};
use density_core::cnn::{AugmentationPolicy, CnnTrainOptions, MultiColumnConfig};
use density_core::experiment::{default_readers, SimulatedReader};
use density_core::synthgen::PhantomConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus_dir: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub generation: GenerationConfig,
    pub split_fractions: [f64; 3],
    pub baseline: BaselineConfig,
    pub cnn: CnnConfig,
    pub augmentation: AugmentationPolicy,
    pub study: StudyConfig,
    pub reader_study: ReaderStudyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus_dir: PathBuf::from("corpus"),
            out_dir: PathBuf::from("out"),
            seed: 0,
            generation: GenerationConfig::default(),
            split_fractions: [0.8, 0.1, 0.1],
            baseline: BaselineConfig::default(),
            cnn: CnnConfig::default(),
            augmentation: AugmentationPolicy::default(),
            study: StudyConfig::default(),
            reader_study: ReaderStudyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub exams: usize,
    pub min_exams_per_patient: usize,
    pub max_exams_per_patient: usize,
    pub phantom: PhantomConfig,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            exams: 2000,
            min_exams_per_patient: 1,
            max_exams_per_patient: 3,
            phantom: PhantomConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineChoice {
    /// Both variants, keeping the better one on validation.
    Auto,
    Linear,
    Hidden100,
}

impl BaselineChoice {
    pub fn variants(self) -> Option<Variant> {
        match self {
            BaselineChoice::Auto => None,
            BaselineChoice::Linear => Some(Variant::Linear),
            BaselineChoice::Hidden100 => Some(Variant::Hidden100),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub variant: BaselineChoice,
    pub bin_candidates: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub training_fraction: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            variant: BaselineChoice::Auto,
            bin_candidates: BIN_CANDIDATES.to_vec(),
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 32,
            training_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnConfig {
    /// Explicit architecture; the desk stack sized to the generated images
    /// when absent.
    pub architecture: Option<MultiColumnConfig>,
    pub share_columns: bool,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub training_fraction: f64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            architecture: None,
            share_columns: true,
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 8,
            training_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Epochs for the scratch and transfer arms and for BI-RADS pretraining.
    pub scratch_epochs: usize,
    pub transfer_epochs: usize,
    pub pretrain_epochs: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            fractions: vec![0.01, 0.1, 1.0],
            seeds: vec![0, 1, 2, 3, 4],
            scratch_epochs: 50,
            transfer_epochs: 50,
            pretrain_epochs: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReaderStudyConfig {
    pub sample_size: usize,
    /// Readers written by `simulate-readers`.
    pub readers: Vec<SimulatedReader>,
}

impl Default for ReaderStudyConfig {
    fn default() -> Self {
        Self {
            sample_size: 100,
            readers: default_readers(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        for (name, f) in [
            (
                "baseline.training_fraction",
                self.baseline.training_fraction,
            ),
            ("cnn.training_fraction", self.cnn.training_fraction),
        ]
        .into_iter()
        .chain(self.study.fractions.iter().map(|&f| ("study.fractions", f)))
        {
            if !(f > 0.0 && f <= 1.0) {
                return Err(CliError::Config(format!("{name} = {f} is outside (0, 1]")));
            }
        }
        let g = &self.generation;
        if g.min_exams_per_patient == 0 || g.min_exams_per_patient > g.max_exams_per_patient {
            return Err(CliError::Config(
                "exams per patient must satisfy 1 ≤ min ≤ max".into(),
            ));
        }
        Ok(())
    }

    pub fn architecture(&self) -> MultiColumnConfig {
        let p = &self.generation.phantom;
        let mut c = self
            .cnn
            .architecture
            .clone()
            .unwrap_or_else(|| MultiColumnConfig::desk(p.height, p.width, 4));
        c.share_columns = self.cnn.share_columns;
        c
    }

    pub fn cnn_options(&self, seed: u64, epochs: usize) -> CnnTrainOptions {
        CnnTrainOptions {
            learning_rate: self.cnn.learning_rate,
            epochs,
            batch_size: self.cnn.batch_size,
            seed,
        }
    }
}
