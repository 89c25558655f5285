//! Run configuration: a TOML file merged with command-line flags.

use std::path::{Path, PathBuf};

use bimanual_core::data::Variation;
use bimanual_core::evaluation::AblationMode;
use bimanual_core::gn::ModelConfig;
use bimanual_core::relations::RelationConfig;
use bimanual_core::tracking::SmoothingConfig;
use bimanual_core::training::TrainingConfig;
use bimanual_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Environment variable naming a config file when `--config` is absent.
pub const CONFIG_ENV: &str = "BIMANUAL_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Shipped suites whose tasks are generated, in order.
    pub suites: Vec<String>,
    pub subjects: u32,
    pub repetitions: u32,
    pub variation: Variation,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            suites: vec!["kitchen-mini".into(), "workshop-mini".into()],
            subjects: 4,
            repetitions: 4,
            variation: Variation::default(),
        }
    }
}

/// The tunable part of the architecture; input and output widths follow
/// from the vocabularies and the ablation mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub latent: usize,
    pub steps: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection { latent: m.latent, steps: m.steps }
    }
}

impl ModelSection {
    pub fn base(&self) -> ModelConfig {
        ModelConfig { latent: self.latent, steps: self.steps, ..ModelConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub ablation: AblationMode,
    pub top_k: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig { ablation: AblationMode::Full, top_k: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of all randomness.
    pub seed: u64,
    /// Run directories are created below this directory.
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub relations: RelationConfig,
    pub smoothing: SmoothingConfig,
    pub model: ModelSection,
    pub training: TrainingConfig,
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: PathBuf::from("runs"),
            data: DataConfig::default(),
            relations: RelationConfig::default(),
            smoothing: SmoothingConfig::default(),
            model: ModelSection::default(),
            training: TrainingConfig::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

/// Desk-scale preset: small latent width and strided training frames so a
/// full leave-one-subject-out run fits on one CPU core.
pub const DESK_PRESET: &str = include_str!("../configs/desk.toml");

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string().replace('\n', " ")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Config(format!("{}: {e}", path.display())),
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// `--config`, else the environment override, else defaults.
    pub fn resolve(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::load(Path::new(&p)),
                _ => Ok(Self::default()),
            },
        }
    }

    pub fn desk() -> Self {
        Self::from_toml(DESK_PRESET).expect("shipped preset parses")
    }

    pub fn validate(&self) -> Result<()> {
        self.relations.validate()?;
        self.smoothing.validate()?;
        self.training.validate()?;
        self.model.base().validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.data.subjects < 2 || self.data.repetitions < 1 || self.data.suites.is_empty() {
            return Err(Error::Config("data needs >= 2 subjects, >= 1 repetition and a suite".into()));
        }
        if self.experiment.top_k == 0 || self.experiment.top_k > bimanual_core::vocab::ActionLabel::COUNT {
            return Err(Error::Config(format!("top_k {} outside 1..=14", self.experiment.top_k)));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// The config without `output_dir`, so that where a run is written
    /// changes neither its hash nor its recorded `config.toml`.
    pub fn canonical_toml(&self) -> String {
        let mut table = toml::Table::try_from(self).expect("config serializes");
        table.remove("output_dir");
        toml::to_string(&table).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of [`Self::canonical_toml`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_toml().as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(self.hash())
    }
}
