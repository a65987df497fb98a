//! TOML experiment configuration. Every section is optional and falls back
//! to its defaults; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::BaselineKind;
use crate::data::DataSpec;
use crate::error::{Error, Result};
use crate::oracle::OracleConfig;
use crate::search::SearchConfig;
use crate::space::SpaceSpec;
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seed for training and search. The dataset keeps its own seed so one
    /// oracle serves every training seed.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub space: SpaceSpec,
    pub data: DataSpec,
    pub train: TrainConfig,
    pub search: SearchConfig,
    pub oracle: OracleConfig,
    pub baseline: Option<BaselineKind>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out_dir: PathBuf::from("runs"),
            space: SpaceSpec::default(),
            data: DataSpec::default(),
            train: TrainConfig::default(),
            search: SearchConfig::default(),
            oracle: OracleConfig::default(),
            baseline: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.train.seed != 0 || cfg.search.seed != 0 {
            return Err(Error::Config("set `seed` at the top level, not inside [train] or [search]".into()));
        }
        let mut cfg = cfg;
        cfg.set_seed(cfg.seed);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Sets the global seed and propagates it to training and search.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        self.search.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.space.validate()?;
        self.train.validate()?;
        self.search.validate()?;
        self.oracle.validate()?;
        if self.data.input_dim() != self.space.input_dim || self.data.num_classes() != self.space.num_classes {
            return Err(Error::Config(format!(
                "dataset has {} inputs and {} classes but the space expects {} and {}",
                self.data.input_dim(),
                self.data.num_classes(),
                self.space.input_dim,
                self.space.num_classes
            )));
        }
        Ok(())
    }
}
