//! Self-describing JSON checkpoint of a trained K-shot supernet.
//!
//! Floats are written with shortest round-trip formatting, so a save/load
//! cycle is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::Sgd;
use crate::simplex::{self, SimplexCode, SimplexNetParams};
use crate::space::{SpaceSpec, Subnet};
use crate::supernet::WeightDictionary;
use crate::trainer::TrainConfig;

pub const CHECKPOINT_FORMAT: u32 = 1;

/// Where a path's code comes from at evaluation time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CodeMode {
    /// Generated per path by the simplex-net.
    Learned,
    /// One code shared by every path.
    Fixed { code: SimplexCode },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub space: SpaceSpec,
    pub config: TrainConfig,
    pub code_mode: CodeMode,
    pub dictionary: WeightDictionary,
    pub simplex: SimplexNetParams,
    pub dict_optimizer: Sgd,
    pub simplex_optimizer: Sgd,
    pub epochs_completed: usize,
    pub steps_completed: usize,
}

#[derive(Serialize)]
struct Envelope<'a> {
    format: u32,
    checkpoint: &'a Checkpoint,
}

#[derive(Deserialize)]
struct OwnedEnvelope {
    format: u32,
    checkpoint: Checkpoint,
}

impl Checkpoint {
    pub fn k(&self) -> usize {
        self.dictionary.k()
    }

    pub fn code_for(&self, subnet: &Subnet) -> Result<SimplexCode> {
        match &self.code_mode {
            CodeMode::Learned => simplex::generate_code(&self.simplex, &self.space, subnet),
            CodeMode::Fixed { code } => Ok(code.clone()),
        }
    }

    pub fn codes_for(&self, subnets: &[Subnet]) -> Result<Vec<SimplexCode>> {
        match &self.code_mode {
            CodeMode::Learned => simplex::generate_codes(&self.simplex, &self.space, subnets),
            CodeMode::Fixed { code } => Ok(vec![code.clone(); subnets.len()]),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(&Envelope {
            format: CHECKPOINT_FORMAT,
            checkpoint: self,
        })
        .map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let env: OwnedEnvelope = serde_json::from_str(text).map_err(|e| Error::Parse(format!("checkpoint: {e}")))?;
        if env.format != CHECKPOINT_FORMAT {
            return Err(Error::Parse(format!(
                "checkpoint format {} is not supported (expected {CHECKPOINT_FORMAT})",
                env.format
            )));
        }
        env.checkpoint.space.validate()?;
        Ok(env.checkpoint)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn space(&self) -> &SpaceSpec {
        &self.space
    }
}
