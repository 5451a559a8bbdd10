//! Top-level JSON run configuration. Every section rejects unknown keys and
//! is validated before any work starts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowSolverConfig;
use crate::model::ModelConfig;
use crate::train::TrainConfig;
use crate::video::SynthDatasetConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Dataset directory holding `manifest.json`.
    pub root: Option<PathBuf>,
    /// Generator settings, used by `gen-data` and when no root is given.
    pub synthetic: Option<SynthDatasetConfig>,
    /// Directory for cached flow fields.
    pub flow_cache: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub flow: FlowSolverConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.flow.validate()?;
        if let Some(s) = &self.data.synthetic {
            s.validate()?;
        }
        Ok(())
    }
}
