//! Single TOML file tying the pipeline stages together.
//!
//! ```toml
//! [gen]      # GenConfig
//! [encoder]  # EncoderConfig
//! [model]    # ModelConfig
//! [train]    # TrainConfig
//! [paths]
//! data_dir = "data"
//! run_dir = "runs/reference"
//! ```
//!
//! Missing keys take their defaults; unknown keys are rejected. Relative
//! paths resolve against the directory holding the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::heads::ModelConfig;
use crate::synthgen::GenConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub data_dir: PathBuf,
    pub run_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            run_dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub gen: GenConfig,
    pub encoder: EncoderConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub paths: Paths,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.encoder.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.encoder.d != self.model.d {
            return Err(Error::Config(format!(
                "encoder.d ({}) and model.d ({}) must match",
                self.encoder.d, self.model.d
            )));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse and validate a config file, resolving relative paths against
    /// its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg =
            Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.paths.data_dir = base.join(&cfg.paths.data_dir);
        cfg.paths.run_dir = base.join(&cfg.paths.run_dir);
        Ok(cfg)
    }
}
