//! One manifest per run, written next to the run's outputs.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::LabConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub argv: Vec<String>,
    pub config: LabConfig,
    /// Flat `key = value` form of the training configuration.
    pub train_config_text: String,
    pub seed: u64,
    /// Relative to the output directory.
    pub artifacts: Vec<PathBuf>,
    pub tool_version: String,
    pub duration_secs: f64,
}

impl RunManifest {
    pub fn new(subcommand: &str, argv: &[String], config: &LabConfig, artifacts: Vec<PathBuf>, duration: Duration) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            argv: argv.to_vec(),
            config: config.clone(),
            train_config_text: config.train.to_text(),
            seed: config.train.seed,
            artifacts,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            duration_secs: duration.as_secs_f64(),
        }
    }

    pub fn file_name(subcommand: &str) -> String {
        format!("{subcommand}.manifest.json")
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(Self::file_name(&self.subcommand));
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
