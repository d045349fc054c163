//! Layered lab configuration: built-in defaults, then a `key = value` file,
//! then command-line flags.
//!
//! Keys without a prefix are training keys (see `TrainConfig::set`).
//! `gen.*`, `probe.*` and `geometry.*` address generator, probe and geometry
//! fields by their serialized names; nested fields use further dots, e.g.
//! `probe.adam.learning_rate`. `seed` sets every seed and `beta` is the
//! generator's `bias_strength`.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use fairrec_core::datagen::GenConfig;
use fairrec_core::evaluator::ProbeConfig;
use fairrec_core::fairrec::Mode;
use fairrec_core::trainer::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeometryConfig {
    pub dim: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            dim: 3,
            samples: 100_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LabConfig {
    pub gen: GenConfig,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    pub geometry: GeometryConfig,
}

/// Values given on the command line; `None` leaves the lower layers alone.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<Mode>,
    pub beta: Option<f64>,
    pub deterministic: bool,
}

fn set_path(root: &mut Value, path: &[&str], raw: &str) -> Result<()> {
    let mut node = root;
    for (i, part) in path.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| anyhow!("{} is not a section", path[..i].join(".")))?;
        let child = obj
            .get_mut(*part)
            .ok_or_else(|| anyhow!("unknown key {:?}", path[..=i].join(".")))?;
        node = child;
    }
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    *node = parsed;
    Ok(())
}

fn set_field<T: Serialize + DeserializeOwned>(section: &mut T, path: &[&str], raw: &str) -> Result<()> {
    let mut value = serde_json::to_value(&*section)?;
    set_path(&mut value, path, raw)?;
    *section = serde_json::from_value(value).with_context(|| format!("bad value {raw:?} for {}", path.join(".")))?;
    Ok(())
}

impl LabConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let parts: Vec<&str> = key.split('.').collect();
        match parts.as_slice() {
            ["seed"] => {
                let seed: u64 = value.parse().with_context(|| format!("seed = {value:?}"))?;
                self.set_seed(seed);
            }
            ["beta"] => set_field(&mut self.gen, &["bias_strength"], value)?,
            ["gen", rest @ ..] => set_field(&mut self.gen, rest, value)?,
            ["probe", rest @ ..] => set_field(&mut self.probe, rest, value)?,
            ["geometry", rest @ ..] => set_field(&mut self.geometry, rest, value)?,
            [_] => self.train.set(key, value)?,
            _ => bail!("unknown key {key:?}"),
        }
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.gen.seed = seed;
        self.train.seed = seed;
        self.probe.seed = seed;
        self.geometry.seed = seed;
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value", n + 1))?;
            self.set(key.trim(), value).with_context(|| format!("line {}", n + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        self.apply_text(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn apply_overrides(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.set_seed(seed);
        }
        if let Some(mode) = o.mode {
            self.train.mode = mode;
        }
        if let Some(beta) = o.beta {
            self.gen.bias_strength = beta;
        }
        if o.deterministic {
            self.train.deterministic = true;
        }
    }

    /// Defaults, then `file`, then `overrides`.
    pub fn layered(file: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut config = Self::default();
        if let Some(path) = file {
            config.apply_file(path)?;
        }
        config.apply_overrides(overrides);
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.train.validate()?;
        self.probe.validate()?;
        if self.geometry.dim < 3 || self.geometry.samples == 0 {
            bail!("geometry needs dim >= 3 and at least one sample");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefixed_and_nested_keys() {
        let mut c = LabConfig::default();
        c.apply_text(
            "gen.num_users = 120\ngen.title_len_range = [3, 9]\nprobe.adam.learning_rate = 0.01\n\
             probe.encoder.word_dim = 8\ngeometry.dim = 5\nlambda_d = 0.25\nbeta = 0.3\n# comment\n",
        )
        .unwrap();
        assert_eq!(c.gen.num_users, 120);
        assert_eq!(c.gen.title_len_range, (3, 9));
        assert_eq!(c.probe.adam.learning_rate, 0.01);
        assert_eq!(c.probe.encoder.word_dim, 8);
        assert_eq!(c.geometry.dim, 5);
        assert_eq!(c.train.lambdas.orthogonal, 0.25);
        assert_eq!(c.gen.bias_strength, 0.3);
    }

    #[test]
    fn seed_key_reaches_every_section() {
        let mut c = LabConfig::default();
        c.set("seed", "11").unwrap();
        assert_eq!((c.gen.seed, c.train.seed, c.probe.seed, c.geometry.seed), (11, 11, 11, 11));
        c.set("gen.seed", "3").unwrap();
        assert_eq!((c.gen.seed, c.train.seed), (3, 11));
    }

    #[test]
    fn unknown_keys_and_bad_values_fail() {
        let mut c = LabConfig::default();
        assert!(c.set("gen.nope", "1").is_err());
        assert!(c.set("nope", "1").is_err());
        assert!(c.set("gen.num_users", "many").is_err());
        assert!(c.set("mode", "fancy").is_err());
        assert!(c.apply_text("epochs 3").is_err());
    }
}
