//! Training configuration and its flat `key = value` file format.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::fairrec::{Lambdas, Mode};
use crate::params::AdamConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    /// Negatives per clicked item.
    pub negative_ratio: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub lambdas: Lambdas,
    pub epochs: usize,
    /// Epochs without validation AUC improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Global gradient-norm cap; 0 disables clipping.
    pub grad_clip: f64,
    /// Extra discriminator-only updates after each joint step, on that
    /// batch's detached bias-free embeddings.
    pub adversary_steps: usize,
    pub deterministic: bool,
    pub val_fraction: f64,
    pub min_count: usize,
    /// Cap on batches per epoch; 0 uses every training sample.
    pub max_batches_per_epoch: usize,
    pub encoder: EncoderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::FairRec,
            negative_ratio: 4,
            batch_size: 30,
            adam: AdamConfig::default(),
            lambdas: Lambdas::default(),
            epochs: 5,
            patience: 3,
            seed: 0,
            grad_clip: 0.0,
            adversary_steps: 0,
            deterministic: false,
            val_fraction: 0.1,
            min_count: 1,
            max_batches_per_epoch: 0,
            encoder: EncoderConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::InvalidConfig(format!("{key} = {value:?}: {e}")))
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "mode" => self.mode = value.parse()?,
            "negative_ratio" => self.negative_ratio = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "learning_rate" => self.adam.learning_rate = parse(key, value)?,
            "beta1" => self.adam.beta1 = parse(key, value)?,
            "beta2" => self.adam.beta2 = parse(key, value)?,
            "epsilon" => self.adam.epsilon = parse(key, value)?,
            "lambda_g" => self.lambdas.gender = parse(key, value)?,
            "lambda_d" => self.lambdas.orthogonal = parse(key, value)?,
            "lambda_a" => self.lambdas.adversarial = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "grad_clip" => self.grad_clip = parse(key, value)?,
            "adversary_steps" => self.adversary_steps = parse(key, value)?,
            "deterministic" => self.deterministic = parse(key, value)?,
            "val_fraction" => self.val_fraction = parse(key, value)?,
            "min_count" => self.min_count = parse(key, value)?,
            "max_batches_per_epoch" => self.max_batches_per_epoch = parse(key, value)?,
            "word_dim" => self.encoder.word_dim = parse(key, value)?,
            "num_heads" => self.encoder.num_heads = parse(key, value)?,
            "head_out_dim" => self.encoder.head_out_dim = parse(key, value)?,
            "attention_query_dim" => self.encoder.attention_query_dim = parse(key, value)?,
            "dropout_rate" => self.encoder.dropout_rate = parse(key, value)?,
            "max_title_len" => self.encoder.max_title_len = parse(key, value)?,
            "max_history_len" => self.encoder.max_history_len = parse(key, value)?,
            _ => return Err(Error::InvalidConfig(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Apply `key = value` lines on top of `self`. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key = value", n + 1))
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    pub fn to_text(&self) -> String {
        let e = &self.encoder;
        let mut out = String::new();
        let mut line = |k: &str, v: String| writeln!(out, "{k} = {v}").unwrap();
        line("mode", self.mode.to_string());
        line("negative_ratio", self.negative_ratio.to_string());
        line("batch_size", self.batch_size.to_string());
        line("learning_rate", self.adam.learning_rate.to_string());
        line("beta1", self.adam.beta1.to_string());
        line("beta2", self.adam.beta2.to_string());
        line("epsilon", self.adam.epsilon.to_string());
        line("lambda_g", self.lambdas.gender.to_string());
        line("lambda_d", self.lambdas.orthogonal.to_string());
        line("lambda_a", self.lambdas.adversarial.to_string());
        line("epochs", self.epochs.to_string());
        line("patience", self.patience.to_string());
        line("seed", self.seed.to_string());
        line("grad_clip", self.grad_clip.to_string());
        line("adversary_steps", self.adversary_steps.to_string());
        line("deterministic", self.deterministic.to_string());
        line("val_fraction", self.val_fraction.to_string());
        line("min_count", self.min_count.to_string());
        line("max_batches_per_epoch", self.max_batches_per_epoch.to_string());
        line("word_dim", e.word_dim.to_string());
        line("num_heads", e.num_heads.to_string());
        line("head_out_dim", e.head_out_dim.to_string());
        line("attention_query_dim", e.attention_query_dim.to_string());
        line("dropout_rate", e.dropout_rate.to_string());
        line("max_title_len", e.max_title_len.to_string());
        line("max_history_len", e.max_history_len.to_string());
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.negative_ratio == 0 {
            return Err(Error::InvalidConfig("negative_ratio must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.adam.learning_rate <= 0.0 || self.adam.epsilon <= 0.0 {
            return Err(Error::InvalidConfig("rates must be positive".into()));
        }
        let l = self.lambdas;
        if [l.gender, l.orthogonal, l.adversarial].iter().any(|&x| x < 0.0) {
            return Err(Error::InvalidConfig("loss weights must be non-negative".into()));
        }
        if self.grad_clip < 0.0 {
            return Err(Error::InvalidConfig("grad_clip must be non-negative".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_hyperparameters() {
        let c = TrainConfig::default();
        assert_eq!((c.negative_ratio, c.batch_size), (4, 30));
        assert_eq!(c.adam, AdamConfig::default());
        assert_eq!(c.lambdas, Lambdas::default());
        assert_eq!(c.encoder.model_dim(), 256);
        assert_eq!(c.patience, 3);
    }

    #[test]
    fn text_round_trip_and_omitted_keys_keep_defaults() {
        let mut c = TrainConfig::default();
        c.apply_text("# comment\nmode = no_LD\nlambda_a=0.25\n\nword_dim = 12\n")
            .unwrap();
        assert_eq!(c.mode, Mode::NoLD);
        assert_eq!(c.lambdas.adversarial, 0.25);
        assert_eq!(c.lambdas.gender, 0.5);
        assert_eq!(c.encoder.word_dim, 12);
        let mut back = TrainConfig::default();
        back.apply_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn bad_lines_are_rejected() {
        let mut c = TrainConfig::default();
        assert!(c.apply_text("nonsense").is_err());
        assert!(c.apply_text("unknown = 1").is_err());
        assert!(c.apply_text("epochs = many").is_err());
        assert!(c.apply_text("mode = other").is_err());
    }
}
