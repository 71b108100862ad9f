//! Training hyper-parameters and the TOML run configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::synthdata::GeneratorConfig;

use super::optimizer::AdamWConfig;
use super::schedule::Schedule;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_peak: f64,
    /// Explicit warm-up length; `None` uses `warmup_fraction` of the total.
    pub warmup_steps: Option<usize>,
    pub warmup_fraction: f64,
    /// Explicit step budget; `None` means `epochs * ceil(pairs / batch_size)`.
    pub total_steps: Option<usize>,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: AdamWConfig,
    pub seed: u64,
    pub loss_weights: LossWeights,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Divide each pair's losses by its sequence lengths.
    pub normalize_losses: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_peak: 1e-4,
            warmup_steps: None,
            warmup_fraction: 0.05,
            total_steps: None,
            batch_size: 8,
            epochs: 200,
            optimizer: AdamWConfig::default(),
            seed: 0,
            loss_weights: LossWeights::default(),
            clip_norm: Some(1.0),
            normalize_losses: false,
        }
    }
}

impl TrainConfig {
    pub fn steps_per_epoch(&self, pairs: usize) -> usize {
        pairs.div_ceil(self.batch_size.max(1))
    }

    pub fn resolved_total(&self, pairs: usize) -> usize {
        self.total_steps.unwrap_or(self.epochs * self.steps_per_epoch(pairs))
    }

    pub fn schedule(&self, pairs: usize) -> Result<Schedule> {
        let total = self.resolved_total(pairs);
        let warmup = self.warmup_steps.unwrap_or((self.warmup_fraction * total as f64).round() as usize);
        Schedule::new(self.lr_peak, warmup.min(total.saturating_sub(1)), total)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config("warmup_fraction must lie in [0, 1)".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config("clip_norm must be positive".into()));
            }
        }
        let o = &self.optimizer;
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || o.eps <= 0.0 || o.weight_decay < 0.0 {
            return Err(Error::Config("invalid optimizer hyper-parameters".into()));
        }
        if let (Some(w), Some(t)) = (self.warmup_steps, self.total_steps) {
            if t > 0 && w >= t {
                return Err(Error::Config(format!("warmup {w} must be below total {t}")));
            }
        }
        Ok(())
    }
}

/// `[model]`, `[train]` and `[data]` sections of a run configuration file.
/// `model.preset` picks the base dimensions that the other keys override.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: GeneratorConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut root: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let model = match root.remove("model") {
            Some(toml::Value::Table(mut t)) => {
                let preset = match t.remove("preset") {
                    Some(toml::Value::String(s)) => s,
                    Some(_) => return Err(Error::Config("model.preset must be a string".into())),
                    None => "desk".into(),
                };
                let base = toml::Table::try_from(ModelConfig::preset(&preset)?).map_err(|e| Error::Config(e.to_string()))?;
                let mut merged = base;
                merged.extend(t);
                merged.try_into().map_err(|e: toml::de::Error| Error::Config(format!("[model]: {e}")))?
            }
            Some(_) => return Err(Error::Config("[model] must be a table".into())),
            None => ModelConfig::desk(),
        };
        let section = |root: &mut toml::Table, name: &str| root.remove(name).unwrap_or(toml::Value::Table(toml::Table::new()));
        let train: TrainConfig =
            section(&mut root, "train").try_into().map_err(|e: toml::de::Error| Error::Config(format!("[train]: {e}")))?;
        let data: GeneratorConfig =
            section(&mut root, "data").try_into().map_err(|e: toml::de::Error| Error::Config(format!("[data]: {e}")))?;
        if let Some(key) = root.keys().next() {
            return Err(Error::Config(format!("unknown section {key:?}")));
        }
        model.validate()?;
        train.validate()?;
        data.validate()?;
        Ok(RunConfig { model, train, data })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }
}
