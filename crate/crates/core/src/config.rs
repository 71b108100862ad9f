//! Model hyper-parameters and presets.

use serde::{Deserialize, Serialize};

use crate::condition::ConditionMode;
use crate::error::{Error, Result};
use crate::numerics::{LayerShape, NormPlacement};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionalScheme {
    #[default]
    Sinusoidal,
    Learned,
}

/// How a per-position trailerness scalar is merged into the embedding.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreFusion {
    /// Add the scalar to every dimension.
    #[default]
    Broadcast,
    /// Add `score * p` for a learned direction `p`.
    Projected,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionConfig {
    pub mode: ConditionMode,
    /// Width of the supplied condition vectors.
    pub dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub context_layers: usize,
    pub decoder_layers: usize,
    pub norm: NormPlacement,
    pub ln_eps: f64,
    /// `false` runs the ablation without the trailerness encoder.
    pub trailerness_encoder: bool,
    /// `false` feeds the trailerness-encoded sequence straight to the decoder.
    pub context_encoder: bool,
    pub score_fusion: ScoreFusion,
    pub stop_score_gradient: bool,
    /// Treat the end token as a constant where it appears as a decoder
    /// target, so only its use as an encoder input trains it.
    pub detach_eos_target: bool,
    pub positional: PositionalScheme,
    /// Longest framed sequence (shots + 2 frame tokens) the model accepts.
    pub max_positions: usize,
    /// Multiplier applied to shot embeddings before positions are added.
    /// `None` means `sqrt(d_model)`.
    pub embed_scale: Option<f64>,
    pub token_init_std: f64,
    pub condition: Option<ConditionConfig>,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Small dimensions suitable for CPU training in minutes.
    pub fn desk() -> Self {
        ModelConfig {
            d_model: 64,
            heads: 4,
            ff_dim: 128,
            context_layers: 4,
            decoder_layers: 5,
            norm: NormPlacement::Post,
            ln_eps: 1e-5,
            trailerness_encoder: true,
            context_encoder: true,
            score_fusion: ScoreFusion::Broadcast,
            stop_score_gradient: false,
            detach_eos_target: true,
            positional: PositionalScheme::Sinusoidal,
            max_positions: 1024,
            embed_scale: None,
            token_init_std: 0.02,
            condition: None,
            init_seed: 0,
        }
    }

    /// Full-size dimensions: width 1024, 8 heads, feed-forward 2048.
    pub fn full() -> Self {
        ModelConfig { d_model: 1024, heads: 8, ff_dim: 2048, ..Self::desk() }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            other => Err(Error::Config(format!("unknown model preset {other:?}"))),
        }
    }

    pub fn layer_shape(&self) -> LayerShape {
        LayerShape { d_model: self.d_model, heads: self.heads, ff_dim: self.ff_dim, norm: self.norm, ln_eps: self.ln_eps }
    }

    pub fn scale(&self) -> f64 {
        self.embed_scale.unwrap_or((self.d_model as f64).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        self.layer_shape().validate()?;
        if self.positional == PositionalScheme::Sinusoidal && !self.d_model.is_multiple_of(2) {
            return Err(Error::Config("sinusoidal positions need an even d_model".into()));
        }
        if self.decoder_layers == 0 {
            return Err(Error::Config("decoder needs at least one layer".into()));
        }
        if self.context_encoder && self.context_layers == 0 {
            return Err(Error::Config("context encoder enabled with zero layers".into()));
        }
        if let Some(c) = &self.condition {
            if c.dim == 0 {
                return Err(Error::Config("condition width must be positive".into()));
            }
        }
        if self.max_positions < 3 {
            return Err(Error::Config("max_positions must cover at least one framed shot".into()));
        }
        Ok(())
    }
}
