//! Movie encoder: trailerness prediction, score fusion and the context
//! self-attention stack.

use rand::Rng;

use crate::config::{ModelConfig, ScoreFusion};
use crate::error::{Error, Result};
use crate::numerics::{normal_init, AttentionMask, EncoderLayer, Graph, Linear, ParamId, ParamStore, Real, Var};

/// Learnable start/end frame tokens, stored in raw embedding space.
#[derive(Clone, Debug)]
pub struct SpecialTokens {
    pub sos: ParamId,
    pub eos: ParamId,
}

impl SpecialTokens {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, d: usize, std: f64) -> Result<Self> {
        Ok(SpecialTokens {
            sos: store.add("tokens.sos", normal_init(rng, &[1, d], std))?,
            eos: store.add("tokens.eos", normal_init(rng, &[1, d], std))?,
        })
    }
}

/// One self-attention encoder layer, a `d -> 1` linear head and a sigmoid.
#[derive(Clone, Debug)]
pub struct TrailernessEncoder {
    pub layer: EncoderLayer,
    pub head: Linear,
    /// Learned direction for [`ScoreFusion::Projected`].
    pub fusion_direction: Option<ParamId>,
}

impl TrailernessEncoder {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, cfg: &ModelConfig) -> Result<Self> {
        let layer = EncoderLayer::new(store, rng, "trailerness.layer", &cfg.layer_shape())?;
        let head = Linear::new(store, rng, "trailerness.head", cfg.d_model, 1)?;
        let fusion_direction = match cfg.score_fusion {
            ScoreFusion::Broadcast => None,
            ScoreFusion::Projected => Some(store.add(
                "trailerness.fusion",
                crate::numerics::Tensor::full(&[1, cfg.d_model], T::one()),
            )?),
        };
        Ok(TrailernessEncoder { layer, head, fusion_direction })
    }

    /// Scores in `(0, 1)` for every row of the positionally encoded, framed
    /// movie; shaped `[L, 1]`.
    pub fn predict<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        framed: Var,
        mask: Option<&AttentionMask>,
    ) -> Result<Var> {
        if g.value(framed).rows() < 2 {
            return Err(Error::Contract("trailerness prediction needs the start and end tokens".into()));
        }
        let h = self.layer.forward(g, store, framed, mask)?;
        let logits = self.head.forward(g, store, h)?;
        g.sigmoid(logits)
    }

    /// Adds the scores into `framed` using the configured fusion rule.
    pub fn fuse<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, framed: Var, scores: Var) -> Result<Var> {
        match self.fusion_direction {
            None => trailerness_encode(g, framed, scores),
            Some(dir) => {
                if g.value(framed).rows() != g.value(scores).len() {
                    return Err(Error::Contract("score count differs from sequence length".into()));
                }
                let p = g.param(store, dir)?;
                let shift = g.matmul(scores, p)?;
                g.add(framed, shift)
            }
        }
    }
}

/// Row `i` of `framed` plus `scores[i]` in every dimension.
pub fn trailerness_encode<T: Real>(g: &mut Graph<T>, framed: Var, scores: Var) -> Result<Var> {
    if g.value(framed).rows() != g.value(scores).len() {
        return Err(Error::Contract(format!(
            "{} scores for {} positions",
            g.value(scores).len(),
            g.value(framed).rows()
        )));
    }
    g.add_col(framed, scores)
}

/// Stack of unmasked self-attention encoder layers.
#[derive(Clone, Debug)]
pub struct ContextEncoder {
    pub layers: Vec<EncoderLayer>,
}

impl ContextEncoder {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, cfg: &ModelConfig) -> Result<Self> {
        let layers = (0..cfg.context_layers)
            .map(|i| EncoderLayer::new(store, rng, &format!("context.layer{i}"), &cfg.layer_shape()))
            .collect::<Result<_>>()?;
        Ok(ContextEncoder { layers })
    }

    /// `mask` only hides padding; every real position sees every other.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        fused: Var,
        mask: Option<&AttentionMask>,
    ) -> Result<Var> {
        let mut h = fused;
        for layer in &self.layers {
            h = layer.forward(g, store, h, mask)?;
        }
        Ok(h)
    }
}

/// Trailerness encoder (optional) followed by the context encoder (optional).
#[derive(Clone, Debug)]
pub struct MovieEncoder {
    pub trailerness: Option<TrailernessEncoder>,
    pub context: Option<ContextEncoder>,
    pub stop_score_gradient: bool,
}

pub struct EncoderOutput {
    /// `[L, 1]` predicted scores when the trailerness encoder is enabled.
    pub scores: Option<Var>,
    pub fused: Var,
    pub context: Var,
}

impl MovieEncoder {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, cfg: &ModelConfig) -> Result<Self> {
        let trailerness = if cfg.trailerness_encoder { Some(TrailernessEncoder::new(store, rng, cfg)?) } else { None };
        let context = if cfg.context_encoder { Some(ContextEncoder::new(store, rng, cfg)?) } else { None };
        Ok(MovieEncoder { trailerness, context, stop_score_gradient: cfg.stop_score_gradient })
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        framed: Var,
        mask: Option<&AttentionMask>,
    ) -> Result<EncoderOutput> {
        let (scores, fused) = match &self.trailerness {
            Some(te) => {
                let scores = te.predict(g, store, framed, mask)?;
                let fuse_in = if self.stop_score_gradient { g.detach(scores)? } else { scores };
                (Some(scores), te.fuse(g, store, framed, fuse_in)?)
            }
            None => (None, framed),
        };
        let context = match &self.context {
            Some(ce) => ce.forward(g, store, fused, mask)?,
            None => fused,
        };
        Ok(EncoderOutput { scores, fused, context })
    }
}
