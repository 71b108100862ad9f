//! Transformer sublayers expressed as graph operations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{AttentionMask, Graph, Var};
use super::params::{xavier_uniform, ParamId, ParamStore};
use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Where layer normalisation sits relative to the residual branch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormPlacement {
    #[default]
    Post,
    Pre,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerShape {
    pub d_model: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub norm: NormPlacement,
    pub ln_eps: f64,
}

impl LayerShape {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if self.ff_dim == 0 {
            return Err(Error::Config("ff_dim must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        d_in: usize,
        d_out: usize,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), xavier_uniform(rng, d_in, d_out))?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[1, d_out]))?;
        Ok(Linear { weight, bias })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight)?;
        let b = g.param(store, self.bias)?;
        let h = g.matmul(x, w)?;
        g.add_row(h, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, d: usize, eps: f64) -> Result<Self> {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(&[1, d], T::one()))?;
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[1, d]))?;
        Ok(LayerNorm { gamma, beta, eps })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let gamma = g.param(store, self.gamma)?;
        let beta = g.param(store, self.beta)?;
        g.layer_norm_rows(x, gamma, beta, self.eps)
    }
}

/// Output of an attention call, including per-head weight matrices.
pub struct AttentionOutput {
    pub output: Var,
    pub weights: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        d: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(Error::Config(format!("d_model {d} is not divisible by {heads} heads")));
        }
        Ok(MultiHeadAttention {
            query: Linear::new(store, rng, &format!("{name}.query"), d, d)?,
            key: Linear::new(store, rng, &format!("{name}.key"), d, d)?,
            value: Linear::new(store, rng, &format!("{name}.value"), d, d)?,
            out: Linear::new(store, rng, &format!("{name}.out"), d, d)?,
            heads,
        })
    }

    /// `queries` is `Lq x d`, `keys_values` is `Lk x d`; `mask` is `Lq x Lk`.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        queries: Var,
        keys_values: Var,
        mask: Option<&AttentionMask>,
    ) -> Result<AttentionOutput> {
        let q = self.query.forward(g, store, queries)?;
        let k = self.key.forward(g, store, keys_values)?;
        let v = self.value.forward(g, store, keys_values)?;
        let d = g.value(q).cols();
        let (out, weights) = attend(g, q, k, v, self.heads, mask, d)?;
        let output = self.out.forward(g, store, out)?;
        Ok(AttentionOutput { output, weights })
    }
}

/// Scaled dot-product attention over already projected `q`, `k`, `v`,
/// split into `heads` column groups and concatenated back.
pub fn attend<T: Real>(
    g: &mut Graph<T>,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    mask: Option<&AttentionMask>,
    d: usize,
) -> Result<(Var, Vec<Var>)> {
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::Config(format!("d_model {d} is not divisible by {heads} heads")));
    }
    let (lq, lk) = (g.value(q).rows(), g.value(k).rows());
    if let Some(m) = mask {
        if (m.rows(), m.cols()) != (lq, lk) {
            return Err(Error::shape("attention", format!("mask {}x{} for {lq}x{lk}", m.rows(), m.cols())));
        }
    }
    let dh = d / heads;
    let scale = T::from_f64_lossy(1.0 / (dh as f64).sqrt());
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (g.slice_cols(q, h * dh, dh)?, g.slice_cols(k, h * dh, dh)?, g.slice_cols(v, h * dh, dh)?)
        };
        let logits = g.matmul_nt(qh, kh)?;
        let logits = g.scale(logits, scale)?;
        let w = g.softmax_rows(logits, mask)?;
        outs.push(g.matmul(w, vh)?);
        weights.push(w);
    }
    let out = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
    Ok((out, weights))
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, name: &str, d: usize, ff: usize) -> Result<Self> {
        Ok(FeedForward {
            up: Linear::new(store, rng, &format!("{name}.up"), d, ff)?,
            down: Linear::new(store, rng, &format!("{name}.down"), ff, d)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.up.forward(g, store, x)?;
        let h = g.relu(h)?;
        self.down.forward(g, store, h)
    }
}

/// Residual + normalisation wrapper shared by encoder and decoder layers.
fn residual<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    norm: &LayerNorm,
    placement: NormPlacement,
    x: Var,
    branch: impl FnOnce(&mut Graph<T>, Var) -> Result<Var>,
) -> Result<Var> {
    match placement {
        NormPlacement::Post => {
            let b = branch(g, x)?;
            let s = g.add(x, b)?;
            norm.forward(g, store, s)
        }
        NormPlacement::Pre => {
            let n = norm.forward(g, store, x)?;
            let b = branch(g, n)?;
            g.add(x, b)
        }
    }
}

/// Self-attention + feed-forward block.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ff: FeedForward,
    pub norm2: LayerNorm,
    pub placement: NormPlacement,
}

impl EncoderLayer {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, name: &str, shape: &LayerShape) -> Result<Self> {
        shape.validate()?;
        let d = shape.d_model;
        Ok(EncoderLayer {
            attn: MultiHeadAttention::new(store, rng, &format!("{name}.attn"), d, shape.heads)?,
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d, shape.ln_eps)?,
            ff: FeedForward::new(store, rng, &format!("{name}.ff"), d, shape.ff_dim)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d, shape.ln_eps)?,
            placement: shape.norm,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, mask: Option<&AttentionMask>) -> Result<Var> {
        let h = residual(g, store, &self.norm1, self.placement, x, |g, inp| {
            Ok(self.attn.forward(g, store, inp, inp, mask)?.output)
        })?;
        residual(g, store, &self.norm2, self.placement, h, |g, inp| self.ff.forward(g, store, inp))
    }
}

/// Masked self-attention, cross-attention over a memory, then feed-forward.
#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub self_attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ff: FeedForward,
    pub norm3: LayerNorm,
    pub placement: NormPlacement,
}

impl DecoderLayer {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, name: &str, shape: &LayerShape) -> Result<Self> {
        shape.validate()?;
        let d = shape.d_model;
        Ok(DecoderLayer {
            self_attn: MultiHeadAttention::new(store, rng, &format!("{name}.self_attn"), d, shape.heads)?,
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d, shape.ln_eps)?,
            cross_attn: MultiHeadAttention::new(store, rng, &format!("{name}.cross_attn"), d, shape.heads)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d, shape.ln_eps)?,
            ff: FeedForward::new(store, rng, &format!("{name}.ff"), d, shape.ff_dim)?,
            norm3: LayerNorm::new(store, &format!("{name}.norm3"), d, shape.ln_eps)?,
            placement: shape.norm,
        })
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        memory: Var,
        self_mask: &AttentionMask,
        cross_mask: Option<&AttentionMask>,
    ) -> Result<Var> {
        let h = residual(g, store, &self.norm1, self.placement, x, |g, inp| {
            Ok(self.self_attn.forward(g, store, inp, inp, Some(self_mask))?.output)
        })?;
        let h = residual(g, store, &self.norm2, self.placement, h, |g, inp| {
            Ok(self.cross_attn.forward(g, store, inp, memory, cross_mask)?.output)
        })?;
        residual(g, store, &self.norm3, self.placement, h, |g, inp| self.ff.forward(g, store, inp))
    }
}
