//! Externally supplied condition vectors (for example text embeddings of a
//! plot summary) appended to the decoder's cross-attention memory.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::{EncoderLayer, Graph, Linear, ParamStore, Real, Tensor, Var};
use crate::shotcore::{SequenceFile, SequenceRole};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionMode {
    /// Concatenate the (projected) vectors to the context as-is.
    Encoded,
    /// Run the vectors through one encoder layer before concatenating.
    Contextualized,
}

/// `L_c x d_c` condition matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionSequence {
    pub id: String,
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl ConditionSequence {
    pub fn new(id: impl Into<String>, rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::shape("condition", format!("{} values for {rows}x{dim}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("condition vectors must be finite".into()));
        }
        Ok(ConditionSequence { id: id.into(), rows, dim, data })
    }

    pub fn empty(dim: usize) -> Self {
        ConditionSequence { id: String::new(), rows: 0, dim, data: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn from_file(file: &SequenceFile) -> Result<Self> {
        if file.manifest.role != SequenceRole::Condition {
            return Err(Error::Format(format!("{} is not a condition file", file.manifest.id)));
        }
        Self::new(file.manifest.id.clone(), file.manifest.n, file.manifest.d, file.data.clone())
    }

    pub fn to_file(&self) -> SequenceFile {
        let rows: Vec<&[f32]> = self.data.chunks(self.dim.max(1)).collect();
        let mut f = SequenceFile::from_rows(&self.id, SequenceRole::Condition, &rows, None).expect("uniform rows");
        f.manifest.d = self.dim;
        f
    }

    pub fn tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::matrix(self.rows, self.dim, self.data.iter().map(|&v| T::from_f64_lossy(v as f64)).collect())
            .expect("validated shape")
    }
}

/// Projection (when widths differ) and optional contextualizing layer.
#[derive(Clone, Debug)]
pub struct ConditionEncoder {
    pub mode: ConditionMode,
    pub dim: usize,
    pub d_model: usize,
    pub projection: Option<Linear>,
    pub layer: Option<EncoderLayer>,
}

impl ConditionEncoder {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, cfg: &ModelConfig, mode: ConditionMode, dim: usize) -> Result<Self> {
        let projection =
            if dim != cfg.d_model { Some(Linear::new(store, rng, "condition.projection", dim, cfg.d_model)?) } else { None };
        let layer = match mode {
            ConditionMode::Encoded => None,
            ConditionMode::Contextualized => Some(EncoderLayer::new(store, rng, "condition.layer", &cfg.layer_shape())?),
        };
        Ok(ConditionEncoder { mode, dim, d_model: cfg.d_model, projection, layer })
    }

    /// Maps `L_c x d_c` raw vectors to `L_c x d_model` memory rows.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, cond: &ConditionSequence, scale: f64) -> Result<Var> {
        if cond.dim != self.dim {
            return Err(Error::Contract(format!("condition width {} but model expects {}", cond.dim, self.dim)));
        }
        if cond.is_empty() {
            return g.constant(Tensor::zeros(&[0, self.d_model]));
        }
        let raw = g.constant(cond.tensor())?;
        let mut h = g.scale(raw, T::from_f64_lossy(scale))?;
        if let Some(p) = &self.projection {
            h = p.forward(g, store, h)?;
        }
        if let Some(layer) = &self.layer {
            h = layer.forward(g, store, h, None)?;
        }
        Ok(h)
    }
}

/// Row-concatenates condition rows below the context.
pub fn augment_context<T: Real>(g: &mut Graph<T>, context: Var, cond: Option<Var>) -> Result<Var> {
    let Some(cond) = cond else { return Ok(context) };
    if g.value(cond).rows() == 0 {
        return Ok(context);
    }
    if g.value(cond).cols() != g.value(context).cols() {
        return Err(Error::Contract(format!(
            "condition width {} differs from context width {}",
            g.value(cond).cols(),
            g.value(context).cols()
        )));
    }
    g.concat_rows(&[context, cond])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> ModelConfig {
        ModelConfig { d_model: 8, heads: 2, ff_dim: 16, ..ModelConfig::desk() }
    }

    #[test]
    fn augmented_length_is_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f64>::new();
        let enc = ConditionEncoder::new(&mut store, &mut rng, &cfg(), ConditionMode::Encoded, 5).unwrap();
        let cond = ConditionSequence::new("c", 3, 5, (0..15).map(|i| i as f32 * 0.1).collect()).unwrap();
        let mut g = Graph::new();
        let c = g.constant(Tensor::zeros(&[6, 8])).unwrap();
        let cv = enc.forward(&mut g, &store, &cond, 1.0).unwrap();
        let mem = augment_context(&mut g, c, Some(cv)).unwrap();
        assert_eq!(g.value(mem).shape(), &[9, 8]);
    }

    #[test]
    fn empty_condition_passes_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::<f64>::new();
        let enc = ConditionEncoder::new(&mut store, &mut rng, &cfg(), ConditionMode::Contextualized, 8).unwrap();
        let mut g = Graph::new();
        let c = g.constant(Tensor::full(&[4, 8], 0.5)).unwrap();
        let cv = enc.forward(&mut g, &store, &ConditionSequence::empty(8), 1.0).unwrap();
        let mem = augment_context(&mut g, c, Some(cv)).unwrap();
        assert_eq!(mem, c);
    }

    #[test]
    fn width_mismatch_is_contract_error() {
        let mut g = Graph::<f64>::new();
        let c = g.constant(Tensor::zeros(&[4, 8])).unwrap();
        let cond = g.constant(Tensor::zeros(&[2, 6])).unwrap();
        assert!(matches!(augment_context(&mut g, c, Some(cond)), Err(Error::Contract(_))));
    }

    #[test]
    fn contextualized_adds_one_layer_of_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = ParamStore::<f64>::new();
        let mut b = ParamStore::<f64>::new();
        ConditionEncoder::new(&mut a, &mut rng, &cfg(), ConditionMode::Encoded, 5).unwrap();
        ConditionEncoder::new(&mut b, &mut rng, &cfg(), ConditionMode::Contextualized, 5).unwrap();
        let mut layer = ParamStore::<f64>::new();
        EncoderLayer::new(&mut layer, &mut rng, "x", &cfg().layer_shape()).unwrap();
        assert_eq!(a.num_scalars(), 5 * 8 + 8);
        assert_eq!(b.num_scalars() - a.num_scalars(), layer.num_scalars());
    }
}
