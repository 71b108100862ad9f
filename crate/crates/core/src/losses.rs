//! Trailerness, reconstruction and KL losses and their weighted sum.
//!
//! All three are sums over positions. Graph versions take a per-row weight
//! vector (1 for real rows, 0 for padding) so padded rows contribute nothing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{softmax_row, Graph, Real, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub trailerness: f64,
    pub reconstruction: f64,
    pub kl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { trailerness: 1.0, reconstruction: 1.0, kl: 1.0 }
    }
}

impl LossWeights {
    pub fn reconstruction_only() -> Self {
        LossWeights { trailerness: 0.0, reconstruction: 1.0, kl: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_t: f64,
    pub l_rec: f64,
    pub l_kl: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.l_t.is_finite() && self.l_rec.is_finite() && self.l_kl.is_finite() && self.total.is_finite()
    }
}

/// Weighted sum; unit weights give the plain sum of the three parts.
pub fn total_loss(l_t: f64, l_rec: f64, l_kl: f64, w: &LossWeights) -> LossBreakdown {
    LossBreakdown { l_t, l_rec, l_kl, total: w.trailerness * l_t + w.reconstruction * l_rec + w.kl * l_kl }
}

pub fn trailerness_loss(pred: &[f64], gt: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Contract(format!("{} predicted vs {} ground-truth scores", pred.len(), gt.len())));
    }
    Ok(pred.iter().zip(gt).map(|(p, t)| (p - t) * (p - t)).sum())
}

fn check_rows(pred: &[Vec<f64>], target: &[Vec<f64>]) -> Result<()> {
    if pred.len() != target.len() || pred.iter().zip(target).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::Contract("prediction and target shapes differ".into()));
    }
    Ok(())
}

/// `sum_j |pred_j - target_j|^2`; `target` already ends with the end token.
pub fn reconstruction_loss(pred: &[Vec<f64>], target: &[Vec<f64>]) -> Result<f64> {
    check_rows(pred, target)?;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum())
}

/// `sum_j KL(softmax(target_j) || softmax(pred_j))` with the softmax taken
/// over the embedding dimensions of each row.
pub fn kl_loss(pred: &[Vec<f64>], target: &[Vec<f64>]) -> Result<f64> {
    check_rows(pred, target)?;
    let mut total = 0.0;
    for (p, t) in pred.iter().zip(target) {
        let mut sp = vec![0.0; p.len()];
        let mut st = vec![0.0; t.len()];
        softmax_row(p, &mut sp, |_| true);
        softmax_row(t, &mut st, |_| true);
        total += st.iter().zip(&sp).map(|(&a, &b)| a * (a / b).ln()).sum::<f64>();
    }
    Ok(total)
}

fn row_weights<T: Real>(rows: usize, cols: usize, weights: &[f64]) -> Result<Tensor<T>> {
    if weights.len() != rows {
        return Err(Error::Contract(format!("{} row weights for {rows} rows", weights.len())));
    }
    let data = weights.iter().flat_map(|&w| std::iter::repeat_n(T::from_f64_lossy(w), cols)).collect();
    Tensor::matrix(rows, cols, data)
}

/// Graph form of [`trailerness_loss`]: `pred` is `[L, 1]`, `gt` has `L`
/// entries, `row_weight` masks padding.
pub fn trailerness_loss_graph<T: Real>(g: &mut Graph<T>, pred: Var, gt: &[f64], row_weight: &[f64]) -> Result<Var> {
    let l = g.value(pred).rows();
    if gt.len() != l {
        return Err(Error::Contract(format!("{} ground-truth scores for {l} positions", gt.len())));
    }
    let target = g.constant(Tensor::matrix(l, 1, gt.iter().map(|&v| T::from_f64_lossy(v)).collect())?)?;
    let diff = g.sub(pred, target)?;
    let sq = g.mul(diff, diff)?;
    let masked = g.mul_const(sq, row_weights(l, 1, row_weight)?)?;
    g.sum(masked)
}

pub fn reconstruction_loss_graph<T: Real>(g: &mut Graph<T>, pred: Var, target: Var, row_weight: &[f64]) -> Result<Var> {
    let (r, c) = (g.value(pred).rows(), g.value(pred).cols());
    if g.value(target).shape() != g.value(pred).shape() {
        return Err(Error::Contract("prediction and target shapes differ".into()));
    }
    let diff = g.sub(pred, target)?;
    let sq = g.mul(diff, diff)?;
    let masked = g.mul_const(sq, row_weights(r, c, row_weight)?)?;
    g.sum(masked)
}

pub fn kl_loss_graph<T: Real>(g: &mut Graph<T>, pred: Var, target: Var, row_weight: &[f64]) -> Result<Var> {
    let (r, c) = (g.value(pred).rows(), g.value(pred).cols());
    if g.value(target).shape() != g.value(pred).shape() {
        return Err(Error::Contract("prediction and target shapes differ".into()));
    }
    let p = g.softmax_rows(target, None)?;
    let log_p = g.log_softmax_rows(target)?;
    let log_q = g.log_softmax_rows(pred)?;
    let ratio = g.sub(log_p, log_q)?;
    let terms = g.mul(p, ratio)?;
    let masked = g.mul_const(terms, row_weights(r, c, row_weight)?)?;
    g.sum(masked)
}
