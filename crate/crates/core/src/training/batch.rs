//! Variable-length batching: every pair is padded to the batch maxima and
//! carries masks that make the padding invisible to attention and losses.

use crate::condition::ConditionSequence;
use crate::dataset::Example;
use crate::error::{Error, Result};
use crate::numerics::{AttentionMask, Tensor};
use crate::shotcore::trailerness_ground_truth;

#[derive(Clone, Debug)]
pub struct PairMasks {
    /// `L_enc x L_enc`: keys past the end token are hidden.
    pub encoder: AttentionMask,
    /// `L_dec x L_dec`: causal and padding.
    pub decoder_self: AttentionMask,
    /// `L_dec x L_mem` where memory is context rows followed by condition rows.
    pub cross: AttentionMask,
    /// 1 for each real framed movie position, 0 for padding (`L_enc`).
    pub score_rows: Vec<f64>,
    /// 1 for each real prediction row (`m + 1` of them), 0 for padding (`L_dec`).
    pub target_rows: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct PaddedPair {
    pub id: String,
    pub n: usize,
    pub m: usize,
    /// `n_max x d`, rows past `n` are zero.
    pub movie: Tensor<f32>,
    /// `m_max x d`, rows past `m` are zero.
    pub trailer: Tensor<f32>,
    /// Ground-truth trailerness for `n_max + 2` framed positions.
    pub gt_scores: Vec<f64>,
    pub condition: Option<ConditionSequence>,
    pub masks: PairMasks,
}

impl PaddedPair {
    pub fn encoder_len(&self) -> usize {
        self.movie.rows() + 2
    }

    pub fn decoder_len(&self) -> usize {
        self.trailer.rows() + 1
    }

    pub fn condition_rows(&self) -> usize {
        self.condition.as_ref().map_or(0, |c| c.rows)
    }
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub pairs: Vec<PaddedPair>,
    pub n_max: usize,
    pub m_max: usize,
    pub cond_max: usize,
}

fn padded_rows(rows: impl Iterator<Item = Vec<f32>>, total: usize, d: usize) -> Tensor<f32> {
    let mut data = Vec::with_capacity(total * d);
    for r in rows {
        data.extend_from_slice(&r);
    }
    data.resize(total * d, 0.0);
    Tensor::matrix(total, d, data).expect("padded shape")
}

/// Pads one pair to the given maxima.
pub fn pad_pair(ex: &Example, n_max: usize, m_max: usize, cond_max: usize) -> Result<PaddedPair> {
    let (n, m, d) = (ex.movie.len(), ex.trailer.len(), ex.movie.dim());
    if n > n_max || m > m_max {
        return Err(Error::Argument(format!("{}: pair exceeds padding extents", ex.id)));
    }
    if ex.trailer.dim() != d {
        return Err(Error::shape("pad_pair", "movie and trailer widths differ"));
    }
    let movie = padded_rows(ex.movie.shots().iter().map(|s| s.values().to_vec()), n_max, d);
    let trailer = padded_rows(ex.trailer.shots().iter().map(|s| s.values().to_vec()), m_max, d);
    let mut gt_scores = trailerness_ground_truth(&ex.movie, &ex.trailer)?.scores;
    gt_scores.resize(n_max + 2, 0.0);

    let condition = match &ex.condition {
        Some(c) if c.rows > cond_max => return Err(Error::Argument(format!("{}: condition exceeds padding", ex.id))),
        Some(c) => {
            let mut data = c.data.clone();
            data.resize(cond_max * c.dim, 0.0);
            Some(ConditionSequence::new(c.id.clone(), cond_max, c.dim, data)?)
        }
        None => None,
    };
    let cond_valid = ex.condition.as_ref().map_or(0, |c| c.rows);
    let cond_rows = condition.as_ref().map_or(0, |c| c.rows);

    let (l_enc, l_dec) = (n_max + 2, m_max + 1);
    let l_mem = l_enc + cond_rows;
    let masks = PairMasks {
        encoder: AttentionMask::key_padding(l_enc, l_enc, n + 2),
        decoder_self: AttentionMask::causal(l_dec).and(&AttentionMask::key_padding(l_dec, l_dec, m + 1))?,
        cross: AttentionMask::from_fn(l_dec, l_mem, |_, j| j < n + 2 || (j >= l_enc && j < l_enc + cond_valid)),
        score_rows: (0..l_enc).map(|i| if i < n + 2 { 1.0 } else { 0.0 }).collect(),
        target_rows: (0..l_dec).map(|i| if i < m + 1 { 1.0 } else { 0.0 }).collect(),
    };
    Ok(PaddedPair { id: ex.id.clone(), n, m, movie, trailer, gt_scores, condition, masks })
}

/// Pads every pair of a non-empty batch to the batch maxima.
pub fn pad_batch(examples: &[&Example]) -> Result<Batch> {
    if examples.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let n_max = examples.iter().map(|e| e.movie.len()).max().unwrap_or(0);
    let m_max = examples.iter().map(|e| e.trailer.len()).max().unwrap_or(0);
    let cond_max = examples.iter().map(|e| e.condition.as_ref().map_or(0, |c| c.rows)).max().unwrap_or(0);
    let pairs = examples.iter().map(|e| pad_pair(e, n_max, m_max, cond_max)).collect::<Result<_>>()?;
    Ok(Batch { pairs, n_max, m_max, cond_max })
}

/// A single pair with no padding at all.
pub fn unpadded(ex: &Example) -> Result<PaddedPair> {
    let c = ex.condition.as_ref().map_or(0, |c| c.rows);
    pad_pair(ex, ex.movie.len(), ex.trailer.len(), c)
}
