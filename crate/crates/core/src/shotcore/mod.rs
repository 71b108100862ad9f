//! Shot embeddings, movie/trailer sequences and the similarity computations
//! that connect them.
//!
//! Movie shot indices are 1-based throughout the crate: position 0 of a
//! framed sequence is the start token, positions `1..=n` are shots and
//! `n + 1` is the end token.

mod io;

pub use io::{read_sequence, write_sequence, SequenceFile, SequenceManifest, SequenceRole};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One camera shot as a `d`-dimensional feature vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShotEmbedding {
    values: Vec<f32>,
}

impl ShotEmbedding {
    /// Rejects empty, non-finite or zero-norm vectors.
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Domain("shot embedding has no dimensions".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("shot embedding has non-finite entries".into()));
        }
        let e = ShotEmbedding { values };
        if e.norm() == 0.0 {
            return Err(Error::Domain("zero-norm shot embedding".into()));
        }
        Ok(e)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }
}

fn check_shots(shots: &[ShotEmbedding], what: &str) -> Result<usize> {
    let d = shots.first().map(|s| s.dim()).ok_or_else(|| Error::Domain(format!("{what} has no shots")))?;
    if shots.iter().any(|s| s.dim() != d) {
        return Err(Error::Domain(format!("{what} mixes embedding dimensions")));
    }
    Ok(d)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MovieSequence {
    pub id: String,
    shots: Vec<ShotEmbedding>,
}

impl MovieSequence {
    pub fn new(id: impl Into<String>, shots: Vec<ShotEmbedding>) -> Result<Self> {
        check_shots(&shots, "movie")?;
        Ok(MovieSequence { id: id.into(), shots })
    }

    pub fn from_rows(id: impl Into<String>, rows: Vec<Vec<f32>>) -> Result<Self> {
        let shots = rows.into_iter().map(ShotEmbedding::new).collect::<Result<Vec<_>>>()?;
        Self::new(id, shots)
    }

    pub fn shots(&self) -> &[ShotEmbedding] {
        &self.shots
    }

    pub fn len(&self) -> usize {
        self.shots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shots.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.shots[0].dim()
    }

    /// Shot at 1-based index `i`.
    pub fn shot(&self, i: usize) -> &ShotEmbedding {
        &self.shots[i - 1]
    }
}

/// Ground-truth source index value used for shots absent from the movie.
pub const INSERT_SHOT: i64 = -1;

#[derive(Clone, Debug, PartialEq)]
pub struct TrailerSequence {
    pub id: String,
    shots: Vec<ShotEmbedding>,
    source_indices: Option<Vec<i64>>,
}

impl TrailerSequence {
    pub fn new(id: impl Into<String>, shots: Vec<ShotEmbedding>, source_indices: Option<Vec<i64>>) -> Result<Self> {
        check_shots(&shots, "trailer")?;
        if let Some(src) = &source_indices {
            if src.len() != shots.len() {
                return Err(Error::Domain(format!(
                    "trailer has {} shots but {} source indices",
                    shots.len(),
                    src.len()
                )));
            }
            if src.iter().any(|&s| s != INSERT_SHOT && s < 1) {
                return Err(Error::Domain("source indices must be 1-based or -1".into()));
            }
        }
        Ok(TrailerSequence { id: id.into(), shots, source_indices })
    }

    pub fn from_rows(id: impl Into<String>, rows: Vec<Vec<f32>>, source_indices: Option<Vec<i64>>) -> Result<Self> {
        let shots = rows.into_iter().map(ShotEmbedding::new).collect::<Result<Vec<_>>>()?;
        Self::new(id, shots, source_indices)
    }

    pub fn shots(&self) -> &[ShotEmbedding] {
        &self.shots
    }

    pub fn len(&self) -> usize {
        self.shots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shots.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.shots[0].dim()
    }

    pub fn source_indices(&self) -> Option<&[i64]> {
        self.source_indices.as_deref()
    }
}

/// Per-position scores over a framed movie: `n + 2` entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrailernessScores {
    pub scores: Vec<f64>,
}

impl TrailernessScores {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::Domain("trailerness scores must lie in [0, 1]".into()));
        }
        Ok(TrailernessScores { scores })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

pub fn dot(u: &[f32], v: &[f32]) -> f64 {
    u.iter().zip(v).map(|(&a, &b)| a as f64 * b as f64).sum()
}

fn norm(u: &[f32]) -> f64 {
    dot(u, u).sqrt()
}

/// Cosine similarity of two raw vectors; zero norms are a domain error.
pub fn cosine(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape("cosine", format!("{} vs {}", u.len(), v.len())));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Domain("cosine similarity of a zero-norm vector".into()));
    }
    Ok(dot(u, v) / (nu * nv))
}

pub fn cosine_similarity(u: &ShotEmbedding, v: &ShotEmbedding) -> Result<f64> {
    cosine(u.values(), v.values())
}

/// Row-major `n x m` cosine similarities between movie and trailer shots.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }
}

pub fn similarity_matrix(movie: &MovieSequence, trailer: &TrailerSequence) -> Result<SimilarityMatrix> {
    if movie.dim() != trailer.dim() {
        return Err(Error::shape("similarity_matrix", "movie and trailer dimensions differ"));
    }
    let mut values = Vec::with_capacity(movie.len() * trailer.len());
    for u in movie.shots() {
        for v in trailer.shots() {
            values.push(cosine_similarity(u, v)?);
        }
    }
    Ok(SimilarityMatrix { rows: movie.len(), cols: trailer.len(), values })
}

/// Best cosine match of every movie shot against the trailer, clamped to
/// `[0, 1]`; the frame positions `0` and `n + 1` are zero.
pub fn trailerness_ground_truth(movie: &MovieSequence, trailer: &TrailerSequence) -> Result<TrailernessScores> {
    let sim = similarity_matrix(movie, trailer)?;
    let mut scores = Vec::with_capacity(movie.len() + 2);
    scores.push(0.0);
    for i in 0..sim.rows {
        let best = (0..sim.cols).map(|j| sim.get(i, j)).fold(f64::NEG_INFINITY, f64::max);
        scores.push(best.clamp(0.0, 1.0));
    }
    scores.push(0.0);
    Ok(TrailernessScores { scores })
}

/// Sinusoidal position table with `max_len + 2` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionalEncoding {
    pub max_len: usize,
    pub d: usize,
    table: Vec<f64>,
}

impl PositionalEncoding {
    pub fn row(&self, p: usize) -> &[f64] {
        &self.table[p * self.d..(p + 1) * self.d]
    }

    pub fn rows(&self) -> usize {
        self.max_len + 2
    }
}

pub fn positional_encoding(max_len: usize, d: usize) -> Result<PositionalEncoding> {
    if d == 0 || !d.is_multiple_of(2) {
        return Err(Error::Config(format!("positional encoding needs an even width, got {d}")));
    }
    let rows = max_len + 2;
    let mut table = vec![0.0; rows * d];
    for p in 0..rows {
        for k in 0..d / 2 {
            let angle = p as f64 / 10000f64.powf((2 * k) as f64 / d as f64);
            table[p * d + 2 * k] = angle.sin();
            table[p * d + 2 * k + 1] = angle.cos();
        }
    }
    Ok(PositionalEncoding { max_len, d, table })
}
