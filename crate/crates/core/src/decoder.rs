//! Trailer decoder stack, autoregressive generation, end-token detection and
//! nearest-neighbour retrieval of movie shots.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::condition::ConditionSequence;
use crate::error::{Error, Result};
use crate::model::TgtModel;
use crate::numerics::{AttentionMask, DecoderLayer, Graph, Linear, ParamStore, Real, Tensor, Var};
use crate::shotcore::MovieSequence;

/// Decoder layers followed by a linear map back to shot-embedding space.
#[derive(Clone, Debug)]
pub struct TrailerDecoder {
    pub layers: Vec<DecoderLayer>,
    pub out: Linear,
}

impl TrailerDecoder {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, cfg: &ModelConfig) -> Result<Self> {
        if cfg.decoder_layers == 0 {
            return Err(Error::Config("decoder needs at least one layer".into()));
        }
        let layers = (0..cfg.decoder_layers)
            .map(|i| DecoderLayer::new(store, rng, &format!("decoder.layer{i}"), &cfg.layer_shape()))
            .collect::<Result<_>>()?;
        let out = Linear::new(store, rng, "decoder.out", cfg.d_model, cfg.d_model)?;
        Ok(TrailerDecoder { layers, out })
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        input: Var,
        memory: Var,
        self_mask: &AttentionMask,
        cross_mask: Option<&AttentionMask>,
    ) -> Result<Var> {
        let mut h = input;
        for layer in &self.layers {
            h = layer.forward(g, store, h, memory, self_mask, cross_mask)?;
        }
        self.out.forward(g, store, h)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feedback {
    /// Feed back the decoded embedding itself.
    #[default]
    Generated,
    /// Feed back the embedding of the retrieved movie shot.
    Retrieved,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[derive(Default)]
pub enum EosRule {
    /// Stop when the end token is closer than every movie shot.
    #[default]
    BeatsMovie,
    /// Stop when the cosine to the end token exceeds the threshold.
    Threshold(f64),
}


#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeOptions {
    pub max_len: usize,
    pub feedback: Feedback,
    pub no_repeat: bool,
    pub eos_rule: EosRule,
    /// Number of ranked alternatives kept for each decoded shot.
    pub topk: usize,
}

impl DecodeOptions {
    pub fn new(max_len: usize) -> Self {
        DecodeOptions { max_len, feedback: Feedback::Generated, no_repeat: false, eos_rule: EosRule::BeatsMovie, topk: 1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Eos,
    MaxLen,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedShot {
    /// 1-based movie shot index.
    pub index: usize,
    pub similarity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodedTrailer {
    pub embeddings: Vec<Vec<f64>>,
    pub matched_indices: Vec<usize>,
    /// `topk` ranked candidates per kept embedding, best first.
    pub candidates: Vec<Vec<RankedShot>>,
    pub terminated_by: Termination,
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

fn cosine_to_shot(e: &[f64], e_norm: f64, shot: &[f32]) -> f64 {
    let s_norm = norm(shot.iter().map(|&v| v as f64));
    if e_norm == 0.0 || s_norm == 0.0 {
        return 0.0;
    }
    e.iter().zip(shot).map(|(&a, &b)| a * b as f64).sum::<f64>() / (e_norm * s_norm)
}

fn cosine64(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a.iter().copied()), norm(b.iter().copied()));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

fn similarities(embedding: &[f64], movie: &MovieSequence) -> Result<Vec<f64>> {
    if embedding.len() != movie.dim() {
        return Err(Error::shape("match_nearest", format!("query width {} vs shot width {}", embedding.len(), movie.dim())));
    }
    let e_norm = norm(embedding.iter().copied());
    Ok(movie.shots().iter().map(|s| cosine_to_shot(embedding, e_norm, s.values())).collect())
}

fn rank(sims: &[f64], k: usize, excluded: impl Fn(usize) -> bool) -> Vec<RankedShot> {
    let mut order: Vec<usize> = (0..sims.len()).filter(|&i| !excluded(i + 1)).collect();
    // stable sort keeps lower indices first among equal similarities
    order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]));
    order.into_iter().take(k).map(|i| RankedShot { index: i + 1, similarity: sims[i] }).collect()
}

/// The `k` movie shots most cosine-similar to `embedding`, best first,
/// ties going to the lower index.
pub fn match_nearest(embedding: &[f64], movie: &MovieSequence, k: usize) -> Result<Vec<RankedShot>> {
    if k == 0 || k > movie.len() {
        return Err(Error::Argument(format!("k = {k} outside 1..={}", movie.len())));
    }
    Ok(rank(&similarities(embedding, movie)?, k, |_| false))
}

/// True when `embedding` is closer to the end token than to any movie shot.
pub fn detect_eos(embedding: &[f64], eos: &[f64], movie: &MovieSequence) -> Result<bool> {
    let to_eos = cosine64(embedding, eos);
    let best = similarities(embedding, movie)?.into_iter().fold(f64::NEG_INFINITY, f64::max);
    Ok(to_eos > best)
}

impl TgtModel {
    /// Greedy generation: starts from the start token, appends each decoded
    /// embedding to the decoder input and stops at the end token or `max_len`.
    pub fn decode_autoregressive<T: Real>(
        &self,
        store: &ParamStore<T>,
        movie: &MovieSequence,
        condition: Option<&ConditionSequence>,
        opts: &DecodeOptions,
    ) -> Result<DecodedTrailer> {
        if opts.max_len == 0 {
            return Err(Error::Argument("max_len must be at least 1".into()));
        }
        if opts.topk == 0 || opts.topk > movie.len() {
            return Err(Error::Argument(format!("topk = {} outside 1..={}", opts.topk, movie.len())));
        }
        let d = self.d_model();
        let rows: Vec<f32> = movie.shots().iter().flat_map(|s| s.values().iter().copied()).collect();
        let movie_t = Tensor::matrix(movie.len(), movie.dim(), rows)?;
        let mut g = Graph::<T>::new();
        let encoded = self.encode(&mut g, store, &movie_t, movie.len(), condition, None)?;
        let keep = g.len();
        let eos: Vec<f64> = store.value(self.tokens.eos).data().iter().map(|v| v.as_f64()).collect();

        let mut fed: Vec<T> = Vec::new();
        let mut out = DecodedTrailer { embeddings: vec![], matched_indices: vec![], candidates: vec![], terminated_by: Termination::MaxLen };
        for step in 0..opts.max_len {
            let prefix = g.constant(Tensor::matrix(step, d, fed.clone())?)?;
            let mask = AttentionMask::causal(step + 1);
            let pred = self.decode_teacher_forced(&mut g, store, encoded.memory, prefix, &mask, None)?;
            let last: Vec<f64> = g.value(pred).row(step).iter().map(|v| v.as_f64()).collect();
            let stop = match opts.eos_rule {
                EosRule::BeatsMovie => detect_eos(&last, &eos, movie)?,
                EosRule::Threshold(t) => cosine64(&last, &eos) > t,
            };
            if stop {
                out.terminated_by = Termination::Eos;
                break;
            }
            let sims = similarities(&last, movie)?;
            let used = &out.matched_indices;
            let exhausted = opts.no_repeat && used.len() >= movie.len();
            let ranked = if opts.no_repeat && !exhausted {
                rank(&sims, opts.topk, |i| used.contains(&i))
            } else {
                rank(&sims, opts.topk, |_| false)
            };
            let best = ranked[0].index;
            match opts.feedback {
                Feedback::Generated => fed.extend(last.iter().map(|&v| T::from_f64_lossy(v))),
                Feedback::Retrieved => fed.extend(movie.shot(best).values().iter().map(|&v| T::from_f64_lossy(v as f64))),
            }
            out.matched_indices.push(best);
            out.candidates.push(ranked);
            out.embeddings.push(last);
            // everything after the encoder is rebuilt on the next step
            g.truncate(keep);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TgtModel;
    use crate::numerics::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> ModelConfig {
        ModelConfig { d_model: 8, heads: 2, ff_dim: 16, context_layers: 2, decoder_layers: 2, max_positions: 64, ..ModelConfig::desk() }
    }

    fn random_movie(rng: &mut ChaCha8Rng, n: usize, d: usize) -> MovieSequence {
        let rows = (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect()).collect();
        MovieSequence::from_rows("m", rows).unwrap()
    }

    #[test]
    fn nearest_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let movie = random_movie(&mut rng, 10, 4);
        let q: Vec<f64> = movie.shot(7).values().iter().map(|&v| v as f64).collect();
        assert_eq!(match_nearest(&q, &movie, 1).unwrap()[0].index, 7);

        let mut rows: Vec<Vec<f32>> = movie.shots().iter().map(|s| s.values().to_vec()).collect();
        rows[4] = rows[1].clone();
        let dup = MovieSequence::from_rows("d", rows).unwrap();
        let q: Vec<f64> = dup.shot(2).values().iter().map(|&v| v as f64).collect();
        let top: Vec<usize> = match_nearest(&q, &dup, 2).unwrap().iter().map(|r| r.index).collect();
        assert_eq!(top, vec![2, 5]);
        assert!(matches!(match_nearest(&q, &dup, 11), Err(Error::Argument(_))));
    }

    #[test]
    fn nearest_matches_full_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let movie = random_movie(&mut rng, 10, 5);
            let q: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut oracle: Vec<(f64, usize)> = (1..=10)
                .map(|i| {
                    let s: Vec<f64> = movie.shot(i).values().iter().map(|&v| v as f64).collect();
                    let dot: f64 = q.iter().zip(&s).map(|(a, b)| a * b).sum();
                    let c = dot / (q.iter().map(|v| v * v).sum::<f64>().sqrt() * s.iter().map(|v| v * v).sum::<f64>().sqrt());
                    (c, i)
                })
                .collect();
            oracle.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let got: Vec<usize> = match_nearest(&q, &movie, 3).unwrap().iter().map(|r| r.index).collect();
            let want: Vec<usize> = oracle.iter().take(3).map(|x| x.1).collect();
            assert_eq!(got, want);
            let mut all: Vec<usize> = match_nearest(&q, &movie, 10).unwrap().iter().map(|r| r.index).collect();
            all.sort_unstable();
            assert_eq!(all, (1..=10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn eos_detection_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let movie = random_movie(&mut rng, 6, 4);
        let eos = vec![0.3, -0.2, 0.9, 0.1];
        assert!(detect_eos(&eos, &eos, &movie).unwrap());
        let shot: Vec<f64> = movie.shot(3).values().iter().map(|&v| v as f64).collect();
        assert!(!detect_eos(&shot, &eos, &movie).unwrap());
    }

    #[test]
    fn max_len_caps_decoding() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (model, store) = TgtModel::new::<f64>(tiny()).unwrap();
        let movie = random_movie(&mut rng, 7, 8);
        let opts = DecodeOptions { eos_rule: EosRule::Threshold(2.0), ..DecodeOptions::new(1) };
        let out = model.decode_autoregressive(&store, &movie, None, &opts).unwrap();
        assert_eq!(out.embeddings.len(), 1);
        assert_eq!(out.terminated_by, Termination::MaxLen);

        let opts = DecodeOptions { topk: 3, ..DecodeOptions::new(12) };
        let out = model.decode_autoregressive(&store, &movie, None, &opts).unwrap();
        assert!(out.embeddings.len() <= 12);
        assert_eq!(out.embeddings.len(), out.matched_indices.len());
        assert!(out.matched_indices.iter().all(|&i| (1..=7).contains(&i)));
        assert!(out.candidates.iter().all(|c| c.len() == 3 && c.windows(2).all(|w| w[0].similarity >= w[1].similarity)));
    }

    #[test]
    fn no_repeat_yields_distinct_indices() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (model, store) = TgtModel::new::<f64>(tiny()).unwrap();
        let movie = random_movie(&mut rng, 9, 8);
        let opts = DecodeOptions { no_repeat: true, eos_rule: EosRule::Threshold(2.0), ..DecodeOptions::new(9) };
        let out = model.decode_autoregressive(&store, &movie, None, &opts).unwrap();
        let mut idx = out.matched_indices.clone();
        idx.sort_unstable();
        idx.dedup();
        assert_eq!(idx.len(), out.matched_indices.len());
    }

    #[test]
    fn autoregressive_agrees_with_teacher_forcing_on_its_own_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (model, store) = TgtModel::new::<f64>(tiny()).unwrap();
        let movie = random_movie(&mut rng, 8, 8);
        let opts = DecodeOptions { eos_rule: EosRule::Threshold(2.0), ..DecodeOptions::new(6) };
        let out = model.decode_autoregressive(&store, &movie, None, &opts).unwrap();
        let k = out.embeddings.len();

        let mut g = Graph::<f64>::new();
        let rows: Vec<f32> = movie.shots().iter().flat_map(|s| s.values().to_vec()).collect();
        let mt = Tensor::matrix(8, 8, rows).unwrap();
        let enc = model.encode(&mut g, &store, &mt, 8, None, None).unwrap();
        let fed = Tensor::from_rows(&out.embeddings).unwrap();
        let fv = g.constant(fed).unwrap();
        let pred = model.decode_teacher_forced(&mut g, &store, enc.memory, fv, &AttentionMask::causal(k + 1), None).unwrap();
        for j in 0..k {
            for c in 0..8 {
                assert!((g.value(pred).get(j, c) - out.embeddings[j][c]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn teacher_forced_rows_ignore_later_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (model, store) = TgtModel::new::<f64>(tiny()).unwrap();
        let movie = random_movie(&mut rng, 6, 8);
        let rows: Vec<f32> = movie.shots().iter().flat_map(|s| s.values().to_vec()).collect();
        let mt = Tensor::matrix(6, 8, rows).unwrap();
        let m = 5;
        let tgt: Vec<Vec<f64>> = (0..m).map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        for k in 0..m {
            let mut g = Graph::<f64>::new();
            let enc = model.encode(&mut g, &store, &mt, 6, None, None).unwrap();
            let a = g.constant(Tensor::from_rows(&tgt).unwrap()).unwrap();
            let mut changed = tgt.clone();
            for row in changed.iter_mut().skip(k) {
                for v in row.iter_mut() {
                    *v += rng.random_range(-3.0..3.0);
                }
            }
            let b = g.constant(Tensor::from_rows(&changed).unwrap()).unwrap();
            let mask = AttentionMask::causal(m + 1);
            let pa = model.decode_teacher_forced(&mut g, &store, enc.memory, a, &mask, None).unwrap();
            let pb = model.decode_teacher_forced(&mut g, &store, enc.memory, b, &mask, None).unwrap();
            // input row k + 1 holds target k, so output rows 0..=k are unaffected
            for j in 0..=k {
                assert_eq!(g.value(pa).row(j), g.value(pb).row(j), "row {j} changed when targets >= {k} moved");
            }
        }
    }
}
