//! Precision/recall/F1 with top-k hits, edit distance, length difference,
//! the random baseline and report aggregation.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Example;
use crate::decoder::DecodedTrailer;
use crate::error::{Error, Result};
use crate::shotcore::{cosine, MovieSequence, TrailerSequence};

/// How ground-truth trailer shots were mapped to movie indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    SourceIndices,
    /// Nearest movie shot by cosine; an approximation of human labelling.
    ArgmaxCosine,
}

/// 1-based movie index per trailer shot; `None` marks an insert shot.
pub fn align_gt(trailer: &TrailerSequence, movie: &MovieSequence) -> Result<(Vec<Option<usize>>, Alignment)> {
    if let Some(src) = trailer.source_indices() {
        let out = src
            .iter()
            .map(|&i| if i < 1 { Ok(None) } else if i as usize <= movie.len() { Ok(Some(i as usize)) } else { Err(i) })
            .collect::<std::result::Result<Vec<_>, i64>>()
            .map_err(|i| Error::Contract(format!("source index {i} outside movie of {} shots", movie.len())))?;
        return Ok((out, Alignment::SourceIndices));
    }
    let mut out = Vec::with_capacity(trailer.len());
    for t in trailer.shots() {
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, u) in movie.shots().iter().enumerate() {
            let c = cosine(t.values(), u.values())?;
            if c > best.0 {
                best = (c, i + 1);
            }
        }
        out.push(Some(best.1));
    }
    Ok((out, Alignment::ArgmaxCosine))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub hits: usize,
    /// Set when nothing was predicted; precision is then reported as 0.
    pub empty_prediction: bool,
}

pub fn f1_score(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Maximum matching between predictions and ground-truth occurrences, where
/// prediction `j` may take any occurrence whose index is among its candidates.
fn max_matching(candidates: &[&[usize]], gt: &[Option<usize>]) -> usize {
    fn augment(j: usize, cands: &[&[usize]], gt: &[Option<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for (g, v) in gt.iter().enumerate() {
            let Some(v) = v else { continue };
            if seen[g] || !cands[j].contains(v) {
                continue;
            }
            seen[g] = true;
            if owner[g].is_none_or(|o| augment(o, cands, gt, seen, owner)) {
                owner[g] = Some(j);
                return true;
            }
        }
        false
    }
    let mut owner = vec![None; gt.len()];
    let mut hits = 0;
    for j in 0..candidates.len() {
        let mut seen = vec![false; gt.len()];
        if augment(j, candidates, gt, &mut seen, &mut owner) {
            hits += 1;
        }
    }
    hits
}

/// Set-based scores. Prediction `j` hits when one of its first `k`
/// candidates (`topk[j]`, or just `predicted[j]`) is an unused ground-truth
/// occurrence.
pub fn precision_recall_f1(predicted: &[usize], gt: &[Option<usize>], k: usize, topk: Option<&[Vec<usize>]>) -> Result<Prf> {
    if k == 0 {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    let singles: Vec<[usize; 1]> = predicted.iter().map(|&p| [p]).collect();
    let cands: Vec<&[usize]> = match topk {
        Some(lists) => {
            if lists.len() != predicted.len() {
                return Err(Error::Contract("one candidate list per prediction required".into()));
            }
            lists.iter().map(|l| &l[..k.min(l.len())]).collect()
        }
        None => singles.iter().map(|s| &s[..]).collect(),
    };
    let hits = max_matching(&cands, gt);
    let precision = if predicted.is_empty() { 0.0 } else { hits as f64 / predicted.len() as f64 };
    let recall = if gt.is_empty() { 0.0 } else { hits as f64 / gt.len() as f64 };
    Ok(Prf { precision, recall, f1: f1_score(precision, recall), hits, empty_prediction: predicted.is_empty() })
}

/// Unit-cost edit distance.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn sld(a: usize, b: usize) -> usize {
    a.abs_diff(b)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopK {
    pub k: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub id: String,
    pub n: usize,
    pub gt_len: usize,
    pub pred_len: usize,
    pub by_k: Vec<TopK>,
    pub ld: usize,
    pub sld: usize,
    pub empty_prediction: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub alignment: Alignment,
    pub pairs: usize,
    /// Mean precision and recall per k; F1 is the harmonic mean of those means.
    pub by_k: Vec<TopK>,
    pub ld: f64,
    pub sld: f64,
    pub per_pair: Vec<PairMetrics>,
}

/// What a generator produced for one movie.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub indices: Vec<usize>,
    /// Optional ranked candidates per predicted shot, best first.
    pub candidates: Option<Vec<Vec<usize>>>,
}

impl From<&DecodedTrailer> for Prediction {
    fn from(d: &DecodedTrailer) -> Self {
        Prediction {
            indices: d.matched_indices.clone(),
            candidates: Some(d.candidates.iter().map(|c| c.iter().map(|r| r.index).collect()).collect()),
        }
    }
}

pub fn pair_metrics(id: &str, n: usize, pred: &Prediction, gt: &[Option<usize>], ks: &[usize]) -> Result<PairMetrics> {
    let by_k = ks
        .iter()
        .map(|&k| {
            let s = precision_recall_f1(&pred.indices, gt, k, pred.candidates.as_deref())?;
            Ok(TopK { k, precision: s.precision, recall: s.recall, f1: s.f1 })
        })
        .collect::<Result<Vec<_>>>()?;
    // insert shots are `None` on the ground-truth side and never equal a prediction
    let predicted: Vec<Option<usize>> = pred.indices.iter().map(|&i| Some(i)).collect();
    Ok(PairMetrics {
        id: id.to_string(),
        n,
        gt_len: gt.len(),
        pred_len: pred.indices.len(),
        by_k,
        ld: levenshtein(&predicted, gt),
        sld: sld(pred.indices.len(), gt.len()),
        empty_prediction: pred.indices.is_empty(),
    })
}

pub fn aggregate(label: &str, alignment: Alignment, ks: &[usize], per_pair: Vec<PairMetrics>) -> MetricsReport {
    let count = per_pair.len().max(1) as f64;
    let by_k = ks
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let p = per_pair.iter().map(|m| m.by_k[i].precision).sum::<f64>() / count;
            let r = per_pair.iter().map(|m| m.by_k[i].recall).sum::<f64>() / count;
            TopK { k, precision: p, recall: r, f1: f1_score(p, r) }
        })
        .collect();
    MetricsReport {
        label: label.to_string(),
        alignment,
        pairs: per_pair.len(),
        by_k,
        ld: per_pair.iter().map(|m| m.ld as f64).sum::<f64>() / count,
        sld: per_pair.iter().map(|m| m.sld as f64).sum::<f64>() / count,
        per_pair,
    }
}

/// Scores one prediction per example.
pub fn evaluate(label: &str, examples: &[Example], predictions: &[Prediction], ks: &[usize]) -> Result<MetricsReport> {
    if examples.len() != predictions.len() {
        return Err(Error::Contract("one prediction per example required".into()));
    }
    let mut alignment = Alignment::SourceIndices;
    let mut per_pair = Vec::with_capacity(examples.len());
    for (ex, pred) in examples.iter().zip(predictions) {
        let (gt, a) = align_gt(&ex.trailer, &ex.movie)?;
        if a == Alignment::ArgmaxCosine {
            alignment = a;
        }
        per_pair.push(pair_metrics(&ex.id, ex.movie.len(), pred, &gt, ks)?);
    }
    Ok(aggregate(label, alignment, ks, per_pair))
}

/// Uniformly drawn `m`-subset (in random order) of `1..=n`.
fn random_pick(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Vec<usize> {
    sample(rng, n, m).into_iter().map(|i| i + 1).collect()
}

/// Monte-Carlo baseline for one movie size: each trial draws `gt_m` shots
/// out of `movie_n` against the ground truth `1..=gt_m`.
pub fn random_baseline(movie_n: usize, gt_m: usize, trials: usize, seed: u64) -> Result<MetricsReport> {
    if gt_m > movie_n || trials == 0 {
        return Err(Error::Argument(format!("need 1 <= trials and m = {gt_m} <= n = {movie_n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gt: Vec<Option<usize>> = (1..=gt_m).map(Some).collect();
    let per_pair = (0..trials)
        .map(|t| {
            let pred = Prediction { indices: random_pick(&mut rng, movie_n, gt_m), candidates: None };
            pair_metrics(&format!("trial{t}"), movie_n, &pred, &gt, &[1])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate("random", Alignment::SourceIndices, &[1], per_pair))
}

/// Random selection of as many shots as the ground truth holds, for every
/// example, averaged over `trials` draws per example.
pub fn random_baseline_report(examples: &[Example], ks: &[usize], trials: usize, seed: u64) -> Result<MetricsReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut alignment = Alignment::SourceIndices;
    let mut per_pair = Vec::with_capacity(examples.len());
    for ex in examples {
        let (gt, a) = align_gt(&ex.trailer, &ex.movie)?;
        if a == Alignment::ArgmaxCosine {
            alignment = a;
        }
        let m = gt.len().min(ex.movie.len());
        let draws = (0..trials.max(1))
            .map(|_| {
                let pred = Prediction { indices: random_pick(&mut rng, ex.movie.len(), m), candidates: None };
                pair_metrics(&ex.id, ex.movie.len(), &pred, &gt, ks)
            })
            .collect::<Result<Vec<_>>>()?;
        let mean = aggregate(&ex.id, a, ks, draws);
        per_pair.push(PairMetrics {
            id: ex.id.clone(),
            n: ex.movie.len(),
            gt_len: gt.len(),
            pred_len: m,
            by_k: mean.by_k.iter().map(|t| TopK { f1: f1_score(t.precision, t.recall), ..*t }).collect(),
            ld: mean.ld.round() as usize,
            sld: sld(m, gt.len()),
            empty_prediction: m == 0,
        });
    }
    Ok(aggregate("random", alignment, ks, per_pair))
}

/// Aligned text table in the column order Precision, Recall, F1-score, LD, SLD
/// (scores in percent).
pub fn render_table(reports: &[&MetricsReport]) -> String {
    let mut rows = vec![["Method", "k", "Precision", "Recall", "F1-score", "LD", "SLD"].map(String::from).to_vec()];
    for r in reports {
        for t in &r.by_k {
            rows.push(vec![
                r.label.clone(),
                t.k.to_string(),
                format!("{:.2}", 100.0 * t.precision),
                format!("{:.2}", 100.0 * t.recall),
                format!("{:.2}", 100.0 * t.f1),
                format!("{:.2}", r.ld),
                format!("{:.2}", r.sld),
            ]);
        }
    }
    let widths: Vec<usize> = (0..7).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            out.push('\n');
        }
    }
    if reports.iter().any(|r| r.alignment == Alignment::ArgmaxCosine) {
        out.push_str("note: ground truth aligned by argmax cosine, not by stored source indices\n");
    }
    out
}
