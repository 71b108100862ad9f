//! Seeded generator of movie/trailer pairs with known selection and order.
//!
//! A shared "world" fixes cluster centroids, a style direction and per-cluster
//! bonuses. Every shot gets a latent appeal
//! `style_weight * sqrt(d) * <style, x/|x|> + bonus[c] + jitter[c]`. The jitter
//! is drawn per movie and is zero by default, so appeal is a function of the
//! embedding and its cluster alone. The trailer holds the `m` most appealing shots,
//! arranged by `order_rule`, with `m` set by `length_rule`.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::condition::ConditionSequence;
use crate::dataset::{write_example, write_splits, Example, SplitManifest};
use crate::error::{Error, Result};
use crate::shotcore::{MovieSequence, TrailerSequence, INSERT_SHOT};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderRule {
    /// Descending appeal.
    #[default]
    AppealSorted,
    /// Round-robin over clusters (clusters ranked by their best shot), each
    /// cluster contributing its shots in descending appeal.
    ClusterInterleave,
}

/// How many shots a trailer takes from its movie.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthRule {
    /// `m_range` mapped linearly onto `n_range`.
    #[default]
    Linear,
    /// Every shot whose appeal beats a corpus-wide threshold, clamped to
    /// `m_range`. The threshold keeps `expected_ratio` of shots on average.
    AppealThreshold,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub d: usize,
    pub n_range: [usize; 2],
    pub m_range: [usize; 2],
    pub clusters: usize,
    /// Relative norm of the perturbation applied to each trailer copy.
    pub noise_sigma: f64,
    pub insert_prob: f64,
    pub order_rule: OrderRule,
    pub length_rule: LengthRule,
    pub seed: u64,
    /// Angular spread of shots around their centroid.
    pub spread: f64,
    pub style_weight: f64,
    pub bonus_scale: f64,
    /// Per-movie deviation of the cluster bonuses; nonzero values make the
    /// selection partly unobservable from the movie.
    pub jitter_sigma: f64,
    /// Emit a one-row condition vector per pair.
    pub condition: bool,
    pub condition_noise: f64,
    /// Fractions of pairs in the train and validation splits; the rest is test.
    pub split: [f64; 2],
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            d: 64,
            n_range: [100, 200],
            m_range: [12, 24],
            clusters: 12,
            noise_sigma: 0.05,
            insert_prob: 0.05,
            order_rule: OrderRule::AppealSorted,
            length_rule: LengthRule::Linear,
            seed: 0,
            spread: 0.5,
            style_weight: 0.5,
            bonus_scale: 1.0,
            jitter_sigma: 0.0,
            condition: false,
            condition_noise: 0.1,
            split: [0.8, 0.1],
        }
    }
}

const NORM_RANGE: (f64, f64) = (0.6, 1.8);
const THRESHOLD_SAMPLES: usize = 20_000;

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d == 0 || self.clusters == 0 {
            return bad("d and clusters must be positive".into());
        }
        let ([n0, n1], [m0, m1]) = (self.n_range, self.m_range);
        if n0 == 0 || n0 > n1 || m0 == 0 || m0 > m1 {
            return bad(format!("bad ranges n {:?} m {:?}", self.n_range, self.m_range));
        }
        if m1 > n0 {
            return bad(format!("m_range max {m1} exceeds n_range min {n0}"));
        }
        if !(0.0..0.5).contains(&self.insert_prob) {
            return bad(format!("insert_prob {} outside [0, 0.5)", self.insert_prob));
        }
        if !(0.0..=0.25).contains(&self.noise_sigma) {
            return bad(format!("noise_sigma {} outside [0, 0.25]", self.noise_sigma));
        }
        for v in [self.spread, self.style_weight, self.bonus_scale, self.jitter_sigma, self.condition_noise] {
            if !(v.is_finite() && v >= 0.0) {
                return bad("generator scales must be finite and non-negative".into());
            }
        }
        let [a, b] = self.split;
        if !(a >= 0.0 && b >= 0.0 && a + b <= 1.0) {
            return bad(format!("bad split fractions {:?}", self.split));
        }
        Ok(())
    }

    /// Expected trailer/movie length ratio implied by the two ranges.
    pub fn expected_ratio(&self) -> f64 {
        let mean = |r: [usize; 2]| (r[0] + r[1]) as f64 / 2.0;
        mean(self.m_range) / mean(self.n_range)
    }
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

fn sample_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn normalized(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Corpus-wide latent structure derived from the configuration seed.
#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub centroids: Vec<Vec<f64>>,
    pub style: Vec<f64>,
    pub bonus: Vec<f64>,
    /// Appeal cut used by [`LengthRule::AppealThreshold`].
    pub threshold: f64,
}

/// Latent variables of one generated pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairLatents {
    pub clusters: Vec<usize>,
    pub jitter: Vec<f64>,
    pub appeal: Vec<f64>,
}

impl World {
    pub fn new(cfg: &GeneratorConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED0F3011D);
        let centroids = (0..cfg.clusters).map(|_| normalized(gaussian(&mut rng, cfg.d))).collect();
        let style = normalized(gaussian(&mut rng, cfg.d));
        let bonus = (0..cfg.clusters).map(|_| cfg.bonus_scale * sample_normal(&mut rng)).collect();
        let mut world = World { centroids, style, bonus, threshold: 0.0 };
        world.threshold = world.appeal_quantile(cfg, 1.0 - cfg.expected_ratio(), &mut rng);
        Ok(world)
    }

    /// Empirical quantile of jitter-free appeal over freshly drawn shots.
    fn appeal_quantile(&self, cfg: &GeneratorConfig, q: f64, rng: &mut ChaCha8Rng) -> f64 {
        let zero = vec![0.0; cfg.clusters];
        let mut sample: Vec<f64> = (0..THRESHOLD_SAMPLES)
            .map(|_| {
                let c = rng.random_range(0..cfg.clusters);
                self.appeal(cfg, &self.draw_shot(cfg, rng, c), c, &zero)
            })
            .collect();
        sample.sort_by(f64::total_cmp);
        sample[((q * THRESHOLD_SAMPLES as f64) as usize).min(THRESHOLD_SAMPLES - 1)]
    }

    fn draw_jitter(&self, cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..cfg.clusters).map(|_| cfg.jitter_sigma * sample_normal(rng)).collect()
    }

    fn draw_shot(&self, cfg: &GeneratorConfig, rng: &mut ChaCha8Rng, c: usize) -> Vec<f32> {
        let noise = gaussian(rng, cfg.d);
        let scale = cfg.spread / (cfg.d as f64).sqrt();
        let dir = normalized(self.centroids[c].iter().zip(&noise).map(|(a, b)| a + scale * b).collect());
        let r = rng.random_range(NORM_RANGE.0..NORM_RANGE.1);
        dir.into_iter().map(|v| (r * v) as f32).collect()
    }

    /// Latent appeal of a stored shot embedding.
    pub fn appeal(&self, cfg: &GeneratorConfig, x: &[f32], cluster: usize, jitter: &[f64]) -> f64 {
        let norm = x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        let proj = x.iter().zip(&self.style).map(|(&a, b)| a as f64 * b).sum::<f64>() / norm;
        cfg.style_weight * (cfg.d as f64).sqrt() * proj + self.bonus[cluster] + jitter[cluster]
    }
}

/// `m_range` mapped linearly onto `n_range`, rounded to the nearest integer.
pub fn trailer_length(cfg: &GeneratorConfig, n: usize) -> usize {
    let ([n0, n1], [m0, m1]) = (cfg.n_range, cfg.m_range);
    let t = if n1 == n0 { 0.5 } else { (n.clamp(n0, n1) - n0) as f64 / (n1 - n0) as f64 };
    (m0 as f64 + t * (m1 - m0) as f64).round() as usize
}

fn clamp_norm(v: Vec<f64>) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let target = n.clamp(0.5, 2.0);
    v.into_iter().map(|x| (x * target / n) as f32).collect()
}

/// Arranges the selected (0-based) shot indices.
pub fn order_selection(rule: OrderRule, selected: &[usize], latents: &PairLatents) -> Vec<usize> {
    let by_appeal = |a: &usize, b: &usize| latents.appeal[*b].total_cmp(&latents.appeal[*a]).then(a.cmp(b));
    let mut sorted = selected.to_vec();
    sorted.sort_by(by_appeal);
    match rule {
        OrderRule::AppealSorted => sorted,
        OrderRule::ClusterInterleave => {
            let mut groups: Vec<Vec<usize>> = Vec::new();
            for i in sorted {
                match groups.iter_mut().find(|g| latents.clusters[g[0]] == latents.clusters[i]) {
                    Some(g) => g.push(i),
                    None => groups.push(vec![i]),
                }
            }
            let longest = groups.iter().map(Vec::len).max().unwrap_or(0);
            (0..longest).flat_map(|k| groups.iter().filter_map(move |g| g.get(k).copied())).collect()
        }
    }
}

/// One pair from its own seed; the world is shared by every pair of a corpus.
pub fn generate_pair(cfg: &GeneratorConfig, world: &World, id: &str, pair_seed: u64) -> Result<(Example, PairLatents)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(pair_seed);
    let n = rng.random_range(cfg.n_range[0]..=cfg.n_range[1]);
    let jitter = world.draw_jitter(cfg, &mut rng);
    let clusters: Vec<usize> = (0..n).map(|_| rng.random_range(0..cfg.clusters)).collect();
    let shots: Vec<Vec<f32>> = clusters.iter().map(|&c| world.draw_shot(cfg, &mut rng, c)).collect();
    let appeal: Vec<f64> = shots.iter().zip(&clusters).map(|(x, &c)| world.appeal(cfg, x, c, &jitter)).collect();
    let latents = PairLatents { clusters, jitter, appeal };

    let mut ranked: Vec<usize> = (0..n).collect();
    ranked.sort_by(|&a, &b| latents.appeal[b].total_cmp(&latents.appeal[a]).then(a.cmp(&b)));
    let m = match cfg.length_rule {
        LengthRule::Linear => trailer_length(cfg, n),
        LengthRule::AppealThreshold => {
            let above = latents.appeal.iter().filter(|&&a| a > world.threshold).count();
            above.clamp(cfg.m_range[0], cfg.m_range[1])
        }
    };
    let order = order_selection(cfg.order_rule, &ranked[..m], &latents);

    let mut rows = Vec::with_capacity(m);
    let mut sources = Vec::with_capacity(m);
    for &i in &order {
        if cfg.insert_prob > 0.0 && rng.random_bool(cfg.insert_prob) {
            let r = rng.random_range(NORM_RANGE.0..NORM_RANGE.1);
            rows.push(clamp_norm(normalized(gaussian(&mut rng, cfg.d)).into_iter().map(|v| r * v).collect()));
            sources.push(INSERT_SHOT);
            continue;
        }
        let x: Vec<f64> = shots[i].iter().map(|&v| v as f64).collect();
        if cfg.noise_sigma == 0.0 {
            rows.push(shots[i].clone());
        } else {
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let s = cfg.noise_sigma * norm / (cfg.d as f64).sqrt();
            let noise = gaussian(&mut rng, cfg.d);
            rows.push(clamp_norm(x.iter().zip(&noise).map(|(a, b)| a + s * b).collect()));
        }
        sources.push(i as i64 + 1);
    }

    let condition = if cfg.condition {
        let picked: Vec<&Vec<f32>> = order.iter().map(|&i| &shots[i]).collect();
        let mut mean = vec![0.0f64; cfg.d];
        for x in &picked {
            for (acc, &v) in mean.iter_mut().zip(x.iter()) {
                *acc += v as f64 / picked.len() as f64;
            }
        }
        let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
        let s = cfg.condition_noise * norm / (cfg.d as f64).sqrt();
        let noise = gaussian(&mut rng, cfg.d);
        let data: Vec<f32> = mean.iter().zip(&noise).map(|(a, b)| (a + s * b) as f32).collect();
        Some(ConditionSequence::new(id, 1, cfg.d, data)?)
    } else {
        None
    };

    let example = Example {
        id: id.to_string(),
        movie: MovieSequence::from_rows(id, shots)?,
        trailer: TrailerSequence::from_rows(id, rows, Some(sources))?,
        condition,
    };
    Ok((example, latents))
}

pub fn pair_id(i: usize) -> String {
    format!("pair{i:05}")
}

/// `count` pairs with seeds `seed + i` and a seeded train/val/test split.
pub fn generate_dataset(cfg: &GeneratorConfig, count: usize) -> Result<(Vec<Example>, SplitManifest)> {
    if count == 0 {
        return Err(Error::Argument("count must be at least 1".into()));
    }
    let world = World::new(cfg)?;
    let examples = (0..count)
        .map(|i| generate_pair(cfg, &world, &pair_id(i), cfg.seed.wrapping_add(i as u64)).map(|(e, _)| e))
        .collect::<Result<Vec<_>>>()?;
    let mut ids: Vec<String> = examples.iter().map(|e| e.id.clone()).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x57117));
    let n_train = (cfg.split[0] * count as f64).round() as usize;
    let n_val = ((cfg.split[1] * count as f64).round() as usize).min(count - n_train.min(count));
    let n_train = n_train.min(count);
    let mut splits = SplitManifest {
        train: ids[..n_train].to_vec(),
        val: ids[n_train..n_train + n_val].to_vec(),
        test: ids[n_train + n_val..].to_vec(),
    };
    for s in [&mut splits.train, &mut splits.val, &mut splits.test] {
        s.sort();
    }
    Ok((examples, splits))
}

/// Generates and writes a corpus: `splits.json`, `generator.json` and the pair files.
pub fn write_dataset(dir: &Path, cfg: &GeneratorConfig, count: usize) -> Result<SplitManifest> {
    let (examples, splits) = generate_dataset(cfg, count)?;
    for ex in &examples {
        write_example(dir, ex)?;
    }
    write_splits(dir, &splits)?;
    let path = dir.join("generator.json");
    let mut json = serde_json::to_string_pretty(cfg)?;
    json.push('\n');
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(splits)
}
