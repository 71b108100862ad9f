//! Finite-difference sweep over every differentiable primitive, the three
//! losses and the assembled model, in 64-bit arithmetic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::condition::{ConditionMode, ConditionSequence};
use crate::config::{ConditionConfig, ModelConfig, PositionalScheme, ScoreFusion};
use crate::dataset::Example;
use crate::error::Result;
use crate::losses::{kl_loss_graph, reconstruction_loss_graph, trailerness_loss_graph, LossWeights};
use crate::model::TgtModel;
use crate::numerics::{attend, grad_check, AttentionMask, GradCheckConfig, GradCheckReport, Graph, NormPlacement, ParamStore, Tensor, Var};
use crate::shotcore::{MovieSequence, TrailerSequence};
use crate::training::{pad_batch, unpadded};

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(lo..hi)).collect()).expect("shape")
}

/// Random values bounded away from zero, for kinked ops.
fn away_from_zero(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor<f64> {
    let data = (0..r * c)
        .map(|_| {
            let v: f64 = rng.random_range(0.1..1.5);
            if rng.random_bool(0.5) { v } else { -v }
        })
        .collect();
    Tensor::matrix(r, c, data).expect("shape")
}

type OpFn = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>;

/// Checks `sum(w * f(inputs))` for a fixed random `w`.
fn check_op(name: &str, seed: u64, cfg: &GradCheckConfig, inputs: Vec<(&str, Tensor<f64>)>, f: &OpFn) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    let ids = inputs.into_iter().map(|(n, t)| store.add(n, t)).collect::<Result<Vec<_>>>()?;
    let probe_shape = {
        let mut g = Graph::new();
        let vars = ids.iter().map(|&id| g.param(&store, id)).collect::<Result<Vec<_>>>()?;
        let out = f(&mut g, &vars)?;
        g.value(out).shape().to_vec()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xF00D);
    let count: usize = probe_shape.iter().product();
    let w = Tensor::new(probe_shape, (0..count).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    grad_check(name, &mut store, cfg, |g, s| {
        let vars = ids.iter().map(|&id| g.param(s, id)).collect::<Result<Vec<_>>>()?;
        let out = f(g, &vars)?;
        let weighted = g.mul_const(out, w.clone())?;
        g.sum(weighted)
    })
}

fn op_reports(seed: u64, cfg: &GradCheckConfig) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |rr: usize, c: usize| random(&mut rng, rr, c, -1.5, 1.5);
    let (a34, b34, b45, a43, b54, row, col) = (r(3, 4), r(3, 4), r(4, 5), r(4, 3), r(5, 4), r(1, 4), r(3, 1));
    let (sq, gamma, beta, k53, v53, q43) = (r(4, 4), r(1, 4), r(1, 4), r(5, 4), r(5, 4), r(3, 4));
    let konst = r(3, 4);
    let mut rng2 = ChaCha8Rng::seed_from_u64(seed ^ 0xABC);
    let kinked = away_from_zero(&mut rng2, 3, 4);

    let mut out = Vec::new();
    let mut run = |name: &str, inputs: Vec<(&str, Tensor<f64>)>, f: &OpFn| -> Result<()> {
        out.push(check_op(name, seed, cfg, inputs, f)?);
        Ok(())
    };
    run("matmul", vec![("a", a34.clone()), ("b", b45.clone())], &|g, v| g.matmul(v[0], v[1]))?;
    run("matmul_at", vec![("a", a43.clone()), ("b", b45.clone())], &|g, v| g.matmul_t(v[0], v[1], true, false))?;
    run("matmul_bt", vec![("a", a34.clone()), ("b", b54.clone())], &|g, v| g.matmul_t(v[0], v[1], false, true))?;
    run("matmul_abt", vec![("a", a43.clone()), ("b", b54.clone())], &|g, v| g.matmul_t(v[0], v[1], true, true))?;
    run("add", vec![("a", a34.clone()), ("b", b34.clone())], &|g, v| g.add(v[0], v[1]))?;
    run("sub", vec![("a", a34.clone()), ("b", b34.clone())], &|g, v| g.sub(v[0], v[1]))?;
    run("mul", vec![("a", a34.clone()), ("b", b34.clone())], &|g, v| g.mul(v[0], v[1]))?;
    run("add_row", vec![("a", a34.clone()), ("b", row.clone())], &|g, v| g.add_row(v[0], v[1]))?;
    run("add_col", vec![("a", a34.clone()), ("b", col.clone())], &|g, v| g.add_col(v[0], v[1]))?;
    run("scale", vec![("a", a34.clone())], &|g, v| g.scale(v[0], -1.7))?;
    let kc = konst.clone();
    run("mul_const", vec![("a", a34.clone())], &move |g, v| g.mul_const(v[0], kc.clone()))?;
    run("relu", vec![("a", kinked)], &|g, v| g.relu(v[0]))?;
    run("sigmoid", vec![("a", a34.clone())], &|g, v| g.sigmoid(v[0]))?;
    run("softmax", vec![("a", a34.clone())], &|g, v| g.softmax_rows(v[0], None))?;
    run("softmax_causal", vec![("a", sq.clone())], &|g, v| g.softmax_rows(v[0], Some(&AttentionMask::causal(4))))?;
    run("softmax_padding", vec![("a", sq.clone())], &|g, v| g.softmax_rows(v[0], Some(&AttentionMask::key_padding(4, 4, 2))))?;
    run("log_softmax", vec![("a", a34.clone())], &|g, v| g.log_softmax_rows(v[0]))?;
    run("layer_norm", vec![("a", a34.clone()), ("gamma", gamma), ("beta", beta)], &|g, v| {
        g.layer_norm_rows(v[0], v[1], v[2], 1e-5)
    })?;
    run("sum", vec![("a", a34.clone())], &|g, v| g.sum(v[0]))?;
    run("slice_cols", vec![("a", a34.clone())], &|g, v| g.slice_cols(v[0], 1, 2))?;
    run("concat_cols", vec![("a", a34.clone()), ("b", b45.clone().transpose().slice_rows(0, 3))], &|g, v| {
        g.concat_cols(&[v[0], v[1], v[0]])
    })?;
    run("slice_rows", vec![("a", a34.clone())], &|g, v| g.slice_rows(v[0], 1, 2))?;
    run("concat_rows", vec![("a", a34.clone()), ("b", row.clone())], &|g, v| g.concat_rows(&[v[1], v[0], v[1]]))?;
    run("attention", vec![("q", q43), ("k", k53), ("v", v53)], &|g, v| {
        let mask = AttentionMask::from_fn(3, 5, |i, j| j <= i + 2);
        Ok(attend(g, v[0], v[1], v[2], 2, Some(&mask), 4)?.0)
    })?;

    let mut rng3 = ChaCha8Rng::seed_from_u64(seed ^ 0x1055);
    let gt: Vec<f64> = (0..5).map(|_| rng3.random_range(0.0..1.0)).collect();
    let weights = vec![1.0, 1.0, 1.0, 1.0, 0.0];
    let logits = random(&mut rng3, 5, 1, -2.0, 2.0);
    run("trailerness_loss", vec![("a", logits)], &move |g, v| {
        let s = g.sigmoid(v[0])?;
        trailerness_loss_graph(g, s, &gt, &weights)
    })?;
    let (pred, target) = (random(&mut rng3, 4, 6, -1.5, 1.5), random(&mut rng3, 4, 6, -1.5, 1.5));
    let rows = vec![1.0, 1.0, 1.0, 0.0];
    let rw = rows.clone();
    run("reconstruction_loss", vec![("a", pred.clone()), ("b", target.clone())], &move |g, v| {
        reconstruction_loss_graph(g, v[0], v[1], &rw)
    })?;
    run("kl_loss", vec![("a", pred), ("b", target)], &move |g, v| kl_loss_graph(g, v[0], v[1], &rows))?;
    Ok(out)
}

fn small_example(rng: &mut ChaCha8Rng, id: &str, n: usize, m: usize, d: usize, cond_dim: Option<usize>) -> Result<Example> {
    let movie: Vec<Vec<f32>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect()).collect();
    let idx: Vec<i64> = (0..m).map(|_| rng.random_range(1..=n as i64)).collect();
    let trailer: Vec<Vec<f32>> =
        idx.iter().map(|&i| movie[i as usize - 1].iter().map(|&v| v + rng.random_range(-0.1f32..0.1)).collect()).collect();
    let condition = match cond_dim {
        Some(c) => Some(ConditionSequence::new(id, 2, c, (0..2 * c).map(|_| rng.random_range(-1.0f32..1.0)).collect())?),
        None => None,
    };
    Ok(Example {
        id: id.into(),
        movie: MovieSequence::from_rows(id, movie)?,
        trailer: TrailerSequence::from_rows(id, trailer, Some(idx))?,
        condition,
    })
}

/// Gradient check of the full weighted loss through the whole model on a
/// two-shot movie; the seed also picks among architecture variants.
pub fn model_report(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mc = ModelConfig {
        d_model: 8,
        heads: 2,
        ff_dim: 16,
        context_layers: 1,
        decoder_layers: 1,
        max_positions: 16,
        token_init_std: 0.5,
        // a detached target is deliberately not the derivative of the loss
        detach_eos_target: false,
        init_seed: seed,
        ..ModelConfig::desk()
    };
    let mut cond_dim = None;
    let mut normalize = false;
    match seed % 4 {
        1 => mc.norm = NormPlacement::Pre,
        2 => {
            mc.score_fusion = ScoreFusion::Projected;
            mc.positional = PositionalScheme::Learned;
        }
        3 => {
            mc.condition = Some(ConditionConfig { mode: ConditionMode::Contextualized, dim: 5 });
            cond_dim = Some(5);
            normalize = true;
        }
        _ => {}
    }
    let ex = small_example(&mut rng, "g", 2, 2, 8, cond_dim)?;
    let (model, mut store) = TgtModel::new::<f64>(mc)?;
    let pair = if seed % 5 == 4 {
        let other = small_example(&mut rng, "h", 4, 3, 8, cond_dim)?;
        pad_batch(&[&ex, &other])?.pairs.remove(0)
    } else {
        unpadded(&ex)?
    };
    let weights = LossWeights::default();
    grad_check("tgt_total_loss", &mut store, cfg, |g, s| Ok(model.pair_loss(g, s, &pair, &weights, normalize)?.total))
}

/// Every op, loss and the full model, merged per name over `seeds` seeds.
pub fn gradcheck_suite(seeds: u64, cfg: &GradCheckConfig) -> Result<Vec<GradCheckReport>> {
    let mut merged: Vec<GradCheckReport> = Vec::new();
    let mut fold = |r: GradCheckReport| match merged.iter_mut().find(|m| m.name == r.name) {
        Some(m) => m.merge(r),
        None => merged.push(r),
    };
    for seed in 0..seeds {
        for r in op_reports(seed, cfg)? {
            fold(r);
        }
        fold(model_report(seed, cfg)?);
    }
    Ok(merged)
}
