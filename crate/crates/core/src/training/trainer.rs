//! Deterministic mini-batch training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::dataset::{trailer_length_p95, Example};
use crate::error::{Error, Result};
use crate::losses::LossBreakdown;
use crate::model::TgtModel;
use crate::numerics::{Graph, ParamStore};

use super::batch::pad_batch;
use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::optimizer::AdamW;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    /// Mean over the pairs of the batch.
    pub loss: LossBreakdown,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

/// Order in which the pairs of `epoch` are visited; a pure function of
/// `(seed, epoch)` so a resumed run sees the same batches.
pub fn epoch_order(seed: u64, epoch: usize, pairs: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut order: Vec<usize> = (0..pairs).collect();
    order.shuffle(&mut rng);
    order
}

/// Default autoregressive length cap: twice the 95th-percentile trailer length.
pub fn default_max_len(train: &[Example]) -> usize {
    2 * trailer_length_p95(train)
}

pub struct Trainer {
    pub model: TgtModel,
    pub store: ParamStore<f32>,
    pub optimizer: AdamW<f32>,
    pub config: TrainConfig,
    pub step: u64,
    pub decode_max_len: usize,
    pub split_fingerprint: String,
    pub history: Vec<StepLog>,
}

impl Trainer {
    pub fn new(model: ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let (model, store) = TgtModel::new::<f32>(model)?;
        let optimizer = AdamW::new(config.optimizer, &store);
        Ok(Trainer { model, store, optimizer, config, step: 0, decode_max_len: 1, split_fingerprint: String::new(), history: vec![] })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut t = Trainer::new(ck.model.clone(), ck.train.clone())?;
        ck.restore_into(&mut t.store)?;
        t.optimizer = ck.optimizer.clone();
        t.step = ck.step;
        t.decode_max_len = ck.decode_max_len;
        t.split_fingerprint = ck.split_fingerprint.clone();
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.config.clone(),
            train: self.config.clone(),
            step: self.step,
            decode_max_len: self.decode_max_len,
            split_fingerprint: self.split_fingerprint.clone(),
            params: self.store.clone(),
            optimizer: self.optimizer.clone(),
        }
    }

    pub fn total_steps(&self, pairs: usize) -> usize {
        self.config.resolved_total(pairs)
    }

    /// One optimizer update on the batch scheduled for the current step.
    /// On a non-finite loss or gradient the parameters are left untouched.
    pub fn train_step(&mut self, data: &[Example]) -> Result<StepLog> {
        if data.is_empty() {
            return Err(Error::Argument("training set is empty".into()));
        }
        let schedule = self.config.schedule(data.len())?;
        let step = self.step as usize;
        if step >= schedule.total_steps {
            return Err(Error::Argument(format!("step {step} beyond the {}-step budget", schedule.total_steps)));
        }
        let per_epoch = self.config.steps_per_epoch(data.len());
        let (epoch, slot) = (step / per_epoch, step % per_epoch);
        let order = epoch_order(self.config.seed, epoch, data.len());
        let bs = self.config.batch_size;
        let members: Vec<&Example> = order[slot * bs..((slot + 1) * bs).min(order.len())].iter().map(|&i| &data[i]).collect();
        let batch = pad_batch(&members)?;

        self.store.zero_grad();
        let scale = 1.0 / batch.pairs.len() as f64;
        let mut mean = LossBreakdown::default();
        let outcome = (|| -> Result<()> {
            for pair in &batch.pairs {
                let mut g = Graph::new();
                let loss = self.model.pair_loss(&mut g, &self.store, pair, &self.config.loss_weights, self.config.normalize_losses)?;
                if !loss.parts.is_finite() {
                    return Err(Error::NonFinite { op: "loss" });
                }
                g.backward(loss.total)?.accumulate_into(&mut self.store, scale as f32);
                mean.l_t += loss.parts.l_t * scale;
                mean.l_rec += loss.parts.l_rec * scale;
                mean.l_kl += loss.parts.l_kl * scale;
                mean.total += loss.parts.total * scale;
            }
            Ok(())
        })();
        if let Err(e) = outcome {
            self.store.zero_grad();
            return Err(e);
        }
        let grad_norm = self.store.grad_norm() as f64;
        if !grad_norm.is_finite() {
            self.store.zero_grad();
            return Err(Error::NonFinite { op: "gradient" });
        }
        if let Some(cap) = self.config.clip_norm {
            if grad_norm > cap {
                self.store.scale_grads((cap / grad_norm) as f32);
            }
        }
        let lr = schedule.lr_at_step(step + 1)?;
        self.optimizer.step(&mut self.store, lr)?;
        self.step += 1;
        let log = StepLog { step: self.step, epoch, lr, loss: mean, grad_norm };
        self.history.push(log);
        Ok(log)
    }

    /// Trains until `until` steps (or the full budget) have been taken,
    /// calling `on_step` after every update.
    pub fn run(&mut self, data: &[Example], until: Option<u64>, mut on_step: impl FnMut(&StepLog)) -> Result<()> {
        let total = self.total_steps(data.len()) as u64;
        let end = until.map_or(total, |u| u.min(total));
        if self.decode_max_len <= 1 {
            self.decode_max_len = default_max_len(data);
        }
        while self.step < end {
            let log = self.train_step(data)?;
            on_step(&log);
        }
        Ok(())
    }
}

/// Convenience wrapper: a full run from initialisation.
pub fn train(data: &[Example], model: ModelConfig, config: TrainConfig) -> Result<Trainer> {
    let mut t = Trainer::new(model, config)?;
    t.run(data, None, |_| {})?;
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TgtModel;
    use crate::shotcore::{MovieSequence, TrailerSequence};
    use rand::Rng;

    fn tiny() -> ModelConfig {
        ModelConfig { d_model: 8, heads: 2, ff_dim: 16, context_layers: 1, decoder_layers: 1, max_positions: 64, ..ModelConfig::desk() }
    }

    fn data(seed: u64, count: usize) -> Vec<Example> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|k| {
                let n = rng.random_range(4..9);
                let m = rng.random_range(1..4);
                let movie: Vec<Vec<f32>> = (0..n).map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
                let idx: Vec<i64> = (0..m).map(|_| rng.random_range(1..=n as i64)).collect();
                let trailer = idx.iter().map(|&i| movie[i as usize - 1].clone()).collect();
                Example {
                    id: format!("p{k}"),
                    movie: MovieSequence::from_rows("m", movie).unwrap(),
                    trailer: TrailerSequence::from_rows("t", trailer, Some(idx)).unwrap(),
                    condition: None,
                }
            })
            .collect()
    }

    fn cfg() -> TrainConfig {
        TrainConfig { lr_peak: 1e-3, batch_size: 3, epochs: 4, ..TrainConfig::default() }
    }

    #[test]
    fn epoch_orders_are_permutations_and_reproducible() {
        let a = epoch_order(3, 2, 10);
        assert_eq!(a, epoch_order(3, 2, 10));
        assert_ne!(a, epoch_order(3, 3, 10));
        let mut s = a.clone();
        s.sort_unstable();
        assert_eq!(s, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn identical_seeds_give_identical_curves() {
        let d = data(1, 7);
        let a = train(&d, tiny(), cfg()).unwrap();
        let b = train(&d, tiny(), cfg()).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.history.len(), 12);
        assert!(a.store.iter().zip(b.store.iter()).all(|(p, q)| p.value == q.value));
    }

    #[test]
    fn zero_steps_leave_initialisation() {
        let d = data(2, 4);
        let t = train(&d, tiny(), TrainConfig { epochs: 0, ..cfg() }).unwrap();
        let (_, init) = TgtModel::new::<f32>(tiny()).unwrap();
        assert!(t.store.iter().zip(init.iter()).all(|(p, q)| p.value == q.value));
        assert!(t.history.is_empty());
    }

    #[test]
    fn resume_continues_bitwise() {
        let d = data(3, 7);
        let straight = train(&d, tiny(), cfg()).unwrap();
        let mut first = Trainer::new(tiny(), cfg()).unwrap();
        first.run(&d, Some(5), |_| {}).unwrap();
        let bytes = first.checkpoint().to_bytes().unwrap();
        let mut resumed = Trainer::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        resumed.run(&d, None, |_| {}).unwrap();
        assert_eq!(&straight.history[5..], &resumed.history[..]);
        assert!(straight.store.iter().zip(resumed.store.iter()).all(|(p, q)| p.value == q.value));
        assert_eq!(straight.optimizer, resumed.optimizer);
    }

    #[test]
    fn loss_decreases_on_tiny_set() {
        let d = data(4, 3);
        let t = train(&d, tiny(), TrainConfig { lr_peak: 3e-3, batch_size: 3, epochs: 150, ..TrainConfig::default() }).unwrap();
        let first = t.history.first().unwrap().loss.total;
        let last = t.history.last().unwrap().loss.total;
        assert!(last < first * 0.5, "{first} -> {last}");
    }

    #[test]
    fn budget_is_enforced() {
        let d = data(5, 2);
        let mut t = Trainer::new(tiny(), TrainConfig { epochs: 1, batch_size: 2, ..cfg() }).unwrap();
        t.train_step(&d).unwrap();
        assert!(matches!(t.train_step(&d), Err(Error::Argument(_))));
    }
}
