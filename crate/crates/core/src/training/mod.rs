//! Optimization: batching, AdamW, learning-rate schedule, checkpoints and
//! the training loop.

mod batch;
mod checkpoint;
mod config;
mod optimizer;
mod schedule;
mod trainer;

pub use batch::{pad_batch, pad_pair, unpadded, Batch, PaddedPair, PairMasks};
pub use checkpoint::{Checkpoint, TensorEntry, TensorRole, MAGIC, VERSION};
pub use config::{RunConfig, TrainConfig};
pub use optimizer::{AdamW, AdamWConfig};
pub use schedule::Schedule;
pub use trainer::{default_max_len, epoch_order, train, StepLog, Trainer};
