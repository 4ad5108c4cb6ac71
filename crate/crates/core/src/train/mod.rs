//! Adam, the cosine learning-rate schedule and the pretraining loops.

mod optim;
mod pretrain;

pub use optim::{adam_update, cosine_lr, AdamState, OptimConfig};
pub use pretrain::{pretrain, pretrain_graphs, EpochRecord, RunConfig, TrainLog};
