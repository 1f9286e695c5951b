//! Training loop, datasets, optimizer and evaluation harness.

mod config;
mod data;
mod optim;
mod trainer;

pub use config::{DatasetKind, DecayPolicy, TrainConfig};
pub use data::{fit_segment, load_paired_dirs, synthetic_pair, Dataset, Pair, PairedBatch, Split};
pub use optim::{Adam, LrSchedule, ADAM_BETAS, ADAM_EPS};
pub use trainer::{batch_loss, evaluate, evaluate_with, loss_and_grads, train, train_model, LogRecord, TrainLog};
