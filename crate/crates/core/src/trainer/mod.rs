//! Device-side local fine-tuning on synthetic classification data.

mod data;
mod local;
mod loss;
mod optim;

pub use data::{dirichlet_partition, make_synthetic, Batch, Sample, SyntheticDataset, SyntheticTask, TaskShape};
pub use local::{evaluate, local_finetune, Evaluation, LocalSchedule};
pub use loss::{cross_entropy, loss_and_grad};
pub use optim::{apply_grads, cosine_lr, AdamWParams, OptimizerKind, OptimizerState};
