//! Loss, optimizer, training loop and evaluation metrics.

mod metrics;
mod optim;
mod trainer;

pub use metrics::{argmax_classes, evaluate, ConfusionMatrix, Evaluation};
pub use optim::{adam_step, AdamConfig, OptimState};
pub use trainer::{
    benchmark_fps, split_dataset, train, train_step, EpochRecord, FpsReport, LrSchedule, StepStats, TrainConfig,
    TrainOutcome, TrainReport, REPORT_HEADER,
};

use crate::autodiff::Graph;
use crate::error::Result;
use crate::tensor::Tensor;

/// Mean softmax cross-entropy of `N x K x H x W` logits against `N*H*W`
/// targets, skipping `ignore_index`.
pub fn softmax_ce_loss(logits: &Tensor, targets: &[u8], ignore_index: Option<u8>) -> Result<f64> {
    let mut g = Graph::new();
    let l = g.constant(logits.clone());
    let loss = g.softmax_cross_entropy(l, targets, ignore_index)?;
    Ok(g.value(loss).item())
}
