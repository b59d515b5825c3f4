use std::fmt;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::metrics::{argmax_classes, evaluate, ConfusionMatrix};
use super::optim::{AdamConfig, OptimState};
use crate::autodiff::Graph;
use crate::data::{augment, batch_iter, Batch, AugmentConfig, SegSample, IGNORE_INDEX};
use crate::error::{Error, Result};
use crate::network::{Param, SegModel};
use crate::tensor::Tensor;

/// Learning-rate schedule over epochs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Multiply by `gamma` every `every` epochs.
    Step { every: usize, gamma: f64 },
}

impl LrSchedule {
    /// `constant` or `step:<epochs>:<gamma>`.
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        if s == "constant" {
            return Some(Self::Constant);
        }
        let rest = s.strip_prefix("step:")?;
        let (every, gamma) = rest.split_once(':')?;
        let every: usize = every.parse().ok()?;
        let gamma: f64 = gamma.parse().ok()?;
        (every > 0 && gamma.is_finite() && gamma > 0.0).then_some(Self::Step { every, gamma })
    }

    /// Learning rate for zero-based `epoch`.
    pub fn lr_at(&self, base: f64, epoch: usize) -> f64 {
        match *self {
            Self::Constant => base,
            Self::Step { every, gamma } => base * gamma.powi((epoch / every) as i32),
        }
    }
}

impl fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant => f.write_str("constant"),
            Self::Step { every, gamma } => write!(f, "step:{every}:{gamma}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub lr_schedule: LrSchedule,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch: 8,
            epochs: 40,
            seed: 0,
            lr_schedule: LrSchedule::Constant,
            augment: AugmentConfig::default(),
        }
    }
}

/// One completed epoch (1-based `epoch`).
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_pixel_acc: f64,
    pub val_pixel_acc: f64,
    pub val_miou: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
}

pub const REPORT_HEADER: &str = "epoch,train_loss,train_pixel_acc,val_pixel_acc,val_miou,seconds";

impl TrainReport {
    /// CSV with [`REPORT_HEADER`] and six decimals per real.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(REPORT_HEADER);
        s.push('\n');
        for r in &self.records {
            s.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                r.epoch, r.train_loss, r.train_pixel_acc, r.val_pixel_acc, r.val_miou, r.seconds
            ));
        }
        s
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

/// Result of [`train`]: the per-epoch report and the parameters of the
/// epoch with the best validation mIoU (earliest on ties).
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub best_epoch: usize,
    pub best_params: Vec<Param>,
    pub steps: u64,
}

/// Splits into `floor(ratio·n)` training and `n - floor(ratio·n)` test
/// samples after a seeded shuffle.
pub fn split_dataset(mut samples: Vec<SegSample>, ratio: f64, seed: u64) -> Result<(Vec<SegSample>, Vec<SegSample>)> {
    if samples.len() < 2 {
        return Err(Error::Dataset(format!("need at least 2 samples to split, got {}", samples.len())));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidConfig(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    samples.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((ratio * samples.len() as f64).floor() as usize).clamp(1, samples.len() - 1);
    let test = samples.split_off(n_train);
    Ok((samples, test))
}

/// Statistics of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub correct: u64,
    pub scored: u64,
}

/// Forward, loss, backward and one Adam step on `batch`.
pub fn train_step(model: &mut SegModel, opt: &mut OptimState, batch: &Batch, lr: f64) -> Result<StepStats> {
    let mut g = Graph::new();
    let vars = model.bind(&mut g, true);
    let x = g.constant(batch.images.clone());
    let logits = model.forward_graph(&mut g, &vars, x)?;
    let loss = g.softmax_cross_entropy(logits, &batch.masks, Some(IGNORE_INDEX))?;
    let loss_value = g.value(loss).item();

    let mut cm = ConfusionMatrix::new(model.config().num_classes);
    cm.accumulate(&batch.masks, &argmax_classes(g.value(logits)), Some(IGNORE_INDEX))?;
    let stats = StepStats {
        loss: loss_value,
        correct: (0..cm.num_classes()).map(|k| cm.get(k, k)).sum(),
        scored: cm.total(),
    };
    if !loss_value.is_finite() {
        return Ok(stats);
    }

    let mut grads = g.backward(loss)?;
    let grads: Vec<Tensor> = vars
        .iter()
        .zip(model.params())
        .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.value.shape())))
        .collect();
    opt.step_with_lr(model.params_mut(), &grads, lr)?;
    Ok(stats)
}

fn augmented_batch(batch: &[&SegSample], cfg: &AugmentConfig, seed: u64, epoch: usize, offset: usize) -> Result<Batch> {
    let out = batch
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_A06D);
            rng.set_stream(((epoch as u64) << 32) | (offset + i) as u64);
            augment(s, cfg, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Batch::stack(&out.iter().collect::<Vec<_>>())
}

/// Trains `model` in place. Epoch `e` (zero-based) shuffles with seed
/// `seed ^ e`; validation runs after every epoch. `on_epoch` sees each
/// record as it is produced.
pub fn train(
    model: &mut SegModel,
    train_set: &[SegSample],
    val_set: &[SegSample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Dataset("training needs non-empty training and validation sets".into()));
    }
    if cfg.batch == 0 {
        return Err(Error::InvalidConfig("batch must be >= 1".into()));
    }
    let mut opt = OptimState::new(cfg.adam, model.params());
    let mut report = TrainReport::default();
    let mut best: Option<(f64, usize, Vec<Param>)> = None;

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let lr = cfg.lr_schedule.lr_at(cfg.adam.lr, epoch);
        let iter = batch_iter(train_set, cfg.batch, Some(cfg.seed ^ epoch as u64))?;
        let index_batches = iter.index_batches();
        let mut loss_sum = 0.0;
        let (mut correct, mut scored) = (0u64, 0u64);
        let mut offset = 0;
        for (bi, idx) in index_batches.iter().enumerate() {
            let items: Vec<&SegSample> = idx.iter().map(|&i| &train_set[i]).collect();
            let batch = if cfg.augment.enabled {
                augmented_batch(&items, &cfg.augment, cfg.seed, epoch, offset)?
            } else {
                Batch::stack(&items)?
            };
            offset += items.len();
            let st = train_step(model, &mut opt, &batch, lr)?;
            if !st.loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: epoch + 1,
                    batch: bi + 1,
                });
            }
            loss_sum += st.loss;
            correct += st.correct;
            scored += st.scored;
        }
        let val = evaluate(model, val_set, cfg.batch)?;
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / index_batches.len() as f64,
            train_pixel_acc: if scored == 0 { 0.0 } else { correct as f64 / scored as f64 },
            val_pixel_acc: val.pixel_accuracy,
            val_miou: val.mean_iou,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        if best.as_ref().is_none_or(|b| record.val_miou > b.0) {
            best = Some((record.val_miou, record.epoch, model.params().to_vec()));
        }
        report.records.push(record);
    }

    let (best_epoch, best_params) = match best {
        Some((_, e, p)) => (e, p),
        None => (0, model.params().to_vec()),
    };
    Ok(TrainOutcome {
        report,
        best_epoch,
        best_params,
        steps: opt.t(),
    })
}

/// Median forward latency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FpsReport {
    pub ms_per_frame: f64,
    pub fps: f64,
}

/// Times `iters` forward passes on a constant input after `warmup`
/// untimed ones; per-frame time is the median batch time divided by `N`.
pub fn benchmark_fps(model: &SegModel, input_shape: [usize; 4], warmup: usize, iters: usize) -> Result<FpsReport> {
    let x = Tensor::from_fn(&input_shape, |i| ((i * 7919) % 1000) as f64 / 1000.0);
    model.check_input(input_shape[2], input_shape[3])?;
    for _ in 0..warmup {
        model.forward(&x)?;
    }
    let mut times = Vec::with_capacity(iters.max(1));
    for _ in 0..iters.max(1) {
        let t = Instant::now();
        model.forward(&x)?;
        times.push(t.elapsed().as_secs_f64() * 1000.0);
    }
    times.sort_by(f64::total_cmp);
    let mid = times.len() / 2;
    let median = if times.len() % 2 == 0 {
        (times[mid - 1] + times[mid]) / 2.0
    } else {
        times[mid]
    };
    let ms = (median / input_shape[0].max(1) as f64).max(1e-9);
    Ok(FpsReport {
        ms_per_frame: ms,
        fps: 1000.0 / ms,
    })
}
