use crate::data::{batch_iter, SegSample, IGNORE_INDEX};
use crate::error::{Error, Result};
use crate::network::SegModel;
use crate::tensor::Tensor;

/// `counts[g][p]`: pixels of ground-truth class `g` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            k: num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.k + pred]
    }

    /// Row-major `K x K` counts.
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Scores aligned label slices; pixels whose truth is `ignore` are skipped.
    pub fn accumulate(&mut self, gt: &[u8], pred: &[u8], ignore: Option<u8>) -> Result<()> {
        if gt.len() != pred.len() {
            return Err(Error::ShapeMismatch {
                op: "confusion",
                lhs: vec![gt.len()].as_slice().into(),
                rhs: vec![pred.len()].as_slice().into(),
            });
        }
        for (i, (&g, &p)) in gt.iter().zip(pred).enumerate() {
            if Some(g) == ignore {
                continue;
            }
            let (g, p) = (usize::from(g), usize::from(p));
            if g >= self.k || p >= self.k {
                return Err(Error::TargetOutOfRange {
                    value: g.max(p),
                    n: 0,
                    y: 0,
                    x: i,
                    classes: self.k,
                });
            }
            self.counts[g * self.k + p] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.k, other.k, "merging confusion matrices of different sizes");
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn true_positives(&self, k: usize) -> u64 {
        self.get(k, k)
    }

    pub fn false_positives(&self, k: usize) -> u64 {
        (0..self.k).filter(|&g| g != k).map(|g| self.get(g, k)).sum()
    }

    pub fn false_negatives(&self, k: usize) -> u64 {
        (0..self.k).filter(|&p| p != k).map(|p| self.get(k, p)).sum()
    }

    /// `TP / (TP + FP + FN)`, or `None` when the class is absent from both
    /// truth and prediction.
    pub fn iou(&self, k: usize) -> Option<f64> {
        let tp = self.true_positives(k);
        let denom = tp + self.false_positives(k) + self.false_negatives(k);
        (denom > 0).then(|| tp as f64 / denom as f64)
    }

    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        (0..self.k).map(|k| self.iou(k)).collect()
    }

    /// Mean over classes with a defined IoU (0 if there are none).
    pub fn mean_iou(&self) -> f64 {
        mean_defined(&self.per_class_iou())
    }

    /// Fraction of class-`k` pixels labeled `k`, `None` if `k` never occurs
    /// in the truth.
    pub fn class_accuracy(&self, k: usize) -> Option<f64> {
        let row: u64 = (0..self.k).map(|p| self.get(k, p)).sum();
        (row > 0).then(|| self.get(k, k) as f64 / row as f64)
    }

    pub fn mean_class_accuracy(&self) -> f64 {
        let acc: Vec<Option<f64>> = (0..self.k).map(|k| self.class_accuracy(k)).collect();
        mean_defined(&acc)
    }

    pub fn pixel_accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let correct: u64 = (0..self.k).map(|k| self.get(k, k)).sum();
        correct as f64 / total as f64
    }
}

fn mean_defined(v: &[Option<f64>]) -> f64 {
    let defined: Vec<f64> = v.iter().flatten().copied().collect();
    if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    }
}

/// Per-pixel argmax over the class axis of `N x K x ...` logits, ties to the
/// lowest class. Returns `N * spatial` labels.
pub fn argmax_classes(logits: &Tensor) -> Vec<u8> {
    let s = logits.shape();
    let (n, k) = (s[0], s[1]);
    let spatial: usize = s[2..].iter().product();
    let d = logits.data();
    let mut out = Vec::with_capacity(n * spatial);
    for ni in 0..n {
        for p in 0..spatial {
            let mut best = 0;
            let mut best_v = d[ni * k * spatial + p];
            for j in 1..k {
                let v = d[(ni * k + j) * spatial + p];
                if v > best_v {
                    best = j;
                    best_v = v;
                }
            }
            out.push(best as u8);
        }
    }
    out
}

/// Summary metrics derived from a confusion matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub per_class_iou: Vec<Option<f64>>,
    pub mean_iou: f64,
    pub mean_class_accuracy: f64,
    pub pixel_accuracy: f64,
}

impl From<ConfusionMatrix> for Evaluation {
    fn from(confusion: ConfusionMatrix) -> Self {
        Self {
            per_class_iou: confusion.per_class_iou(),
            mean_iou: confusion.mean_iou(),
            mean_class_accuracy: confusion.mean_class_accuracy(),
            pixel_accuracy: confusion.pixel_accuracy(),
            confusion,
        }
    }
}

/// Scores `model` on `data` in batches of `batch`.
pub fn evaluate(model: &SegModel, data: &[SegSample], batch: usize) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Dataset("cannot evaluate on an empty dataset".into()));
    }
    let mut cm = ConfusionMatrix::new(model.config().num_classes);
    for b in batch_iter(data, batch.max(1), None)? {
        let logits = model.forward(&b.images)?;
        cm.accumulate(&b.masks, &argmax_classes(&logits), Some(IGNORE_INDEX))?;
    }
    Ok(cm.into())
}
