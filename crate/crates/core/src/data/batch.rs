use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::SegSample;
use crate::error::{Dims, Error, Result};
use crate::tensor::Tensor;

/// Stacked images (`N x C x H x W`) and masks (`N*H*W` labels).
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub images: Tensor,
    pub masks: Vec<u8>,
    pub ids: Vec<String>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn stack(samples: &[&SegSample]) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::Dataset("empty batch".into()))?;
        let shape = first.image.shape().to_vec();
        let mut images = Vec::with_capacity(samples.len() * first.image.numel());
        let mut masks = Vec::with_capacity(samples.len() * first.mask.labels.len());
        for s in samples {
            if s.image.shape() != shape.as_slice() {
                return Err(Error::MixedSizes {
                    a: Dims(shape),
                    b: s.image.shape().into(),
                });
            }
            images.extend_from_slice(s.image.data());
            masks.extend_from_slice(&s.mask.labels);
        }
        let mut full = vec![samples.len()];
        full.extend_from_slice(&shape);
        Ok(Self {
            images: Tensor::new(&full, images)?,
            masks,
            ids: samples.iter().map(|s| s.id.clone()).collect(),
        })
    }
}

/// Yields batches in a seeded shuffled order (or dataset order without a
/// seed); the last batch may be short.
pub struct BatchIter<'a> {
    samples: &'a [SegSample],
    order: Vec<usize>,
    batch: usize,
    pos: usize,
}

pub fn batch_iter(samples: &[SegSample], batch: usize, shuffle_seed: Option<u64>) -> Result<BatchIter<'_>> {
    if batch == 0 {
        return Err(Error::Dataset("batch size must be >= 1".into()));
    }
    if let Some(first) = samples.first() {
        if let Some(other) = samples.iter().find(|s| s.image.shape() != first.image.shape()) {
            return Err(Error::MixedSizes {
                a: first.image.shape().into(),
                b: other.image.shape().into(),
            });
        }
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(BatchIter {
        samples,
        order,
        batch,
        pos: 0,
    })
}

impl BatchIter<'_> {
    /// Sample indices of every batch, in order.
    pub fn index_batches(&self) -> Vec<Vec<usize>> {
        self.order[self.pos..].chunks(self.batch).map(<[usize]>::to_vec).collect()
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch).min(self.order.len());
        let items: Vec<&SegSample> = self.order[self.pos..end].iter().map(|&i| &self.samples[i]).collect();
        self.pos = end;
        Some(Batch::stack(&items).expect("sizes checked up front"))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = (self.order.len() - self.pos).div_ceil(self.batch);
        (n, Some(n))
    }
}

impl ExactSizeIterator for BatchIter<'_> {}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SyntheticConfig};

    #[test]
    fn sizes_and_coverage() {
        let data = gen_synthetic(&SyntheticConfig::new(20, (16, 16), 3, 2)).unwrap();
        let batches: Vec<Batch> = batch_iter(&data, 8, Some(4)).unwrap().collect();
        assert_eq!(batches.iter().map(Batch::len).collect::<Vec<_>>(), vec![8, 8, 4]);
        let mut ids: Vec<String> = batches.iter().flat_map(|b| b.ids.clone()).collect();
        ids.sort();
        let mut want: Vec<String> = data.iter().map(|s| s.id.clone()).collect();
        want.sort();
        assert_eq!(ids, want);
        let again: Vec<Vec<String>> = batch_iter(&data, 8, Some(4)).unwrap().map(|b| b.ids).collect();
        assert_eq!(again, batches.iter().map(|b| b.ids.clone()).collect::<Vec<_>>());
    }

    #[test]
    fn mixed_sizes_rejected() {
        let mut data = gen_synthetic(&SyntheticConfig::new(2, (16, 16), 3, 2)).unwrap();
        data.extend(gen_synthetic(&SyntheticConfig::new(1, (16, 20), 3, 2)).unwrap());
        assert!(matches!(batch_iter(&data, 2, None), Err(Error::MixedSizes { .. })));
    }
}
