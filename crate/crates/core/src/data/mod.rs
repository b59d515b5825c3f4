//! Samples, synthetic scenes, netpbm I/O, class remapping, augmentation
//! and batching.

mod augment;
mod batch;
mod classmap;
mod manifest;
mod netpbm;
mod synthetic;

pub use augment::{augment, crop, hflip, shear, AugmentConfig};
pub use batch::{batch_iter, Batch, BatchIter};
pub use classmap::{ClassMap, PaletteEntry};
pub use manifest::{load_dataset, read_manifest, write_dataset, ManifestEntry, MANIFEST_NAME};
pub use netpbm::{
    decode_pgm, decode_ppm, encode_pgm, encode_ppm, load_image, load_mask, save_image, save_mask, GrayImage, RgbImage,
};
pub use synthetic::{class_color, gen_synthetic, SyntheticConfig};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mask value excluded from the loss and the metrics.
pub const IGNORE_INDEX: u8 = 255;

/// Per-pixel class labels, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::Dataset(format!(
                "mask {height}x{width} needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        Ok(Self { height, width, labels })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Self {
        Self {
            height,
            width,
            labels: vec![value; height * width],
        }
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        self.labels[y * self.width + x] = v;
    }

    /// Pixel count per label value.
    pub fn histogram(&self) -> [usize; 256] {
        let mut h = [0; 256];
        for &l in &self.labels {
            h[usize::from(l)] += 1;
        }
        h
    }
}

/// An image (`C x H x W`, values in `[0, 1]`) with its label mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SegSample {
    pub id: String,
    pub image: Tensor,
    pub mask: Mask,
}

impl SegSample {
    pub fn new(id: impl Into<String>, image: Tensor, mask: Mask) -> Result<Self> {
        let s = image.shape();
        if s.len() != 3 || s[1] != mask.height || s[2] != mask.width {
            return Err(Error::Dataset(format!(
                "image {:?} and mask {}x{} disagree",
                s, mask.height, mask.width
            )));
        }
        Ok(Self {
            id: id.into(),
            image,
            mask,
        })
    }

    pub fn channels(&self) -> usize {
        self.image.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.mask.height
    }

    pub fn width(&self) -> usize {
        self.mask.width
    }
}
