use rand::Rng;

use super::{Mask, SegSample, IGNORE_INDEX};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Random geometric augmentation applied to training samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Probability of a horizontal flip.
    pub hflip_p: f64,
    /// Shear factors are drawn uniformly from `[-shear, shear]`.
    pub shear: f64,
    /// Random crop size `(h, w)`.
    pub crop: Option<(usize, usize)>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            hflip_p: 0.5,
            shear: 0.2,
            crop: None,
        }
    }
}

/// Mirrors image and mask left to right.
pub fn hflip(s: &SegSample) -> SegSample {
    let (c, h, w) = (s.channels(), s.height(), s.width());
    let src = s.image.data();
    let img = Tensor::from_fn(&[c, h, w], |i| {
        let x = i % w;
        src[i - x + (w - 1 - x)]
    });
    let mut mask = s.mask.clone();
    for row in mask.labels.chunks_exact_mut(w) {
        row.reverse();
    }
    SegSample {
        id: s.id.clone(),
        image: img,
        mask,
    }
}

/// The `h x w` window whose top-left corner is `(top, left)`.
pub fn crop(s: &SegSample, top: usize, left: usize, h: usize, w: usize) -> Result<SegSample> {
    let (c, sh, sw) = (s.channels(), s.height(), s.width());
    if top + h > sh || left + w > sw || h == 0 || w == 0 {
        return Err(Error::CropTooLarge {
            crop_h: h,
            crop_w: w,
            h: sh.saturating_sub(top),
            w: sw.saturating_sub(left),
        });
    }
    let src = s.image.data();
    let img = Tensor::from_fn(&[c, h, w], |i| {
        let (ch, y, x) = (i / (h * w), (i / w) % h, i % w);
        src[(ch * sh + top + y) * sw + left + x]
    });
    let mut labels = Vec::with_capacity(h * w);
    for y in 0..h {
        let start = (top + y) * sw + left;
        labels.extend_from_slice(&s.mask.labels[start..start + w]);
    }
    Ok(SegSample {
        id: s.id.clone(),
        image: img,
        mask: Mask::new(h, w, labels)?,
    })
}

/// Horizontal shear about the image center: output pixel `(y, x')` is read
/// from `x = x' - lambda (y - cy)`. Images are sampled linearly (zero
/// outside the frame), masks by nearest neighbor with [`IGNORE_INDEX`] fill.
pub fn shear(s: &SegSample, lambda: f64) -> SegSample {
    let (c, h, w) = (s.channels(), s.height(), s.width());
    let cy = (h as f64 - 1.0) / 2.0;
    let src = s.image.data();
    let mut img = vec![0.0; c * h * w];
    let mut mask = Mask::filled(h, w, IGNORE_INDEX);
    for y in 0..h {
        let shift = lambda * (y as f64 - cy);
        for xo in 0..w {
            let x = xo as f64 - shift;
            let nearest = x.round();
            if nearest >= 0.0 && nearest < w as f64 {
                mask.set(y, xo, s.mask.get(y, nearest as usize));
            }
            let x0 = x.floor();
            let t = x - x0;
            for (dx, weight) in [(0.0, 1.0 - t), (1.0, t)] {
                let xs = x0 + dx;
                if weight == 0.0 || xs < 0.0 || xs >= w as f64 {
                    continue;
                }
                for ch in 0..c {
                    img[(ch * h + y) * w + xo] += weight * src[(ch * h + y) * w + xs as usize];
                }
            }
        }
    }
    SegSample {
        id: s.id.clone(),
        image: Tensor::new(&[c, h, w], img).expect("shape preserved"),
        mask,
    }
}

/// Shear, crop and flip with parameters drawn from `rng`, in that order.
pub fn augment<R: Rng + ?Sized>(s: &SegSample, cfg: &AugmentConfig, rng: &mut R) -> Result<SegSample> {
    let mut out = if cfg.shear > 0.0 {
        shear(s, rng.random_range(-cfg.shear..=cfg.shear))
    } else {
        s.clone()
    };
    if let Some((h, w)) = cfg.crop {
        if h > out.height() || w > out.width() {
            return Err(Error::CropTooLarge {
                crop_h: h,
                crop_w: w,
                h: out.height(),
                w: out.width(),
            });
        }
        let top = rng.random_range(0..=out.height() - h);
        let left = rng.random_range(0..=out.width() - w);
        out = crop(&out, top, left, h, w)?;
    }
    if rng.random_bool(cfg.hflip_p.clamp(0.0, 1.0)) {
        out = hflip(&out);
    }
    Ok(out)
}
