use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Mask, SegSample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Synthetic scenes of class-colored rectangles and discs on a class-0
/// background.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub seed: u64,
    /// Standard deviation of the additive Gaussian pixel noise.
    pub noise: f64,
    /// Forces this many shapes per sample instead of the random count.
    pub shapes_per_sample: Option<usize>,
}

impl SyntheticConfig {
    pub fn new(n: usize, (height, width): (usize, usize), classes: usize, seed: u64) -> Self {
        Self {
            n,
            height,
            width,
            classes,
            seed,
            noise: 0.05,
            shapes_per_sample: None,
        }
    }
}

const COLORS: [[f64; 3]; 12] = [
    [0.15, 0.15, 0.15],
    [0.85, 0.25, 0.20],
    [0.20, 0.75, 0.30],
    [0.25, 0.35, 0.90],
    [0.90, 0.85, 0.20],
    [0.80, 0.30, 0.85],
    [0.20, 0.85, 0.85],
    [0.95, 0.95, 0.95],
    [0.55, 0.35, 0.10],
    [0.50, 0.50, 0.50],
    [0.10, 0.40, 0.40],
    [0.60, 0.70, 0.20],
];

/// Mean RGB color of class `k`.
pub fn class_color(k: usize) -> [f64; 3] {
    if k < COLORS.len() {
        return COLORS[k];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
    [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)]
}

/// Generates `cfg.n` samples. Sample `s` uses ChaCha stream `s` of the seed,
/// so every sample is independent of the others.
///
/// Sample `s` always contains the `q` foreground classes
/// `1 + (s*q + j) mod (K-1)`, `j < q`, with `q = ceil((K-1)·ceil(n/K)/n)`,
/// which puts every class in at least `ceil(n/K)` samples; further classes are
/// added at random. Shapes occupy disjoint grid cells, so none is occluded.
pub fn gen_synthetic(cfg: &SyntheticConfig) -> Result<Vec<SegSample>> {
    if cfg.classes < 2 || cfg.classes > 255 {
        return Err(Error::InvalidConfig(format!("classes must lie in [2, 255], got {}", cfg.classes)));
    }
    if cfg.height < 16 || cfg.width < 16 {
        return Err(Error::InvalidConfig(format!(
            "synthetic images must be at least 16x16, got {}x{}",
            cfg.height, cfg.width
        )));
    }
    let fg = cfg.classes - 1;
    let q = if cfg.n == 0 {
        0
    } else {
        (fg * cfg.n.div_ceil(cfg.classes)).div_ceil(cfg.n).min(fg)
    };
    (0..cfg.n).map(|s| sample(cfg, s, q)).collect()
}

fn sample(cfg: &SyntheticConfig, s: usize, q: usize) -> Result<SegSample> {
    let (h, w, fg) = (cfg.height, cfg.width, cfg.classes - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(s as u64);

    let mut classes: Vec<usize> = (0..q).map(|j| 1 + (s * q + j) % fg).collect();
    let mut rest: Vec<usize> = (1..=fg).filter(|c| !classes.contains(c)).collect();
    rest.shuffle(&mut rng);
    let extra = if rest.is_empty() { 0 } else { rng.random_range(0..=rest.len()) };
    classes.extend(rest.into_iter().take(extra));
    if classes.is_empty() && fg > 0 && cfg.shapes_per_sample.is_none() {
        classes.push(rng.random_range(1..=fg));
    }
    if let Some(k) = cfg.shapes_per_sample {
        classes.truncate(k);
        while classes.len() < k.min(fg) {
            classes.push(1 + classes.len() % fg);
        }
    }

    // Cells narrower than 4 pixels cannot hold a shape.
    let max_grid = h.min(w) / 4;
    classes.truncate(max_grid * max_grid);

    let mut mask = Mask::filled(h, w, 0);
    if !classes.is_empty() {
        let grid = (classes.len() as f64).sqrt().ceil() as usize;
        let (cell_h, cell_w) = (h / grid, w / grid);
        let mut cells: Vec<usize> = (0..grid * grid).collect();
        cells.shuffle(&mut rng);
        for (&class, &cell) in classes.iter().zip(&cells) {
            let (cy0, cx0) = ((cell / grid) * cell_h, (cell % grid) * cell_w);
            let max_side = (cell_h.min(cell_w) * 7 / 8).min(h.min(w) / 2).max(3);
            let min_side = (max_side / 3).max(3).min(max_side);
            let sh = rng.random_range(min_side..=max_side);
            let sw = rng.random_range(min_side..=max_side);
            let top = cy0 + rng.random_range(0..=cell_h - sh);
            let left = cx0 + rng.random_range(0..=cell_w - sw);
            let disc = rng.random_bool(0.5);
            let label = class as u8;
            let (cy, cx) = (top as f64 + (sh as f64 - 1.0) / 2.0, left as f64 + (sw as f64 - 1.0) / 2.0);
            let r = sh.min(sw) as f64 / 2.0;
            for y in top..top + sh {
                for x in left..left + sw {
                    let inside = !disc || {
                        let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                        dy * dy + dx * dx <= r * r
                    };
                    if inside {
                        mask.set(y, x, label);
                    }
                }
            }
        }
    }

    let noise = Normal::new(0.0, cfg.noise.max(0.0)).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut img = vec![0.0; 3 * h * w];
    for c in 0..3 {
        for p in 0..h * w {
            let base = class_color(usize::from(mask.labels[p]))[c];
            let v = if cfg.noise > 0.0 { base + noise.sample(&mut rng) } else { base };
            img[c * h * w + p] = v.clamp(0.0, 1.0);
        }
    }
    SegSample::new(format!("syn{s:05}"), Tensor::new(&[3, h, w], img)?, mask)
}
