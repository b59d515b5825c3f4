//! Hand-computed parameter and FLOP ledgers from `docs/accounting.md`.

use segattn_core::network::{ModelConfig, SegModel};
use segattn_core::nn::InitSpec;

pub struct Ledger {
    pub input: [usize; 4],
    /// `(layer, output C x H x W, FLOPs)`
    pub layers: &'static [(&'static str, [usize; 3], u64)],
    pub params: usize,
    pub flops: u64,
}

pub const REFERENCE: Ledger = Ledger {
    input: [1, 3, 32, 32],
    layers: &[
        ("stem", [8, 32, 32], 458_752),
        ("b1.stage0.block0", [8, 32, 32], 2_400_256),
        ("b1.stage1.block0", [8, 32, 32], 2_400_256),
        ("attention1", [8, 32, 32], 262_336),
        ("fusion", [8, 32, 32], 565_248),
        ("align", [8, 32, 32], 0),
        ("attention2", [8, 32, 32], 262_336),
        ("classifier", [3, 32, 32], 52_224),
    ],
    params: 2869,
    flops: 6_401_408,
};

pub const DEFAULT: Ledger = Ledger {
    input: [1, 3, 32, 32],
    layers: &[
        ("stem", [8, 30, 30], 403_200),
        ("b1.stage0.block0", [8, 30, 30], 2_109_600),
        ("b1.stage0.pool", [8, 15, 15], 1_800),
        ("b1.stage1.transition", [16, 15, 15], 64_800),
        ("b1.stage1.block0", [16, 15, 15], 2_091_600),
        ("b1.stage1.pool", [16, 7, 7], 784),
        ("b1.stage2.block0", [16, 7, 7], 455_504),
        ("decoder0", [8, 28, 28], 213_248),
        ("align", [8, 32, 32], 0),
        ("classifier", [3, 32, 32], 52_224),
    ],
    params: 12_899,
    flops: 5_392_760,
};

pub const MINIMAL: Ledger = Ledger {
    input: [1, 2, 8, 8],
    layers: &[
        ("stem", [2, 8, 8], 4_864),
        ("b1.stage0.block0", [2, 8, 8], 9_856),
        ("b1.stage0.pool", [2, 4, 4], 32),
        ("b1.stage1.block0", [2, 4, 4], 2_464),
        ("b2.stage0.block0", [1, 8, 8], 3_200),
        ("b2.stage0.pool", [1, 4, 4], 16),
        ("b2.stage1.block0", [1, 4, 4], 768),
        ("attention1", [2, 4, 4], 268),
        ("fusion", [2, 4, 4], 1_088),
        ("decoder0", [2, 16, 16], 3_072),
        ("align", [2, 8, 8], 0),
        ("attention2", [2, 8, 8], 1_036),
        ("classifier", [3, 8, 8], 960),
    ],
    params: 351,
    flops: 27_624,
};

/// First disagreement between a model and its ledger.
pub fn mismatch(cfg: &ModelConfig, ledger: &Ledger) -> Option<String> {
    let m = SegModel::build(cfg, InitSpec::new(0)).ok()?;
    if m.count_params() != ledger.params {
        return Some(format!("params {} != {}", m.count_params(), ledger.params));
    }
    let flops = m.count_flops(ledger.input).ok()?;
    if flops != ledger.flops {
        return Some(format!("flops {flops} != {}", ledger.flops));
    }
    let trace = m.trace(ledger.input).ok()?;
    if trace.len() != ledger.layers.len() {
        return Some(format!("{} layers, ledger has {}", trace.len(), ledger.layers.len()));
    }
    for (l, &(name, shape, f)) in trace.iter().zip(ledger.layers) {
        let got = [l.out_shape[1], l.out_shape[2], l.out_shape[3]];
        if l.name != name || got != shape || l.flops != f {
            return Some(format!("{} {:?} {} vs ledger {name} {:?} {f}", l.name, got, l.flops, shape));
        }
    }
    None
}
