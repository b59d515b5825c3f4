use std::fmt;
use std::fmt::Write as _;

use crate::config::{join_list, parse_entries, parse_list, parse_num, Entry};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fusion {
    None,
    Concat,
}

impl fmt::Display for Fusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Fusion::None => "none",
            Fusion::Concat => "concat",
        })
    }
}

impl std::str::FromStr for Fusion {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(Fusion::None),
            "concat" => Ok(Fusion::Concat),
            _ => Err(format!("unknown fusion `{s}` (none | concat)")),
        }
    }
}

/// Where channel-attention modules are attached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AttentionPoints {
    /// After the first branch's last encoder stage.
    pub post_encoder: bool,
    /// After fusion and decoding, just before the classifier.
    pub post_fusion: bool,
}

impl AttentionPoints {
    pub const NONE: Self = Self {
        post_encoder: false,
        post_fusion: false,
    };
    pub const BOTH: Self = Self {
        post_encoder: true,
        post_fusion: true,
    };
}

impl fmt::Display for AttentionPoints {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.post_encoder, self.post_fusion) {
            (false, false) => f.write_str("none"),
            (true, false) => f.write_str("post-encoder"),
            (false, true) => f.write_str("post-fusion"),
            (true, true) => f.write_str("post-encoder,post-fusion"),
        }
    }
}

impl std::str::FromStr for AttentionPoints {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let mut p = AttentionPoints::NONE;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "none" => {}
                "post-encoder" => p.post_encoder = true,
                "post-fusion" => p.post_fusion = true,
                other => return Err(format!("unknown attention point `{other}`")),
            }
        }
        Ok(p)
    }
}

/// Declarative description of the segmentation network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub stage_channels: Vec<usize>,
    pub blocks_per_stage: usize,
    pub pooling_count: usize,
    pub branches: usize,
    pub fusion: Fusion,
    pub dilation_schedule: Vec<usize>,
    pub attention_points: AttentionPoints,
    pub decoder_kernel: usize,
    pub decoder_stride: usize,
    /// Padding of the 3x3 stem convolution.
    pub stem_padding: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            num_classes: 3,
            stage_channels: vec![8, 16, 16],
            blocks_per_stage: 1,
            pooling_count: 2,
            branches: 1,
            fusion: Fusion::None,
            dilation_schedule: vec![1, 2, 4],
            attention_points: AttentionPoints::NONE,
            decoder_kernel: 4,
            decoder_stride: 4,
            stem_padding: 0,
        }
    }
}

impl ModelConfig {
    /// A tiny model touching every layer type: two branches, concat fusion,
    /// both attention points, one pooling stage and one decoder stage.
    pub fn minimal() -> Self {
        Self {
            in_channels: 2,
            num_classes: 3,
            stage_channels: vec![2, 2],
            blocks_per_stage: 1,
            pooling_count: 1,
            branches: 2,
            fusion: Fusion::Concat,
            dilation_schedule: vec![1, 2],
            attention_points: AttentionPoints::BOTH,
            decoder_kernel: 4,
            decoder_stride: 4,
            stem_padding: 1,
        }
    }

    pub const KEYS: &'static [&'static str] = &[
        "in_channels",
        "num_classes",
        "stage_channels",
        "blocks_per_stage",
        "pooling_count",
        "branches",
        "fusion",
        "dilation_schedule",
        "attention_points",
        "decoder_kernel",
        "decoder_stride",
        "stem_padding",
    ];

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.in_channels == 0 {
            return bad("in_channels must be >= 1".into());
        }
        if !(2..=255).contains(&self.num_classes) {
            return bad(format!("num_classes must lie in [2, 255], got {}", self.num_classes));
        }
        if self.stage_channels.is_empty() || self.stage_channels.contains(&0) {
            return bad("stage_channels must be a non-empty list of positive widths".into());
        }
        if self.dilation_schedule.len() != self.stage_channels.len() || self.dilation_schedule.contains(&0) {
            return bad(format!(
                "dilation_schedule needs one positive entry per stage ({} stages, got {:?})",
                self.stage_channels.len(),
                self.dilation_schedule
            ));
        }
        if self.blocks_per_stage == 0 {
            return bad("blocks_per_stage must be >= 1".into());
        }
        if self.pooling_count > self.stage_channels.len() {
            return bad(format!(
                "pooling_count {} exceeds the number of stages {}",
                self.pooling_count,
                self.stage_channels.len()
            ));
        }
        if !(1..=2).contains(&self.branches) {
            return bad(format!("branches must be 1 or 2, got {}", self.branches));
        }
        if self.decoder_stride < 2 || self.decoder_kernel < self.decoder_stride {
            return bad("decoder needs stride >= 2 and kernel >= stride".into());
        }
        Ok(())
    }

    /// Number of transposed-convolution stages needed to undo the encoder's
    /// `2^pooling_count` downsampling: the smallest `m` with
    /// `decoder_stride^m >= 2^pooling_count` (`ceil(pooling_count / 2)` for
    /// stride 4).
    pub fn decoder_stages(&self) -> usize {
        let target = 1usize << self.pooling_count;
        let mut m = 0;
        let mut f = 1usize;
        while f < target {
            f *= self.decoder_stride;
            m += 1;
        }
        m
    }

    /// Channel widths of the second branch: half of the first, at least 1.
    pub fn branch2_channels(&self) -> Vec<usize> {
        self.stage_channels.iter().map(|&c| (c / 2).max(1)).collect()
    }

    pub(crate) fn from_entries(entries: &[Entry]) -> Result<Self> {
        let mut c = ModelConfig::default();
        let mut stages_set = false;
        let mut dilation_set = false;
        for e in entries {
            let parse_err = |msg: String| Error::ConfigParse { line: e.line, msg };
            match e.key.as_str() {
                "in_channels" => c.in_channels = parse_num(e)?,
                "num_classes" => c.num_classes = parse_num(e)?,
                "stage_channels" => {
                    c.stage_channels = parse_list(e)?;
                    stages_set = true;
                }
                "blocks_per_stage" => c.blocks_per_stage = parse_num(e)?,
                "pooling_count" => c.pooling_count = parse_num(e)?,
                "branches" => c.branches = parse_num(e)?,
                "fusion" => c.fusion = e.value.parse().map_err(parse_err)?,
                "dilation_schedule" => {
                    c.dilation_schedule = parse_list(e)?;
                    dilation_set = true;
                }
                "attention_points" => c.attention_points = e.value.parse().map_err(parse_err)?,
                "decoder_kernel" => c.decoder_kernel = parse_num(e)?,
                "decoder_stride" => c.decoder_stride = parse_num(e)?,
                "stem_padding" => c.stem_padding = parse_num(e)?,
                other => return Err(parse_err(format!("unknown key `{other}`"))),
            }
        }
        if stages_set && !dilation_set {
            // Default schedule doubles the dilation per stage.
            c.dilation_schedule = (0..c.stage_channels.len()).map(|i| 1 << i.min(6)).collect();
        }
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let c = Self::from_entries(&parse_entries(text)?)?;
        c.validate()?;
        Ok(c)
    }

    /// Canonical `key = value` block, one line per key in [`Self::KEYS`] order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "in_channels = {}", self.in_channels);
        let _ = writeln!(s, "num_classes = {}", self.num_classes);
        let _ = writeln!(s, "stage_channels = {}", join_list(&self.stage_channels));
        let _ = writeln!(s, "blocks_per_stage = {}", self.blocks_per_stage);
        let _ = writeln!(s, "pooling_count = {}", self.pooling_count);
        let _ = writeln!(s, "branches = {}", self.branches);
        let _ = writeln!(s, "fusion = {}", self.fusion);
        let _ = writeln!(s, "dilation_schedule = {}", join_list(&self.dilation_schedule));
        let _ = writeln!(s, "attention_points = {}", self.attention_points);
        let _ = writeln!(s, "decoder_kernel = {}", self.decoder_kernel);
        let _ = writeln!(s, "decoder_stride = {}", self.decoder_stride);
        let _ = writeln!(s, "stem_padding = {}", self.stem_padding);
        s
    }
}
