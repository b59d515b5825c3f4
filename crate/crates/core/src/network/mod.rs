//! The multi-scale attention segmentation network.
//!
//! Layout, in forward order:
//!
//! 1. stem: 3x3 conv + ReLU (`stem_padding`), `in_channels -> stage_channels[0]`
//! 2. branch 1, per stage `i`: optional 1x1 transition conv + ReLU when the
//!    width changes, `blocks_per_stage` residual blocks
//!    `relu(x + conv(relu(conv(x))))` of dilated 3x3 convs (padding equal to
//!    the stage dilation), then 2x2 max pooling if `i < pooling_count`
//! 3. branch 2 (if `branches = 2`): the same stage stack at half width, fed
//!    from the stem. Its first block in every stage uses concat-residual
//!    aggregation with the input of the matching branch-1 stage:
//!    `u = proj([x2, x1]); relu(u + φ(u))`
//! 4. attention1 (post-encoder) on the encoder output: branch 1, or
//!    branch 2 when two branches are not fused (branch 1 then stops one
//!    stage early, feeding branch 2 only)
//! 5. fusion: `concat` merges the encoder output with branch 2 (two
//!    branches) or with the stem pooled to encoder resolution (one
//!    branch), through a depthwise-separable 3x3 conv
//! 6. decoder: `decoder_stages()` transposed convs (`decoder_kernel`,
//!    `decoder_stride`) + ReLU, width `stage_channels[0]`
//! 7. center crop / zero pad back to the input size
//! 8. attention2 (post-fusion)
//! 9. 1x1 classifier to `num_classes` logits
//!
//! Parameters are created, and initialized from the seed, in exactly this
//! order; parameter `i` draws from ChaCha stream `i`. Biases and attention
//! scales start at zero.

mod checkpoint;
mod config;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use config::{AttentionPoints, Fusion, ModelConfig};

use crate::attention::{self, AggregationConfig, AggregationMode, MergeConv, Projection};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{init_params, ConvSpec, InitSpec};
use crate::tensor::Tensor;

/// A named learnable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

#[derive(Debug, Clone)]
struct ConvLayer {
    weight: usize,
    bias: usize,
    spec: ConvSpec,
}

#[derive(Debug, Clone)]
struct Block {
    conv1: ConvLayer,
    conv2: ConvLayer,
}

#[derive(Debug, Clone)]
enum StageEntry {
    Direct,
    Transition(ConvLayer),
    /// 1x1 projection of `[own input, other branch's stage input]`.
    Aggregate(ConvLayer),
}

#[derive(Debug, Clone)]
struct Stage {
    entry: StageEntry,
    blocks: Vec<Block>,
    pool: bool,
}

#[derive(Debug, Clone)]
struct Merge {
    depthwise: usize,
    pointwise: usize,
    bias: usize,
}

#[derive(Debug, Clone)]
enum FusionPlan {
    Encoder,
    Branch2Only,
    WithBranch2(Merge),
    WithStem(Merge),
}

#[derive(Debug, Clone)]
struct Upsample {
    weight: usize,
    bias: usize,
    stride: usize,
}

#[derive(Debug, Clone)]
struct Attn {
    alpha: usize,
    channels: usize,
}

/// Per-layer shape and cost, as produced by [`SegModel::trace`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCost {
    pub index: usize,
    pub name: String,
    /// `[N, C, H, W]` after the layer.
    pub out_shape: [usize; 4],
    pub flops: u64,
}

#[derive(Debug, Clone)]
pub struct SegModel {
    cfg: ModelConfig,
    params: Vec<Param>,
    stem: ConvLayer,
    branch1: Vec<Stage>,
    attention1: Option<Attn>,
    branch2: Vec<Stage>,
    fusion: FusionPlan,
    decoder: Vec<Upsample>,
    attention2: Option<Attn>,
    classifier: ConvLayer,
}

struct ParamBuilder {
    init: InitSpec,
    params: Vec<Param>,
}

impl ParamBuilder {
    fn weight(&mut self, name: String, shape: &[usize]) -> usize {
        let idx = self.params.len();
        let value = init_params(self.init, shape, idx as u64);
        self.params.push(Param { name, value });
        idx
    }

    fn zeros(&mut self, name: String, shape: &[usize]) -> usize {
        self.params.push(Param {
            name,
            value: Tensor::zeros(shape),
        });
        self.params.len() - 1
    }

    fn conv(&mut self, prefix: &str, c_in: usize, c_out: usize, k: usize, spec: ConvSpec) -> ConvLayer {
        let weight = self.weight(format!("{prefix}.weight"), &[c_out, c_in, k, k]);
        let bias = self.zeros(format!("{prefix}.bias"), &[c_out]);
        ConvLayer { weight, bias, spec }
    }

    fn merge(&mut self, prefix: &str, c_in: usize, c_out: usize) -> Merge {
        let depthwise = self.weight(format!("{prefix}.depthwise"), &[c_in, 1, 3, 3]);
        let pointwise = self.weight(format!("{prefix}.pointwise"), &[c_out, c_in, 1, 1]);
        let bias = self.zeros(format!("{prefix}.bias"), &[c_out]);
        Merge {
            depthwise,
            pointwise,
            bias,
        }
    }

    fn attention(&mut self, name: &str, channels: usize) -> Attn {
        let alpha = self.zeros(format!("{name}.alpha"), &[1]);
        Attn { alpha, channels }
    }

    #[allow(clippy::too_many_arguments)]
    fn stage(
        &mut self,
        prefix: &str,
        entry_in: Option<(usize, usize)>,
        c_prev: usize,
        c: usize,
        dilation: usize,
        blocks: usize,
        pool: bool,
    ) -> Stage {
        let entry = match entry_in {
            Some((own, other)) => {
                StageEntry::Aggregate(self.conv(&format!("{prefix}.proj"), own + other, c, 1, ConvSpec::default()))
            }
            None if c_prev != c => {
                StageEntry::Transition(self.conv(&format!("{prefix}.transition"), c_prev, c, 1, ConvSpec::default()))
            }
            None => StageEntry::Direct,
        };
        let spec = ConvSpec::default()
            .with_dilation(dilation, dilation)
            .with_padding(dilation, dilation);
        let blocks = (0..blocks)
            .map(|b| Block {
                conv1: self.conv(&format!("{prefix}.block{b}.conv1"), c, c, 3, spec),
                conv2: self.conv(&format!("{prefix}.block{b}.conv2"), c, c, 3, spec),
            })
            .collect();
        Stage { entry, blocks, pool }
    }
}

/// Builds the model described by `cfg`, initializing parameters from `init`.
pub fn build_model(cfg: &ModelConfig, init: InitSpec) -> Result<SegModel> {
    SegModel::build(cfg, init)
}

impl SegModel {
    pub fn build(cfg: &ModelConfig, init: InitSpec) -> Result<Self> {
        cfg.validate()?;
        let mut pb = ParamBuilder {
            init,
            params: Vec::new(),
        };
        let c0 = cfg.stage_channels[0];
        let stem = pb.conv(
            "stem",
            cfg.in_channels,
            c0,
            3,
            ConvSpec::default().with_padding(cfg.stem_padding, cfg.stem_padding),
        );

        // Without fusion the second branch alone feeds the decoder, so the
        // last first-branch stage would be dead and is not built.
        let branch2_only = cfg.branches == 2 && cfg.fusion == Fusion::None;
        let b1_stages = cfg.stage_channels.len() - usize::from(branch2_only);
        let mut branch1 = Vec::new();
        let mut c_prev = c0;
        for (i, (&c, &d)) in cfg.stage_channels.iter().zip(&cfg.dilation_schedule).take(b1_stages).enumerate() {
            let pool = i < cfg.pooling_count;
            branch1.push(pb.stage(&format!("b1.stage{i}"), None, c_prev, c, d, cfg.blocks_per_stage, pool));
            c_prev = c;
        }

        let mut branch2 = Vec::new();
        let widths2 = cfg.branch2_channels();
        if cfg.branches == 2 {
            let mut own = c0;
            let mut other = c0;
            for (i, (&c, &d)) in widths2.iter().zip(&cfg.dilation_schedule).enumerate() {
                let pool = i < cfg.pooling_count;
                branch2.push(pb.stage(
                    &format!("b2.stage{i}"),
                    Some((own, other)),
                    own,
                    c,
                    d,
                    cfg.blocks_per_stage,
                    pool,
                ));
                own = c;
                other = cfg.stage_channels[i];
            }
        }

        let enc_channels = if branch2_only {
            *widths2.last().unwrap()
        } else {
            c_prev
        };
        let attention1 = cfg
            .attention_points
            .post_encoder
            .then(|| pb.attention("attention1", enc_channels));
        let fusion = match (cfg.branches, cfg.fusion) {
            (1, Fusion::None) => FusionPlan::Encoder,
            (1, Fusion::Concat) => FusionPlan::WithStem(pb.merge("fusion", enc_channels + c0, enc_channels)),
            (_, Fusion::None) => FusionPlan::Branch2Only,
            (_, Fusion::Concat) => {
                let w2 = *widths2.last().unwrap();
                FusionPlan::WithBranch2(pb.merge("fusion", enc_channels + w2, enc_channels))
            }
        };

        let mut decoder = Vec::new();
        let mut c_dec = enc_channels;
        for i in 0..cfg.decoder_stages() {
            let k = cfg.decoder_kernel;
            let weight = pb.weight(format!("decoder{i}.weight"), &[c_dec, c0, k, k]);
            let bias = pb.zeros(format!("decoder{i}.bias"), &[c0]);
            decoder.push(Upsample {
                weight,
                bias,
                stride: cfg.decoder_stride,
            });
            c_dec = c0;
        }
        let attention2 = cfg.attention_points.post_fusion.then(|| pb.attention("attention2", c_dec));
        let classifier = pb.conv("classifier", c_dec, cfg.num_classes, 1, ConvSpec::default());

        Ok(Self {
            cfg: cfg.clone(),
            params: pb.params,
            stem,
            branch1,
            attention1,
            branch2,
            fusion,
            decoder,
            attention2,
            classifier,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    /// Total element count of all learnable tensors.
    pub fn count_params(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Layer names in execution order.
    pub fn layer_names(&self) -> Vec<String> {
        let mut shapes = ShapeExec::new(1, &self.params);
        // Large enough for every valid configuration; a failed trace would
        // still leave the names of the layers it reached.
        let _ = self.run(&mut shapes, (self.cfg.in_channels, 1 << 10, 1 << 10), 1 << 10, 1 << 10);
        shapes.layers.into_iter().map(|l| l.name).collect()
    }

    /// Shapes and FLOPs of every layer for an `N x C x H x W` input, or the
    /// first layer whose shape algebra fails.
    pub fn trace(&self, input_shape: [usize; 4]) -> Result<Vec<LayerCost>> {
        let [n, c, h, w] = input_shape;
        if c != self.cfg.in_channels {
            return Err(Error::ChannelMismatch {
                expected: self.cfg.in_channels,
                got: c,
            });
        }
        let mut e = ShapeExec::new(n, &self.params);
        self.run(&mut e, (c, h, w), h, w)?;
        Ok(e.layers)
    }

    /// Analytic FLOP count (multiply-accumulate = 2 FLOPs).
    pub fn count_flops(&self, input_shape: [usize; 4]) -> Result<u64> {
        Ok(self.trace(input_shape)?.iter().map(|l| l.flops).sum())
    }

    /// Checks that an `h x w` input passes the shape algebra; on failure
    /// reports the nearest accepted sizes.
    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        match self.trace([1, self.cfg.in_channels, h, w]) {
            Ok(_) => Ok(()),
            Err(Error::LayerShape { index, name, reason }) => {
                let axis_ok = |s: usize| self.trace([1, self.cfg.in_channels, s, s]).is_ok();
                let nearest = |s: usize| -> Option<usize> {
                    if axis_ok(s) {
                        return Some(s);
                    }
                    (1..=256).find_map(|d| {
                        if axis_ok(s + d) {
                            Some(s + d)
                        } else if s > d && axis_ok(s - d) {
                            Some(s - d)
                        } else {
                            None
                        }
                    })
                };
                let suggestions = match (nearest(h), nearest(w)) {
                    (Some(a), Some(b)) => format!("{a}x{b} (layer {index} `{name}`: {reason})"),
                    _ => format!("none found (layer {index} `{name}`: {reason})"),
                };
                Err(Error::IncompatibleInput { h, w, suggestions })
            }
            Err(e) => Err(e),
        }
    }

    /// Registers every parameter in `g`, as leaves when `trainable`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    g.leaf(p.value.clone())
                } else {
                    g.constant(p.value.clone())
                }
            })
            .collect()
    }

    /// Records the forward pass on `g` using bound parameters `params`.
    /// Returns `N x num_classes x H x W` logits.
    pub fn forward_graph(&self, g: &mut Graph, params: &[Var], x: Var) -> Result<Var> {
        let s = g.value(x).shape().to_vec();
        if s.len() != 4 {
            return Err(Error::BadRank {
                op: "forward",
                expected: "NxCxHxW input",
                got: s.as_slice().into(),
            });
        }
        if s[1] != self.cfg.in_channels {
            return Err(Error::ChannelMismatch {
                expected: self.cfg.in_channels,
                got: s[1],
            });
        }
        self.check_input(s[2], s[3])?;
        let mut e = GraphExec { g, params };
        self.run(&mut e, x, s[2], s[3])
    }

    /// Per-pixel class logits for an `N x C x H x W` batch.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let params = self.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let out = self.forward_graph(&mut g, &params, xv)?;
        Ok(g.take_value(out))
    }

    fn run<E: Exec>(&self, e: &mut E, x: E::V, h: usize, w: usize) -> Result<E::V> {
        let stem = e.conv("stem", x, &self.stem, true)?;

        // Input of every first-branch stage, then its final output.
        let mut stage_inputs = Vec::with_capacity(self.branch1.len() + 1);
        let mut cur = stem;
        for (i, st) in self.branch1.iter().enumerate() {
            stage_inputs.push(cur);
            cur = run_stage(e, &format!("b1.stage{i}"), st, cur, None)?;
        }
        stage_inputs.push(cur);

        let mut branch2_out = None;
        if !self.branch2.is_empty() {
            let mut cur2 = stem;
            for (i, st) in self.branch2.iter().enumerate() {
                cur2 = run_stage(e, &format!("b2.stage{i}"), st, cur2, Some(stage_inputs[i]))?;
            }
            branch2_out = Some(cur2);
        }

        let mut enc = match self.fusion {
            FusionPlan::Branch2Only => branch2_out.take().expect("branch 2 built"),
            _ => cur,
        };
        if let Some(a) = &self.attention1 {
            enc = e.attention("attention1", enc, a)?;
        }

        let fused = match &self.fusion {
            FusionPlan::Encoder | FusionPlan::Branch2Only => enc,
            FusionPlan::WithBranch2(m) => e.fuse("fusion", enc, branch2_out.expect("branch 2 built"), m)?,
            FusionPlan::WithStem(m) => {
                let mut skip = stem;
                for i in 0..self.cfg.pooling_count {
                    skip = e.pool(&format!("fusion.stem_pool{i}"), skip)?;
                }
                e.fuse("fusion", enc, skip, m)?
            }
        };

        let mut y = fused;
        for (i, u) in self.decoder.iter().enumerate() {
            y = e.upsample(&format!("decoder{i}"), y, u)?;
        }
        y = e.fit("align", y, h, w)?;
        if let Some(a) = &self.attention2 {
            y = e.attention("attention2", y, a)?;
        }
        e.conv("classifier", y, &self.classifier, false)
    }
}

fn run_stage<E: Exec>(e: &mut E, prefix: &str, st: &Stage, x: E::V, other: Option<E::V>) -> Result<E::V> {
    let mut cur = x;
    let mut aggregate = None;
    match &st.entry {
        StageEntry::Direct => {}
        StageEntry::Transition(t) => cur = e.conv(&format!("{prefix}.transition"), cur, t, true)?,
        StageEntry::Aggregate(p) => aggregate = Some((other.expect("aggregation input"), p)),
    }
    for (b, block) in st.blocks.iter().enumerate() {
        cur = e.block(&format!("{prefix}.block{b}"), cur, block, aggregate.take())?;
    }
    if st.pool {
        cur = e.pool(&format!("{prefix}.pool"), cur)?;
    }
    Ok(cur)
}

/// The operations the network is assembled from. Implemented once on the
/// autodiff graph and once as a shape/FLOP tracer, so both always follow
/// the same layer sequence.
trait Exec {
    type V: Copy;
    fn conv(&mut self, name: &str, x: Self::V, layer: &ConvLayer, relu: bool) -> Result<Self::V>;
    /// `relu(u + φ(u))`, where `u` is `x` or the projected concatenation of
    /// `x` with another branch's map.
    fn block(&mut self, name: &str, x: Self::V, block: &Block, aggregate: Option<(Self::V, &ConvLayer)>) -> Result<Self::V>;
    fn pool(&mut self, name: &str, x: Self::V) -> Result<Self::V>;
    fn attention(&mut self, name: &str, x: Self::V, a: &Attn) -> Result<Self::V>;
    fn fuse(&mut self, name: &str, a: Self::V, b: Self::V, m: &Merge) -> Result<Self::V>;
    fn upsample(&mut self, name: &str, x: Self::V, u: &Upsample) -> Result<Self::V>;
    fn fit(&mut self, name: &str, x: Self::V, h: usize, w: usize) -> Result<Self::V>;
}

struct GraphExec<'a> {
    g: &'a mut Graph,
    params: &'a [Var],
}

impl GraphExec<'_> {
    fn conv_layer(&mut self, x: Var, l: &ConvLayer) -> Result<Var> {
        self.g.conv2d(x, self.params[l.weight], Some(self.params[l.bias]), l.spec)
    }
}

impl Exec for GraphExec<'_> {
    type V = Var;

    fn conv(&mut self, _: &str, x: Var, layer: &ConvLayer, relu: bool) -> Result<Var> {
        let y = self.conv_layer(x, layer)?;
        Ok(if relu { self.g.relu(y) } else { y })
    }

    fn block(&mut self, _: &str, x: Var, block: &Block, aggregate: Option<(Var, &ConvLayer)>) -> Result<Var> {
        let (cfg, other) = match aggregate {
            None => (
                AggregationConfig {
                    mode: AggregationMode::Residual,
                    projection: None,
                },
                None,
            ),
            Some((other, proj)) => (
                AggregationConfig {
                    mode: AggregationMode::ConcatResidual,
                    projection: Some(Projection {
                        weight: self.params[proj.weight],
                        bias: Some(self.params[proj.bias]),
                    }),
                },
                Some(other),
            ),
        };
        let params = self.params;
        let phi = |g: &mut Graph, u: Var| -> Result<Var> {
            let c = &block.conv1;
            let h = g.conv2d(u, params[c.weight], Some(params[c.bias]), c.spec)?;
            let h = g.relu(h);
            let c = &block.conv2;
            g.conv2d(h, params[c.weight], Some(params[c.bias]), c.spec)
        };
        let sum = attention::substage_aggregate(self.g, &cfg, x, other, phi)?;
        Ok(self.g.relu(sum))
    }

    fn pool(&mut self, _: &str, x: Var) -> Result<Var> {
        self.g.maxpool2d(x)
    }

    fn attention(&mut self, _: &str, x: Var, a: &Attn) -> Result<Var> {
        attention::channel_attention(self.g, x, self.params[a.alpha], a.channels)
    }

    fn fuse(&mut self, _: &str, a: Var, b: Var, m: &Merge) -> Result<Var> {
        let merge = MergeConv {
            depthwise: self.params[m.depthwise],
            pointwise: self.params[m.pointwise],
            bias: Some(self.params[m.bias]),
        };
        attention::concat_fuse(self.g, a, b, &merge)
    }

    fn upsample(&mut self, _: &str, x: Var, u: &Upsample) -> Result<Var> {
        let y = self
            .g
            .conv_transpose2d(x, self.params[u.weight], Some(self.params[u.bias]), (u.stride, u.stride))?;
        Ok(self.g.relu(y))
    }

    fn fit(&mut self, _: &str, x: Var, h: usize, w: usize) -> Result<Var> {
        self.g.center_fit(x, h, w)
    }
}

/// Shape `(C, H, W)` tracer that also tallies FLOPs:
/// conv `2·C_out·(C_in/groups)·k_h·k_w·H'·W'` plus `C_out·H'·W'` for the
/// bias; transposed conv `2·C_in·C_out·k_h·k_w·H·W` plus the bias; channel
/// attention `4·C²·HW + 3·C²`; ReLU, pooling and residual adds one per
/// output element; crops, pads and concatenation are free.
struct ShapeExec<'a> {
    n: u64,
    layers: Vec<LayerCost>,
    params: &'a [Param],
}

type Chw = (usize, usize, usize);

impl<'a> ShapeExec<'a> {
    fn new(n: usize, params: &'a [Param]) -> Self {
        Self {
            n: n as u64,
            layers: Vec::new(),
            params,
        }
    }

    fn record(&mut self, name: &str, out: Chw, flops: u64) -> Chw {
        self.layers.push(LayerCost {
            index: self.layers.len(),
            name: name.to_string(),
            out_shape: [self.n as usize, out.0, out.1, out.2],
            flops: flops * self.n,
        });
        out
    }

    fn fail(&self, name: &str, reason: String) -> Error {
        Error::LayerShape {
            index: self.layers.len(),
            name: name.to_string(),
            reason,
        }
    }

    fn conv_shape(&self, name: &str, x: Chw, c_out: usize, k: usize, spec: &ConvSpec) -> Result<(Chw, u64)> {
        let (c, h, w) = x;
        let (oh, ow) = spec.output_hw(h, w, k, k).map_err(|e| self.fail(name, e.to_string()))?;
        let p = (oh * ow) as u64;
        let macs = 2 * (c_out * (c / spec.groups) * k * k) as u64 * p;
        Ok(((c_out, oh, ow), macs + c_out as u64 * p))
    }
}

impl Exec for ShapeExec<'_> {
    type V = Chw;

    fn conv(&mut self, name: &str, x: Chw, layer: &ConvLayer, relu: bool) -> Result<Chw> {
        let (c_out, k) = self.kernel_of(layer);
        let (out, mut flops) = self.conv_shape(name, x, c_out, k, &layer.spec)?;
        if relu {
            flops += (out.0 * out.1 * out.2) as u64;
        }
        Ok(self.record(name, out, flops))
    }

    fn block(&mut self, name: &str, x: Chw, block: &Block, aggregate: Option<(Chw, &ConvLayer)>) -> Result<Chw> {
        let mut flops = 0;
        let mut u = x;
        if let Some((other, proj)) = aggregate {
            let h = x.1.min(other.1);
            let w = x.2.min(other.2);
            let (c_out, _) = self.kernel_of(proj);
            let (o, f) = self.conv_shape(name, (x.0 + other.0, h, w), c_out, 1, &proj.spec)?;
            u = o;
            flops += f;
        }
        let (c1, k1) = self.kernel_of(&block.conv1);
        let (mid, f1) = self.conv_shape(name, u, c1, k1, &block.conv1.spec)?;
        let (c2, k2) = self.kernel_of(&block.conv2);
        let (out, f2) = self.conv_shape(name, mid, c2, k2, &block.conv2.spec)?;
        if out != u {
            return Err(self.fail(name, format!("residual branch changes shape {u:?} -> {out:?}")));
        }
        let elems = |s: Chw| (s.0 * s.1 * s.2) as u64;
        flops += f1 + elems(mid) + f2 + 2 * elems(out);
        Ok(self.record(name, out, flops))
    }

    fn pool(&mut self, name: &str, x: Chw) -> Result<Chw> {
        let (c, h, w) = x;
        if h < 2 || w < 2 {
            return Err(self.fail(name, format!("cannot 2x2-pool a {h}x{w} map")));
        }
        let out = (c, h / 2, w / 2);
        Ok(self.record(name, out, (c * (h / 2) * (w / 2)) as u64))
    }

    fn attention(&mut self, name: &str, x: Chw, _: &Attn) -> Result<Chw> {
        let c = x.0 as u64;
        let hw = (x.1 * x.2) as u64;
        Ok(self.record(name, x, 4 * c * c * hw + 3 * c * c))
    }

    fn fuse(&mut self, name: &str, a: Chw, b: Chw, m: &Merge) -> Result<Chw> {
        let h = a.1.min(b.1);
        let w = a.2.min(b.2);
        let c = a.0 + b.0;
        let c_out = self.pointwise_out(m);
        let p = (h * w) as u64;
        let flops = 2 * (c * 9) as u64 * p + 2 * (c_out * c) as u64 * p + c_out as u64 * p;
        Ok(self.record(name, (c_out, h, w), flops))
    }

    fn upsample(&mut self, name: &str, x: Chw, u: &Upsample) -> Result<Chw> {
        let (c_in, h, w) = x;
        let (c_out, k) = self.transposed_kernel_of(u);
        let oh = (h - 1) * u.stride + k;
        let ow = (w - 1) * u.stride + k;
        let out_p = (oh * ow) as u64;
        let flops = 2 * (c_in * c_out * k * k * h * w) as u64 + 2 * c_out as u64 * out_p;
        Ok(self.record(name, (c_out, oh, ow), flops))
    }

    fn fit(&mut self, name: &str, x: Chw, h: usize, w: usize) -> Result<Chw> {
        Ok(self.record(name, (x.0, h, w), 0))
    }
}

impl ShapeExec<'_> {
    /// `(C_out, k)` of a conv weight `C_out x C_in x k x k`.
    fn kernel_of(&self, l: &ConvLayer) -> (usize, usize) {
        let s = self.params[l.weight].value.shape();
        (s[0], s[2])
    }

    /// `(C_out, k)` of a transposed-conv weight `C_in x C_out x k x k`.
    fn transposed_kernel_of(&self, u: &Upsample) -> (usize, usize) {
        let s = self.params[u.weight].value.shape();
        (s[1], s[2])
    }

    fn pointwise_out(&self, m: &Merge) -> usize {
        self.params[m.pointwise].value.shape()[0]
    }
}

/// Finite-difference check of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradCheck {
    pub name: String,
    pub numel: usize,
    pub max_rel_err: f64,
    /// Largest analytic derivative magnitude; 0 means the check was vacuous.
    pub max_abs_grad: f64,
    pub pass: bool,
}

/// Checks the gradient of the mean cross-entropy of `model` on `(x, targets)`
/// with respect to every parameter tensor, using central differences.
pub fn check_gradients(
    model: &SegModel,
    x: &Tensor,
    targets: &[u8],
    step: f64,
    tol: f64,
) -> Result<Vec<ParamGradCheck>> {
    let inputs: Vec<Tensor> = model.params().iter().map(|p| p.value.clone()).collect();
    let loss = |g: &mut Graph, vars: &[Var]| -> Result<Var> {
        let xv = g.constant(x.clone());
        let logits = model.forward_graph(g, vars, xv)?;
        g.softmax_cross_entropy(logits, targets, Some(crate::data::IGNORE_INDEX))
    };
    let mut g = Graph::new();
    let vars = model.bind(&mut g, true);
    let out = loss(&mut g, &vars)?;
    let grads = g.backward(out)?;
    let report = crate::autodiff::grad_check(loss, &inputs, step, tol)?;
    Ok(model
        .params()
        .iter()
        .zip(&report.per_input)
        .zip(&vars)
        .map(|((p, &err), &v)| ParamGradCheck {
            name: p.name.clone(),
            numel: p.value.numel(),
            max_rel_err: err,
            max_abs_grad: grads
                .get(v)
                .map_or(0.0, |t| t.data().iter().fold(0.0, |m, d| f64::max(m, d.abs()))),
            pass: err < tol,
        })
        .collect())
}

impl SegModel {
    /// Replaces the zero-initialized tensors (biases, attention scales) with
    /// small positive seeded values so that every path carries gradient; used by
    /// gradient checks, where exact zeros would hide errors.
    pub fn jitter_zero_params(&mut self, seed: u64) {
        for (i, p) in self.params.iter_mut().enumerate() {
            if p.value.data().iter().all(|&v| v == 0.0) {
                let draw = init_params(InitSpec::new(seed ^ 0x9E37_79B9), p.value.shape(), i as u64);
                p.value = if p.name.ends_with(".alpha") {
                    draw.map(|v| 0.4 + 0.2 * v.abs())
                } else {
                    draw.map(|v| 0.05 + 0.1 * v.abs())
                };
            }
        }
    }
}
