//! Channel attention and the two feature-merging mechanisms: concat fusion
//! and sub-stage aggregation.
//!
//! Channel attention flattens a `C x H x W` map to `F` (`C x HW`), forms the
//! Gram matrix `G = F Fᵀ`, normalizes each row with a softmax
//! (`s_ji = exp(G_ji) / Σ_i exp(G_ji)`) and returns
//! `E_j = α Σ_i s_ji F_i + F_j`. With `α = 0` the module is the identity.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::ConvSpec;
use crate::tensor::Tensor;

/// Parameters of one channel-attention module.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelAttention {
    pub alpha: f64,
    pub expected_channels: usize,
}

impl ChannelAttention {
    /// Starts at `alpha = 0`, i.e. as the identity map.
    pub fn new(expected_channels: usize) -> Self {
        Self {
            alpha: 0.0,
            expected_channels,
        }
    }

    pub fn forward(&self, f: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let fv = g.constant(f.clone());
        let a = g.constant(Tensor::scalar(self.alpha));
        let out = channel_attention(&mut g, fv, a, self.expected_channels)?;
        Ok(g.take_value(out))
    }

    /// The row-stochastic `N x C x C` attention map for `f`.
    pub fn attention_map(&self, f: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let fv = g.constant(f.clone());
        let flat = flatten_channels(&mut g, fv, self.expected_channels)?;
        let s = attention_weights(&mut g, flat)?;
        Ok(g.take_value(s))
    }
}

fn flatten_channels(g: &mut Graph, f: Var, expected: usize) -> Result<Var> {
    let shape = g.value(f).shape().to_vec();
    if shape.len() != 4 {
        return Err(Error::BadRank {
            op: "channel_attention",
            expected: "NxCxHxW input",
            got: shape.as_slice().into(),
        });
    }
    if shape[1] != expected {
        return Err(Error::ChannelMismatch {
            expected,
            got: shape[1],
        });
    }
    g.reshape(f, &[shape[0], shape[1], shape[2] * shape[3]])
}

fn attention_weights(g: &mut Graph, flat: Var) -> Result<Var> {
    let ft = g.transpose(flat)?;
    let gram = g.matmul(flat, ft)?;
    g.softmax_lastdim(gram)
}

/// Differentiable channel attention; `alpha` is a one-element node.
pub fn channel_attention(g: &mut Graph, f: Var, alpha: Var, expected_channels: usize) -> Result<Var> {
    let shape = g.value(f).shape().to_vec();
    let flat = flatten_channels(g, f, expected_channels)?;
    let s = attention_weights(g, flat)?;
    let mixed = g.matmul(s, flat)?;
    let scaled = g.mul(mixed, alpha)?;
    let e = g.add(scaled, flat)?;
    g.reshape(e, &shape)
}

/// Depthwise-separable 3x3 merge parameters as bound graph nodes.
#[derive(Debug, Clone, Copy)]
pub struct MergeConv {
    /// `C_in x 1 x 3 x 3`
    pub depthwise: Var,
    /// `C_out x C_in x 1 x 1`
    pub pointwise: Var,
    pub bias: Option<Var>,
}

/// Center-crops each spatial axis of `a` and `b` to the smaller extent.
pub fn align_spatial(g: &mut Graph, a: Var, b: Var) -> Result<(Var, Var)> {
    let (sa, sb) = (g.value(a).shape().to_vec(), g.value(b).shape().to_vec());
    if sa.len() != 4 || sb.len() != 4 || sa[0] != sb[0] {
        return Err(Error::ShapeMismatch {
            op: "align_spatial",
            lhs: sa.as_slice().into(),
            rhs: sb.as_slice().into(),
        });
    }
    let h = sa[2].min(sb[2]);
    let w = sa[3].min(sb[3]);
    Ok((g.center_fit(a, h, w)?, g.center_fit(b, h, w)?))
}

/// Channel concatenation of two maps (the larger center-cropped to the
/// smaller) followed by a depthwise-separable 3x3 merge with padding 1.
pub fn concat_fuse(g: &mut Graph, a: Var, b: Var, merge: &MergeConv) -> Result<Var> {
    let (a, b) = align_spatial(g, a, b)?;
    let cat = g.concat(&[a, b], 1)?;
    g.depthwise_separable_conv(cat, merge.depthwise, merge.pointwise, merge.bias)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregationMode {
    /// `x + φ(x)`
    Residual,
    /// `u + φ(u)` with `u = proj([x_prev_stage, x_prev_backbone])`
    ConcatResidual,
}

/// 1x1 projection restoring the channel count after concatenation.
#[derive(Debug, Clone, Copy)]
pub struct Projection {
    /// `C_n x (C_n + C_{n-1}) x 1 x 1`
    pub weight: Var,
    pub bias: Option<Var>,
}

#[derive(Debug, Clone, Copy)]
pub struct AggregationConfig {
    pub mode: AggregationMode,
    pub projection: Option<Projection>,
}

/// Sub-stage aggregation around a stage transform `phi`.
pub fn substage_aggregate<F>(
    g: &mut Graph,
    cfg: &AggregationConfig,
    x_prev_stage: Var,
    x_prev_backbone: Option<Var>,
    phi: F,
) -> Result<Var>
where
    F: FnOnce(&mut Graph, Var) -> Result<Var>,
{
    let u = match cfg.mode {
        AggregationMode::Residual => x_prev_stage,
        AggregationMode::ConcatResidual => {
            let other = x_prev_backbone.ok_or(Error::MissingBackbone)?;
            let proj = cfg
                .projection
                .ok_or_else(|| Error::InvalidConfig("concat-residual aggregation needs a projection".into()))?;
            let (a, b) = align_spatial(g, x_prev_stage, other)?;
            let cat = g.concat(&[a, b], 1)?;
            let want = g.value(cat).shape()[1];
            let have = g.value(proj.weight).shape().get(1).copied().unwrap_or(0);
            if want != have {
                return Err(Error::ChannelMismatch {
                    expected: have,
                    got: want,
                });
            }
            g.conv2d(cat, proj.weight, proj.bias, ConvSpec::default())?
        }
    };
    let transformed = phi(g, u)?;
    g.add(u, transformed)
}
