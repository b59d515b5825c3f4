//! Independent reference implementations and helpers shared by the
//! integration tests and the acceptance run.

#![allow(dead_code)]

pub mod ledgers;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use segattn_core::attention::{self, AggregationConfig, AggregationMode, MergeConv, Projection};
use segattn_core::autodiff::{grad_check, ReduceKind};
use segattn_core::network::{check_gradients, ModelConfig, SegModel};
use segattn_core::nn::{ConvSpec, InitSpec};
use segattn_core::{Graph, Result, Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Uniform in `±[margin, hi]`, so nothing sits on a ReLU kink.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], margin: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(margin..hi);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// A random permutation of `0.05 * k` shifted to be centered; all values
/// differ by at least 0.05, so max-type ops have no ties near `x +- h`.
pub fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|k| 0.05 * k as f64 - 0.025 * n as f64).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        v.swap(i, j);
    }
    Tensor::new(shape, v).unwrap()
}

pub fn ix4(s: &[usize], n: usize, c: usize, y: usize, x: usize) -> usize {
    ((n * s[1] + c) * s[2] + y) * s[3] + x
}

/// Direct nested-loop cross-correlation with stride, dilation, zero
/// padding and groups.
pub fn conv_oracle(x: &Tensor, w: &Tensor, b: Option<&Tensor>, spec: ConvSpec) -> Tensor {
    let (xs, ws) = (x.shape(), w.shape());
    let (n, c_in, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (c_out, cg, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    let (sh, sw) = spec.stride;
    let (dh, dw) = spec.dilation;
    let (ph, pw) = spec.padding;
    let out_per_group = c_out / spec.groups;
    let oh = (h + 2 * ph - dh * (kh - 1) - 1) / sh + 1;
    let ow = (wd + 2 * pw - dw * (kw - 1) - 1) / sw + 1;
    let mut out = Tensor::zeros(&[n, c_out, oh, ow]);
    for ni in 0..n {
        for co in 0..c_out {
            let group = co / out_per_group;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b.data()[co]);
                    for ci in 0..cg {
                        let c = group * cg + ci;
                        assert!(c < c_in);
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * sh + ky * dh) as isize - ph as isize;
                                let ixx = (ox * sw + kx * dw) as isize - pw as isize;
                                if iy < 0 || ixx < 0 || iy >= h as isize || ixx >= wd as isize {
                                    continue;
                                }
                                acc += w.data()[ix4(ws, co, ci, ky, kx)]
                                    * x.data()[ix4(xs, ni, c, iy as usize, ixx as usize)];
                            }
                        }
                    }
                    out.data_mut()[ix4(&[n, c_out, oh, ow], ni, co, oy, ox)] = acc;
                }
            }
        }
    }
    out
}

/// Scatter-add transposed convolution, weight `C_in x C_out x k x k`.
pub fn conv_transpose_oracle(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: (usize, usize)) -> Tensor {
    let (xs, ws) = (x.shape(), w.shape());
    let (n, c_in, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (c_out, kh, kw) = (ws[1], ws[2], ws[3]);
    let oh = (h - 1) * stride.0 + kh;
    let ow = (wd - 1) * stride.1 + kw;
    let os = [n, c_out, oh, ow];
    let mut out = Tensor::zeros(&os);
    for ni in 0..n {
        for co in 0..c_out {
            if let Some(b) = b {
                for y in 0..oh {
                    for xx in 0..ow {
                        out.data_mut()[ix4(&os, ni, co, y, xx)] += b.data()[co];
                    }
                }
            }
        }
        for ci in 0..c_in {
            for iy in 0..h {
                for ixx in 0..wd {
                    let v = x.data()[ix4(xs, ni, ci, iy, ixx)];
                    for co in 0..c_out {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let o = ix4(&os, ni, co, iy * stride.0 + ky, ixx * stride.1 + kx);
                                out.data_mut()[o] += v * w.data()[ix4(ws, ci, co, ky, kx)];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Per-class counts by set intersection over pixel positions:
/// `(tp, fp, fn)` per class, ignoring pixels whose truth is `ignore`.
pub fn brute_force_counts(gt: &[u8], pred: &[u8], k: usize, ignore: Option<u8>) -> Vec<(u64, u64, u64)> {
    (0..k)
        .map(|class| {
            let c = class as u8;
            let scored = |i: &usize| Some(gt[*i]) != ignore;
            let in_gt: Vec<usize> = (0..gt.len()).filter(scored).filter(|&i| gt[i] == c).collect();
            let in_pred: Vec<usize> = (0..gt.len()).filter(scored).filter(|&i| pred[i] == c).collect();
            let tp = in_gt.iter().filter(|i| in_pred.contains(i)).count() as u64;
            let fp = in_pred.iter().filter(|i| !in_gt.contains(i)).count() as u64;
            let fneg = in_gt.iter().filter(|i| !in_pred.contains(i)).count() as u64;
            (tp, fp, fneg)
        })
        .collect()
}

/// Scalar channel attention for one `C x P` item: `E_j = α Σ_i s_ji F_i + F_j`.
pub fn attention_oracle(f: &[Vec<f64>], alpha: f64) -> Vec<Vec<f64>> {
    let c = f.len();
    let gram: Vec<Vec<f64>> = (0..c)
        .map(|j| (0..c).map(|i| f[j].iter().zip(&f[i]).map(|(a, b)| a * b).sum()).collect())
        .collect();
    (0..c)
        .map(|j| {
            let m = gram[j].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = gram[j].iter().map(|g| (g - m).exp()).collect();
            let z: f64 = e.iter().sum();
            (0..f[j].len())
                .map(|p| alpha * (0..c).map(|i| e[i] / z * f[i][p]).sum::<f64>() + f[j][p])
                .collect()
        })
        .collect()
}

/// `Σ y ⊙ r` for a fixed random `r`, so every output element carries a
/// distinct weight in the checked scalar.
fn weighted(g: &mut Graph, y: Var, r: &Tensor) -> Result<Var> {
    let rv = g.constant(r.clone());
    let p = g.mul(y, rv)?;
    Ok(g.sum(p))
}

/// One finite-difference check of the gradient suite.
pub struct OpCheck {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl OpCheck {
    pub fn pass(&self) -> bool {
        self.max_rel_err < self.tol
    }
}

pub const OP_TOL: f64 = 1e-4;
pub const END_TO_END_TOL: f64 = 1e-3;
const STEP: f64 = 1e-3;

fn check<F>(name: &'static str, inputs: &[Tensor], out_shape: &[usize], rng: &mut ChaCha8Rng, f: F) -> OpCheck
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let r = uniform(rng, out_shape, -1.0, 1.0);
    let report = grad_check(
        |g, v| {
            let y = f(g, v)?;
            weighted(g, y, &r)
        },
        inputs,
        STEP,
        OP_TOL,
    )
    .unwrap_or_else(|e| panic!("{name}: {e}"));
    OpCheck {
        name,
        max_rel_err: report.max_rel_err,
        tol: OP_TOL,
    }
}

fn dim(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

/// Every differentiable op against central differences, on random shapes
/// no larger than 4x4x8x8, inputs kept 1e-2 away from ReLU/max kinks.
pub fn gradient_suite(seed: u64) -> Vec<OpCheck> {
    let mut r = rng(seed);
    let mut out = Vec::new();

    let shape = [dim(&mut r, 1, 4), dim(&mut r, 1, 4), dim(&mut r, 1, 8), dim(&mut r, 1, 8)];
    let a = uniform(&mut r, &shape, -1.0, 1.0);
    let b = uniform(&mut r, &shape, -1.0, 1.0);
    let ab = [a.clone(), b.clone()];
    out.push(check("add", &ab, &shape, &mut r, |g, v| g.add(v[0], v[1])));
    out.push(check("sub", &ab, &shape, &mut r, |g, v| g.sub(v[0], v[1])));
    out.push(check("mul", &ab, &shape, &mut r, |g, v| g.mul(v[0], v[1])));
    out.push(check("scale", &ab[..1], &shape, &mut r, |g, v| Ok(g.scale(v[0], -1.75))));
    let k = away_from_zero(&mut r, &shape, 1e-2, 1.0);
    out.push(check("relu", &[k], &shape, &mut r, |g, v| Ok(g.relu(v[0]))));

    let (m, kk, n) = (dim(&mut r, 1, 8), dim(&mut r, 1, 8), dim(&mut r, 1, 8));
    let ma = uniform(&mut r, &[m, kk], -1.0, 1.0);
    let mb = uniform(&mut r, &[kk, n], -1.0, 1.0);
    out.push(check("matmul", &[ma, mb], &[m, n], &mut r, |g, v| g.matmul(v[0], v[1])));

    let rows = [dim(&mut r, 1, 4), dim(&mut r, 2, 8)];
    let logits = uniform(&mut r, &rows, -2.0, 2.0);
    out.push(check("softmax", &[logits], &rows, &mut r, |g, v| g.softmax_lastdim(v[0])));

    let red_shape = [dim(&mut r, 1, 4), dim(&mut r, 2, 8)];
    let red = uniform(&mut r, &red_shape, -1.0, 1.0);
    out.push(check("sum", std::slice::from_ref(&red), &[1], &mut r, |g, v| Ok(g.sum(v[0]))));
    out.push(check("mean_axis1", std::slice::from_ref(&red), &[red_shape[0]], &mut r, |g, v| {
        g.reduce(ReduceKind::Mean, v[0], Some(1))
    }));
    out.push(check("sum_axis0", &[red], &[red_shape[1]], &mut r, |g, v| {
        g.reduce(ReduceKind::Sum, v[0], Some(0))
    }));
    let mx = distinct(&mut r, &red_shape);
    out.push(check("max_axis1", &[mx], &[red_shape[0]], &mut r, |g, v| {
        g.reduce(ReduceKind::Max, v[0], Some(1))
    }));

    let flat = [shape[0] * shape[1], shape[2] * shape[3]];
    out.push(check("reshape", &ab[..1], &flat, &mut r, move |g, v| g.reshape(v[0], &flat)));
    let perm = [shape[2], shape[0], shape[3], shape[1]];
    out.push(check("permute", &ab[..1], &perm, &mut r, |g, v| g.permute(v[0], &[2, 0, 3, 1])));
    let mut cat = shape;
    cat[1] *= 2;
    out.push(check("concat", &ab, &cat, &mut r, |g, v| g.concat(&[v[0], v[1]], 1)));
    let fit = [shape[0], shape[1], shape[2] + 2, (shape[3] / 2).max(1)];
    out.push(check("center_fit", &ab[..1], &fit, &mut r, move |g, v| g.center_fit(v[0], fit[2], fit[3])));

    // conv2d with dilation, stride and padding on shapes <= 2x3x6x6.
    let (cn, ci, co) = (dim(&mut r, 1, 2), dim(&mut r, 1, 3), dim(&mut r, 1, 3));
    let hw = dim(&mut r, 5, 6);
    let x = uniform(&mut r, &[cn, ci, hw, hw], -1.0, 1.0);
    let w = uniform(&mut r, &[co, ci, 3, 3], -0.5, 0.5);
    let bias = uniform(&mut r, &[co], -0.5, 0.5);
    for (name, spec) in [
        ("conv2d", ConvSpec::default()),
        ("conv2d_dilated", ConvSpec::default().with_dilation(2, 2).with_padding(2, 2)),
        ("conv2d_strided", ConvSpec::default().with_stride(2, 2).with_padding(1, 1)),
    ] {
        let (oh, ow) = spec.output_hw(hw, hw, 3, 3).unwrap();
        out.push(check(name, &[x.clone(), w.clone(), bias.clone()], &[cn, co, oh, ow], &mut r, move |g, v| {
            g.conv2d(v[0], v[1], Some(v[2]), spec)
        }));
    }

    let (th, tw) = (dim(&mut r, 1, 3), dim(&mut r, 1, 3));
    let tx = uniform(&mut r, &[cn, ci, th, tw], -1.0, 1.0);
    let tw_ = uniform(&mut r, &[ci, co, 4, 4], -0.5, 0.5);
    let tb = uniform(&mut r, &[co], -0.5, 0.5);
    out.push(check("conv_transpose2d", &[tx, tw_, tb], &[cn, co, th * 4, tw * 4], &mut r, |g, v| {
        g.conv_transpose2d(v[0], v[1], Some(v[2]), (4, 4))
    }));
    let px = distinct(&mut r, &[cn, ci, hw, hw]);
    out.push(check("maxpool2d", &[px], &[cn, ci, hw / 2, hw / 2], &mut r, |g, v| g.maxpool2d(v[0])));

    let dw = uniform(&mut r, &[ci, 1, 3, 3], -0.5, 0.5);
    let pw = uniform(&mut r, &[co, ci, 1, 1], -0.5, 0.5);
    out.push(check("depthwise_separable", &[x.clone(), dw, pw, bias.clone()], &[cn, co, hw, hw], &mut r, |g, v| {
        g.depthwise_separable_conv(v[0], v[1], v[2], Some(v[3]))
    }));

    // Channel attention, C <= 4, H·W <= 6.
    let ac = dim(&mut r, 1, 4);
    let (ah, aw) = [(1, 6), (2, 3), (3, 2), (2, 2)][dim(&mut r, 0, 3)];
    let af = uniform(&mut r, &[cn, ac, ah, aw], -1.0, 1.0);
    let alpha = Tensor::from_vec(vec![r.random_range(0.2..1.0)]);
    out.push(check("channel_attention", &[af, alpha], &[cn, ac, ah, aw], &mut r, move |g, v| {
        attention::channel_attention(g, v[0], v[1], ac)
    }));

    // Cross-entropy with an ignored pixel.
    let (ln, lk, lh, lw) = (dim(&mut r, 1, 2), dim(&mut r, 2, 4), dim(&mut r, 1, 4), dim(&mut r, 2, 4));
    let lg = uniform(&mut r, &[ln, lk, lh, lw], -2.0, 2.0);
    let mut targets: Vec<u8> = (0..ln * lh * lw).map(|_| r.random_range(0..lk) as u8).collect();
    targets[0] = 255;
    let report = grad_check(
        |g, v| g.softmax_cross_entropy(v[0], &targets, Some(255)),
        &[lg],
        STEP,
        OP_TOL,
    )
    .unwrap();
    out.push(OpCheck {
        name: "softmax_cross_entropy",
        max_rel_err: report.max_rel_err,
        tol: OP_TOL,
    });

    // Concat-residual aggregation with a linear stage transform, and fusion.
    let (c1, c2) = (dim(&mut r, 1, 3), dim(&mut r, 1, 3));
    let xa = uniform(&mut r, &[1, c1, 5, 5], -1.0, 1.0);
    let xb = uniform(&mut r, &[1, c2, 4, 4], -1.0, 1.0);
    let proj = uniform(&mut r, &[c1, c1 + c2, 1, 1], -0.5, 0.5);
    let phi_w = uniform(&mut r, &[c1, c1, 3, 3], -0.5, 0.5);
    out.push(check("substage_aggregate", &[xa.clone(), xb.clone(), proj, phi_w], &[1, c1, 4, 4], &mut r, |g, v| {
        let cfg = AggregationConfig {
            mode: AggregationMode::ConcatResidual,
            projection: Some(Projection {
                weight: v[2],
                bias: None,
            }),
        };
        let w = v[3];
        attention::substage_aggregate(g, &cfg, v[0], Some(v[1]), move |g, u| {
            g.conv2d(u, w, None, ConvSpec::default().with_padding(1, 1))
        })
    }));
    let fdw = uniform(&mut r, &[c1 + c2, 1, 3, 3], -0.5, 0.5);
    let fpw = uniform(&mut r, &[c1, c1 + c2, 1, 1], -0.5, 0.5);
    out.push(check("concat_fuse", &[xa, xb, fdw, fpw], &[1, c1, 4, 4], &mut r, |g, v| {
        let merge = MergeConv {
            depthwise: v[2],
            pointwise: v[3],
            bias: None,
        };
        attention::concat_fuse(g, v[0], v[1], &merge)
    }));

    out.push(end_to_end(seed));
    out
}

/// Loss gradient w.r.t. every parameter of the minimal model.
pub fn end_to_end(seed: u64) -> OpCheck {
    let cfg = ModelConfig::minimal();
    let mut model = SegModel::build(&cfg, InitSpec::new(seed)).unwrap();
    model.jitter_zero_params(seed);
    let mut r = rng(seed ^ 0xE2E);
    let x = uniform(&mut r, &[2, cfg.in_channels, 8, 8], -0.5, 0.5);
    let targets: Vec<u8> = (0..2 * 64).map(|_| r.random_range(0..cfg.num_classes) as u8).collect();
    let rows = check_gradients(&model, &x, &targets, 1e-5, END_TO_END_TOL).unwrap();
    OpCheck {
        name: "minimal_model",
        max_rel_err: rows.iter().map(|p| p.max_rel_err).fold(0.0, f64::max),
        tol: END_TO_END_TOL,
    }
}
