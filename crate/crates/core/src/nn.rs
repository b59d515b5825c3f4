//! Spatial kernels: dilated/grouped convolution via im2col, transposed
//! convolution, 2x2 max pooling and parameter initialization.
//!
//! The functions here work on raw NCHW buffers. Their differentiable
//! counterparts are the `Graph::conv2d`, `Graph::conv_transpose2d`,
//! `Graph::maxpool2d` and `Graph::depthwise_separable_conv` methods.
//!
//! Batch items are processed in parallel with rayon. Each item's partial
//! weight gradient is reduced in batch order, so results are bitwise
//! independent of the thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Stride, dilation, padding and grouping of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

impl Default for ConvSpec {
    fn default() -> Self {
        Self {
            stride: (1, 1),
            dilation: (1, 1),
            padding: (0, 0),
            groups: 1,
        }
    }
}

impl ConvSpec {
    pub fn with_padding(mut self, ph: usize, pw: usize) -> Self {
        self.padding = (ph, pw);
        self
    }

    pub fn with_dilation(mut self, dh: usize, dw: usize) -> Self {
        self.dilation = (dh, dw);
        self
    }

    pub fn with_stride(mut self, sh: usize, sw: usize) -> Self {
        self.stride = (sh, sw);
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    /// Output extent along one axis, or the effective kernel extent and the
    /// padded input extent when the kernel does not fit.
    pub fn output_extent(
        input: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
        pad: usize,
    ) -> std::result::Result<usize, (usize, usize)> {
        let eff = dilation * (kernel - 1) + 1;
        let padded = input + 2 * pad;
        if kernel == 0 || eff > padded {
            return Err((eff, padded));
        }
        Ok((padded - eff) / stride + 1)
    }

    pub fn output_hw(&self, h: usize, w: usize, kh: usize, kw: usize) -> Result<(usize, usize)> {
        let oh = Self::output_extent(h, kh, self.stride.0, self.dilation.0, self.padding.0);
        let ow = Self::output_extent(w, kw, self.stride.1, self.dilation.1, self.padding.1);
        match (oh, ow) {
            (Ok(oh), Ok(ow)) => Ok((oh, ow)),
            (a, b) => {
                let (kh_eff, ph) = a.err().unwrap_or((self.dilation.0 * (kh - 1) + 1, h + 2 * self.padding.0));
                let (kw_eff, pw) = b.err().unwrap_or((self.dilation.1 * (kw - 1) + 1, w + 2 * self.padding.1));
                Err(Error::KernelTooLarge {
                    op: "conv2d",
                    kernel_h: kh_eff,
                    kernel_w: kw_eff,
                    padded_h: ph,
                    padded_w: pw,
                })
            }
        }
    }
}

/// Value-level convolution parameters: weight `C_out x C_in/groups x k_h x k_w`
/// and optional bias of length `C_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dParams {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub spec: ConvSpec,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvDims {
    pub fn for_conv(x: &[usize], weight: &[usize], spec: &ConvSpec) -> Result<Self> {
        if x.len() != 4 {
            return Err(Error::BadRank {
                op: "conv2d",
                expected: "NxCxHxW input",
                got: x.into(),
            });
        }
        if weight.len() != 4 {
            return Err(Error::BadRank {
                op: "conv2d",
                expected: "C_out x C_in/groups x k_h x k_w weight",
                got: weight.into(),
            });
        }
        let (n, c_in, h, w) = (x[0], x[1], x[2], x[3]);
        let (c_out, cg, kh, kw) = (weight[0], weight[1], weight[2], weight[3]);
        let g = spec.groups;
        if g == 0 || c_in % g != 0 || c_out % g != 0 || cg != c_in / g {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: x.into(),
                rhs: weight.into(),
            });
        }
        let (oh, ow) = spec.output_hw(h, w, kh, kw)?;
        Ok(Self {
            n,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            oh,
            ow,
        })
    }
}

/// Unfolds channels `c0..c0+cg` of one image into a `(cg*kh*kw) x (oh*ow)`
/// column matrix. Row index is `(c*kh + i)*kw + j`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn im2col(
    img: &[f64],
    h: usize,
    w: usize,
    c0: usize,
    cg: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    spec: &ConvSpec,
    cols: &mut [f64],
) {
    let (sh, sw) = spec.stride;
    let (dh, dw) = spec.dilation;
    let (ph, pw) = spec.padding;
    let p = oh * ow;
    for c in 0..cg {
        let plane = &img[(c0 + c) * h * w..(c0 + c + 1) * h * w];
        for i in 0..kh {
            for j in 0..kw {
                let row = &mut cols[((c * kh + i) * kw + j) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * sh + i * dh) as isize - ph as isize;
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * sw + j * dw) as isize - pw as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds a column matrix back into channels
/// `c0..c0+cg` of an image.
#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im(
    cols: &[f64],
    h: usize,
    w: usize,
    c0: usize,
    cg: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    spec: &ConvSpec,
    img: &mut [f64],
) {
    let (sh, sw) = spec.stride;
    let (dh, dw) = spec.dilation;
    let (ph, pw) = spec.padding;
    let p = oh * ow;
    for c in 0..cg {
        let plane = &mut img[(c0 + c) * h * w..(c0 + c + 1) * h * w];
        for i in 0..kh {
            for j in 0..kw {
                let row = &cols[((c * kh + i) * kw + j) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * sh + i * dh) as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * sw + j * dw) as isize - pw as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += row[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `out (m x n) = a (m x k) · b (k x n)`, accumulating each element over k
/// in ascending order starting from zero.
pub(crate) fn gemm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    out[..m * n].fill(0.0);
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = a[i * k + kk];
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out (m x n) = a (m x k) · bᵀ` where `b` is `n x k`.
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * n + j] = acc;
        }
    }
}

/// `out (m x n) = aᵀ · b` where `a` is `k x m` and `b` is `k x n`.
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    out[..m * n].fill(0.0);
    for kk in 0..k {
        let brow = &b[kk * n..(kk + 1) * n];
        for i in 0..m {
            let av = a[kk * m + i];
            if av == 0.0 {
                continue;
            }
            let row = &mut out[i * n..(i + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

pub(crate) fn conv2d_forward(
    x: &[f64],
    weight: &[f64],
    bias: Option<&[f64]>,
    d: &ConvDims,
    spec: &ConvSpec,
) -> Vec<f64> {
    let g = spec.groups;
    let cg = d.c_in / g;
    let og = d.c_out / g;
    let p = d.oh * d.ow;
    let rows = cg * d.kh * d.kw;
    let mut out = vec![0.0; d.n * d.c_out * p];
    out.par_chunks_mut(d.c_out * p)
        .enumerate()
        .for_each(|(n, out_n)| {
            let img = &x[n * d.c_in * d.h * d.w..(n + 1) * d.c_in * d.h * d.w];
            let mut cols = vec![0.0; rows * p];
            for gi in 0..g {
                im2col(img, d.h, d.w, gi * cg, cg, d.kh, d.kw, d.oh, d.ow, spec, &mut cols);
                let wg = &weight[gi * og * rows..(gi + 1) * og * rows];
                gemm(wg, &cols, og, rows, p, &mut out_n[gi * og * p..(gi + 1) * og * p]);
            }
            if let Some(b) = bias {
                for (o, chunk) in out_n.chunks_mut(p).enumerate() {
                    for v in chunk {
                        *v += b[o];
                    }
                }
            }
        });
    out
}

pub(crate) struct ConvGrads {
    pub dx: Option<Vec<f64>>,
    pub dw: Option<Vec<f64>>,
    pub db: Option<Vec<f64>>,
}

pub(crate) fn conv2d_backward(
    x: &[f64],
    weight: &[f64],
    dout: &[f64],
    d: &ConvDims,
    spec: &ConvSpec,
    need: (bool, bool, bool),
) -> ConvGrads {
    let g = spec.groups;
    let cg = d.c_in / g;
    let og = d.c_out / g;
    let p = d.oh * d.ow;
    let rows = cg * d.kh * d.kw;
    let img_len = d.c_in * d.h * d.w;
    let (need_x, need_w, need_b) = need;

    let per_item: Vec<(Vec<f64>, Vec<f64>)> = (0..d.n)
        .into_par_iter()
        .map(|n| {
            let img = &x[n * img_len..(n + 1) * img_len];
            let dout_n = &dout[n * d.c_out * p..(n + 1) * d.c_out * p];
            let mut dx_n = if need_x { vec![0.0; img_len] } else { Vec::new() };
            let mut dw_n = if need_w { vec![0.0; weight.len()] } else { Vec::new() };
            let mut cols = vec![0.0; rows * p];
            for gi in 0..g {
                let dout_g = &dout_n[gi * og * p..(gi + 1) * og * p];
                if need_w {
                    im2col(img, d.h, d.w, gi * cg, cg, d.kh, d.kw, d.oh, d.ow, spec, &mut cols);
                    gemm_nt(dout_g, &cols, og, p, rows, &mut dw_n[gi * og * rows..(gi + 1) * og * rows]);
                }
                if need_x {
                    let wg = &weight[gi * og * rows..(gi + 1) * og * rows];
                    gemm_tn(wg, dout_g, rows, og, p, &mut cols);
                    col2im(&cols, d.h, d.w, gi * cg, cg, d.kh, d.kw, d.oh, d.ow, spec, &mut dx_n);
                }
            }
            (dx_n, dw_n)
        })
        .collect();

    let dx = need_x.then(|| {
        let mut dx = Vec::with_capacity(d.n * img_len);
        for (dx_n, _) in &per_item {
            dx.extend_from_slice(dx_n);
        }
        dx
    });
    let dw = need_w.then(|| {
        let mut dw = vec![0.0; weight.len()];
        for (_, dw_n) in &per_item {
            for (a, b) in dw.iter_mut().zip(dw_n) {
                *a += b;
            }
        }
        dw
    });
    let db = need_b.then(|| channel_sums(dout, d.n, d.c_out, p));
    ConvGrads { dx, dw, db }
}

fn channel_sums(dout: &[f64], n: usize, c: usize, p: usize) -> Vec<f64> {
    let mut db = vec![0.0; c];
    for ni in 0..n {
        for (ci, acc) in db.iter_mut().enumerate() {
            *acc += dout[(ni * c + ci) * p..(ni * c + ci + 1) * p].iter().sum::<f64>();
        }
    }
    db
}

/// Geometry of a transposed convolution: input `n x c_in x h x w`, weight
/// `c_in x c_out x kh x kw`, output `n x c_out x oh x ow` with
/// `oh = (h-1)*stride + kh`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct TransposedDims {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
    pub stride: (usize, usize),
}

impl TransposedDims {
    pub fn new(x: &[usize], weight: &[usize], stride: (usize, usize)) -> Result<Self> {
        if x.len() != 4 || weight.len() != 4 {
            return Err(Error::BadRank {
                op: "transposed_conv2d",
                expected: "NxCxHxW input and C_in x C_out x k_h x k_w weight",
                got: x.into(),
            });
        }
        if x[1] != weight[0] {
            return Err(Error::ShapeMismatch {
                op: "transposed_conv2d",
                lhs: x.into(),
                rhs: weight.into(),
            });
        }
        if stride.0 == 0 || stride.1 == 0 || weight[2] == 0 || weight[3] == 0 || x[2] == 0 || x[3] == 0 {
            return Err(Error::KernelTooLarge {
                op: "transposed_conv2d",
                kernel_h: weight[2],
                kernel_w: weight[3],
                padded_h: x[2],
                padded_w: x[3],
            });
        }
        Ok(Self {
            n: x[0],
            c_in: x[1],
            h: x[2],
            w: x[3],
            c_out: weight[1],
            kh: weight[2],
            kw: weight[3],
            oh: (x[2] - 1) * stride.0 + weight[2],
            ow: (x[3] - 1) * stride.1 + weight[3],
            stride,
        })
    }

    /// The forward convolution this operator is the adjoint of.
    fn conv_spec(&self) -> ConvSpec {
        ConvSpec::default().with_stride(self.stride.0, self.stride.1)
    }
}

pub(crate) fn conv_transpose2d_forward(
    x: &[f64],
    weight: &[f64],
    bias: Option<&[f64]>,
    d: &TransposedDims,
) -> Vec<f64> {
    let spec = d.conv_spec();
    let p = d.h * d.w;
    let rows = d.c_out * d.kh * d.kw;
    let out_len = d.c_out * d.oh * d.ow;
    let mut out = vec![0.0; d.n * out_len];
    out.par_chunks_mut(out_len).enumerate().for_each(|(n, out_n)| {
        let xn = &x[n * d.c_in * p..(n + 1) * d.c_in * p];
        let mut cols = vec![0.0; rows * p];
        gemm_tn(weight, xn, rows, d.c_in, p, &mut cols);
        col2im(&cols, d.oh, d.ow, 0, d.c_out, d.kh, d.kw, d.h, d.w, &spec, out_n);
        if let Some(b) = bias {
            for (o, chunk) in out_n.chunks_mut(d.oh * d.ow).enumerate() {
                for v in chunk {
                    *v += b[o];
                }
            }
        }
    });
    out
}

pub(crate) fn conv_transpose2d_backward(
    x: &[f64],
    weight: &[f64],
    dout: &[f64],
    d: &TransposedDims,
    need: (bool, bool, bool),
) -> ConvGrads {
    let spec = d.conv_spec();
    let p = d.h * d.w;
    let rows = d.c_out * d.kh * d.kw;
    let out_len = d.c_out * d.oh * d.ow;
    let (need_x, need_w, need_b) = need;
    let per_item: Vec<(Vec<f64>, Vec<f64>)> = (0..d.n)
        .into_par_iter()
        .map(|n| {
            let xn = &x[n * d.c_in * p..(n + 1) * d.c_in * p];
            let dout_n = &dout[n * out_len..(n + 1) * out_len];
            let mut cols = vec![0.0; rows * p];
            im2col(dout_n, d.oh, d.ow, 0, d.c_out, d.kh, d.kw, d.h, d.w, &spec, &mut cols);
            let mut dx_n = Vec::new();
            if need_x {
                dx_n = vec![0.0; d.c_in * p];
                gemm(weight, &cols, d.c_in, rows, p, &mut dx_n);
            }
            let mut dw_n = Vec::new();
            if need_w {
                dw_n = vec![0.0; weight.len()];
                gemm_nt(xn, &cols, d.c_in, p, rows, &mut dw_n);
            }
            (dx_n, dw_n)
        })
        .collect();
    let dx = need_x.then(|| per_item.iter().flat_map(|(dx, _)| dx.iter().copied()).collect());
    let dw = need_w.then(|| {
        let mut dw = vec![0.0; weight.len()];
        for (_, dw_n) in &per_item {
            for (a, b) in dw.iter_mut().zip(dw_n) {
                *a += b;
            }
        }
        dw
    });
    let db = need_b.then(|| channel_sums(dout, d.n, d.c_out, d.oh * d.ow));
    ConvGrads { dx, dw, db }
}

/// 2x2/stride-2 max pooling. Returns the pooled values and, per output
/// element, the flat input index of the first maximum in window scan order.
pub(crate) fn maxpool2d_forward(x: &[f64], shape: &[usize]) -> Result<(Vec<f64>, Vec<usize>, [usize; 4])> {
    if shape.len() != 4 {
        return Err(Error::BadRank {
            op: "maxpool2d",
            expected: "NxCxHxW input",
            got: shape.into(),
        });
    }
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    if h < 2 || w < 2 {
        return Err(Error::PoolTooSmall { h, w });
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    Ok((out, arg, [n, c, oh, ow]))
}

/// Parameter initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// Uniform on `[-b, b]` with `b = sqrt(1 / fan_in)`.
    FanInUniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InitSpec {
    pub scheme: InitScheme,
    pub seed: u64,
}

impl InitSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            scheme: InitScheme::FanInUniform,
            seed,
        }
    }
}

/// Fan-in of a weight tensor: the product of all extents after the first.
pub fn fan_in(shape: &[usize]) -> usize {
    if shape.len() <= 1 {
        shape.first().copied().unwrap_or(1).max(1)
    } else {
        shape[1..].iter().product::<usize>().max(1)
    }
}

/// Draws a parameter tensor. `call_index` selects an independent ChaCha
/// stream, so the result depends only on `(seed, shape, call_index)`.
pub fn init_params(spec: InitSpec, shape: &[usize], call_index: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(call_index);
    let bound = match spec.scheme {
        InitScheme::FanInUniform => (1.0 / fan_in(shape) as f64).sqrt(),
    };
    Tensor::from_fn(shape, |_| {
        let u: f64 = rng.random();
        (2.0 * u - 1.0) * bound
    })
}

/// Evaluates a convolution outside any graph.
pub fn conv2d(x: &Tensor, p: &Conv2dParams) -> Result<Tensor> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let w = g.constant(p.weight.clone());
    let b = p.bias.as_ref().map(|b| g.constant(b.clone()));
    let out = g.conv2d(xv, w, b, p.spec)?;
    Ok(g.take_value(out))
}

/// Evaluates a transposed convolution with the given stride outside any graph.
pub fn conv_transpose2d(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, stride: (usize, usize)) -> Result<Tensor> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let w = g.constant(weight.clone());
    let b = bias.map(|b| g.constant(b.clone()));
    let out = g.conv_transpose2d(xv, w, b, stride)?;
    Ok(g.take_value(out))
}

/// Evaluates 2x2/stride-2 max pooling outside any graph.
pub fn maxpool2d(x: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let out = g.maxpool2d(xv)?;
    Ok(g.take_value(out))
}

impl Graph {
    /// Cross-correlation with optional bias. `weight` is
    /// `C_out x C_in/groups x k_h x k_w`.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let dims = ConvDims::for_conv(self.value(x).shape(), self.value(weight).shape(), &spec)?;
        if let Some(b) = bias {
            if self.value(b).shape() != [dims.c_out] {
                return Err(Error::ShapeMismatch {
                    op: "conv2d bias",
                    lhs: vec![dims.c_out].as_slice().into(),
                    rhs: self.value(b).shape().into(),
                });
            }
        }
        let out = conv2d_forward(
            self.value(x).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            &dims,
            &spec,
        );
        let t = Tensor::new(&[dims.n, dims.c_out, dims.oh, dims.ow], out)?;
        Ok(self.push_conv(t, x, weight, bias, spec))
    }

    /// Transposed convolution (no padding, no dilation). `weight` is
    /// `C_in x C_out x k_h x k_w`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: (usize, usize),
    ) -> Result<Var> {
        let dims = TransposedDims::new(self.value(x).shape(), self.value(weight).shape(), stride)?;
        if let Some(b) = bias {
            if self.value(b).shape() != [dims.c_out] {
                return Err(Error::ShapeMismatch {
                    op: "transposed_conv2d bias",
                    lhs: vec![dims.c_out].as_slice().into(),
                    rhs: self.value(b).shape().into(),
                });
            }
        }
        let out = conv_transpose2d_forward(
            self.value(x).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            &dims,
        );
        let t = Tensor::new(&[dims.n, dims.c_out, dims.oh, dims.ow], out)?;
        Ok(self.push_conv_transpose(t, x, weight, bias, stride))
    }

    pub fn maxpool2d(&mut self, x: Var) -> Result<Var> {
        let (out, arg, shape) = maxpool2d_forward(self.value(x).data(), self.value(x).shape())?;
        let t = Tensor::new(&shape, out)?;
        Ok(self.push_maxpool(t, x, arg))
    }

    /// Per-channel 3x3 convolution (padding 1, no bias) followed by a 1x1
    /// pointwise convolution with bias. `depthwise` is `C x 1 x 3 x 3`,
    /// `pointwise` is `C_out x C x 1 x 1`.
    pub fn depthwise_separable_conv(
        &mut self,
        x: Var,
        depthwise: Var,
        pointwise: Var,
        pointwise_bias: Option<Var>,
    ) -> Result<Var> {
        let c = self.value(x).shape().get(1).copied().unwrap_or(0);
        let dw_spec = ConvSpec::default().with_padding(1, 1).with_groups(c.max(1));
        let mid = self.conv2d(x, depthwise, None, dw_spec)?;
        self.conv2d(mid, pointwise, pointwise_bias, ConvSpec::default())
    }
}
