use super::{BinaryKind, Graph, Op, ReduceKind, Var};
use crate::error::{Error, Result};
use crate::nn::gemm;
use crate::tensor::{numel, Tensor};

impl Graph {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    /// Elementwise binary op. Shapes must match unless one operand has a
    /// single element, which is then broadcast.
    pub fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let out_shape = if av.shape() == bv.shape() || bv.numel() == 1 {
            av.shape().to_vec()
        } else if av.numel() == 1 {
            bv.shape().to_vec()
        } else {
            return Err(Error::ShapeMismatch {
                op: "elementwise",
                lhs: av.shape().into(),
                rhs: bv.shape().into(),
            });
        };
        let f = |x: f64, y: f64| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
        };
        let out = Tensor::from_fn(&out_shape, |i| f(super::pick(av, i), super::pick(bv, i)));
        Ok(self.push_op(out, Op::Binary(kind, a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|v| v * s);
        self.push_op(out, Op::Scale(a, s), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push_op(out, Op::Relu(a), &[a])
    }

    /// `m x k` by `k x n`, or batched `B x m x k` by `B x k x n`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (batch, m, k, n) = matmul_dims(av.shape(), bv.shape())?;
        let mut out = vec![0.0; batch * m * n];
        for bi in 0..batch {
            gemm(
                &av.data()[bi * m * k..(bi + 1) * m * k],
                &bv.data()[bi * k * n..(bi + 1) * k * n],
                m,
                k,
                n,
                &mut out[bi * m * n..(bi + 1) * m * n],
            );
        }
        let shape: Vec<usize> = if av.rank() == 3 { vec![batch, m, n] } else { vec![m, n] };
        let t = Tensor::new(&shape, out)?;
        Ok(self.push_op(t, Op::MatMul(a, b), &[a, b]))
    }

    /// Softmax along the last axis with per-row max subtraction.
    pub fn softmax_lastdim(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let last = *av.shape().last().ok_or_else(|| Error::BadRank {
            op: "softmax_lastdim",
            expected: "rank >= 1",
            got: av.shape().into(),
        })?;
        let mut out = av.data().to_vec();
        for row in out.chunks_mut(last.max(1)) {
            softmax_row(row);
        }
        let t = Tensor::new(av.shape(), out)?;
        Ok(self.push_op(t, Op::Softmax(a), &[a]))
    }

    /// Sum, mean or max over one axis (removed from the shape) or over all
    /// elements (result has shape `[1]`). Max routes its gradient to the
    /// first maximal element.
    pub fn reduce(&mut self, kind: ReduceKind, a: Var, axis: Option<usize>) -> Result<Var> {
        let av = self.value(a);
        let (outer, len, inner, out_shape) = reduce_geometry(av.shape(), axis)?;
        let mut out = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::new();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |r: usize| (o * len + r) * inner + i;
                match kind {
                    ReduceKind::Sum | ReduceKind::Mean => {
                        let mut s = 0.0;
                        for r in 0..len {
                            s += av.data()[idx(r)];
                        }
                        out.push(if kind == ReduceKind::Mean { s / len as f64 } else { s });
                    }
                    ReduceKind::Max => {
                        let mut best = idx(0);
                        for r in 1..len {
                            if av.data()[idx(r)] > av.data()[best] {
                                best = idx(r);
                            }
                        }
                        out.push(av.data()[best]);
                        argmax.push(best);
                    }
                }
            }
        }
        let t = Tensor::new(&out_shape, out)?;
        Ok(self.push_op(t, Op::Reduce { kind, input: a, axis, argmax }, &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.reduce(ReduceKind::Sum, a, None).expect("full sum cannot fail")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).reshape(shape)?;
        Ok(self.push_op(t, Op::Reshape(a), &[a]))
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let t = self.value(a).permute(perm)?;
        Ok(self.push_op(t, Op::Permute(a, perm.to_vec()), &[a]))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let r = self.value(a).rank();
        if r < 2 {
            return Err(Error::BadRank {
                op: "transpose",
                expected: "rank >= 2",
                got: self.value(a).shape().into(),
            });
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(a, &perm)
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self.value(inputs[0]).shape().to_vec();
        if axis >= first.len() {
            return Err(Error::AxisOutOfRange {
                axis,
                rank: first.len(),
            });
        }
        let mut out_shape = first.clone();
        out_shape[axis] = 0;
        for v in inputs {
            let s = self.value(*v).shape();
            let compatible = s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.as_slice().into(),
                    rhs: s.into(),
                });
            }
            out_shape[axis] += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let mut out = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for v in inputs {
                let t = self.value(*v);
                let chunk: usize = t.shape()[axis..].iter().product();
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let t = Tensor::new(&out_shape, out)?;
        Ok(self.push_op(
            t,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        ))
    }

    /// Extracts an `h x w` spatial window of an NCHW tensor whose top-left
    /// corner sits at input coordinate `(top, left)`. Negative offsets or
    /// windows reaching past the input read zeros, so this covers both
    /// cropping and zero padding.
    pub fn window(&mut self, a: Var, h: usize, w: usize, top: isize, left: isize) -> Result<Var> {
        let av = self.value(a);
        if av.rank() != 4 {
            return Err(Error::BadRank {
                op: "window",
                expected: "NxCxHxW input",
                got: av.shape().into(),
            });
        }
        let t = window(av, h, w, top, left);
        Ok(self.push_op(t, Op::Window { input: a, top, left }, &[a]))
    }

    /// Center-crops or center-pads (with zeros) the spatial extent to `h x w`.
    /// Crop offsets are `floor((in - out) / 2)`; padding puts
    /// `floor((out - in) / 2)` zeros before the data.
    pub fn center_fit(&mut self, a: Var, h: usize, w: usize) -> Result<Var> {
        let s = self.value(a).shape();
        if s.len() != 4 {
            return Err(Error::BadRank {
                op: "center_fit",
                expected: "NxCxHxW input",
                got: s.into(),
            });
        }
        if s[2] == h && s[3] == w {
            return Ok(a);
        }
        let top = center_offset(s[2], h);
        let left = center_offset(s[3], w);
        self.window(a, h, w, top, left)
    }

    /// Mean softmax cross-entropy over scored pixels.
    ///
    /// `logits` is `N x K x ...` and `targets` holds one class index per
    /// `(n, spatial...)` position in row-major order. Positions equal to
    /// `ignore_index` are skipped; if nothing is scored the loss is 0 with a
    /// zero gradient.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[u8], ignore_index: Option<u8>) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rank() < 2 {
            return Err(Error::BadRank {
                op: "softmax_cross_entropy",
                expected: "N x K x ... logits",
                got: lv.shape().into(),
            });
        }
        let (n, k) = (lv.shape()[0], lv.shape()[1]);
        let spatial: usize = lv.shape()[2..].iter().product();
        if targets.len() != n * spatial {
            return Err(Error::ShapeMismatch {
                op: "softmax_cross_entropy targets",
                lhs: lv.shape().into(),
                rhs: vec![targets.len()].as_slice().into(),
            });
        }
        let width = lv.shape().get(3).copied().unwrap_or(1).max(1);
        let data = lv.data();
        let mut dlogits = vec![0.0; data.len()];
        let mut total = 0.0;
        let mut count = 0usize;
        let mut z = vec![0.0; k];
        for ni in 0..n {
            for p in 0..spatial {
                let t = targets[ni * spatial + p];
                if Some(t) == ignore_index {
                    continue;
                }
                if usize::from(t) >= k {
                    return Err(Error::TargetOutOfRange {
                        value: usize::from(t),
                        n: ni,
                        y: p / width,
                        x: p % width,
                        classes: k,
                    });
                }
                for (j, zj) in z.iter_mut().enumerate() {
                    *zj = data[(ni * k + j) * spatial + p];
                }
                let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = z.iter().map(|v| (v - m).exp()).sum();
                let lse = m + s.ln();
                total += lse - z[usize::from(t)];
                count += 1;
                for (j, zj) in z.iter().enumerate() {
                    let p_j = (zj - lse).exp();
                    dlogits[(ni * k + j) * spatial + p] = p_j - if j == usize::from(t) { 1.0 } else { 0.0 };
                }
            }
        }
        let (loss, scale) = if count == 0 { (0.0, 0.0) } else { (total / count as f64, 1.0 / count as f64) };
        for d in &mut dlogits {
            *d *= scale;
        }
        let dlogits = Tensor::new(lv.shape(), dlogits)?;
        Ok(self.push_op(Tensor::scalar(loss), Op::SoftmaxCrossEntropy { logits, dlogits }, &[logits]))
    }
}

pub(crate) fn center_offset(input: usize, output: usize) -> isize {
    if input >= output {
        ((input - output) / 2) as isize
    } else {
        -(((output - input) / 2) as isize)
    }
}

pub(crate) fn softmax_row(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

pub(super) fn softmax_backward(y: &Tensor, gout: &Tensor) -> Tensor {
    let last = (*y.shape().last().unwrap_or(&1)).max(1);
    let mut g = vec![0.0; y.numel()];
    for ((yr, gr), out) in y.data().chunks(last).zip(gout.data().chunks(last)).zip(g.chunks_mut(last)) {
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((o, yv), gv) in out.iter_mut().zip(yr).zip(gr) {
            *o = yv * (gv - dot);
        }
    }
    Tensor::new(y.shape(), g).expect("softmax grad shape")
}

fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match (a, b) {
        ([m, k], [k2, n]) if k == k2 => Ok((1, *m, *k, *n)),
        ([ba, m, k], [bb, k2, n]) if k == k2 && ba == bb => Ok((*ba, *m, *k, *n)),
        _ => Err(Error::ShapeMismatch {
            op: "matmul",
            lhs: a.into(),
            rhs: b.into(),
        }),
    }
}

pub(super) fn matmul_backward(
    a: &Tensor,
    b: &Tensor,
    gout: &Tensor,
    need_a: bool,
    need_b: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let (batch, m, k, n) = matmul_dims(a.shape(), b.shape()).expect("matmul backward dims");
    let mut ga = need_a.then(|| vec![0.0; a.numel()]);
    let mut gb = need_b.then(|| vec![0.0; b.numel()]);
    for bi in 0..batch {
        let av = &a.data()[bi * m * k..(bi + 1) * m * k];
        let bv = &b.data()[bi * k * n..(bi + 1) * k * n];
        let go = &gout.data()[bi * m * n..(bi + 1) * m * n];
        if let Some(ga) = ga.as_mut() {
            // ga = gout · bᵀ
            crate::nn::gemm_nt(go, bv, m, n, k, &mut ga[bi * m * k..(bi + 1) * m * k]);
        }
        if let Some(gb) = gb.as_mut() {
            // gb = aᵀ · gout
            crate::nn::gemm_tn(av, go, k, m, n, &mut gb[bi * k * n..(bi + 1) * k * n]);
        }
    }
    (
        ga.map(|d| Tensor::new(a.shape(), d).expect("ga shape")),
        gb.map(|d| Tensor::new(b.shape(), d).expect("gb shape")),
    )
}

fn reduce_geometry(shape: &[usize], axis: Option<usize>) -> Result<(usize, usize, usize, Vec<usize>)> {
    match axis {
        None => Ok((1, numel(shape), 1, vec![1])),
        Some(ax) => {
            if ax >= shape.len() {
                return Err(Error::AxisOutOfRange {
                    axis: ax,
                    rank: shape.len(),
                });
            }
            let outer = shape[..ax].iter().product();
            let inner = shape[ax + 1..].iter().product();
            let mut out: Vec<usize> = shape.iter().enumerate().filter(|(i, _)| *i != ax).map(|(_, &d)| d).collect();
            if out.is_empty() {
                out.push(1);
            }
            Ok((outer, shape[ax], inner, out))
        }
    }
}

pub(super) fn reduce_backward(kind: ReduceKind, in_shape: &[usize], axis: Option<usize>, argmax: &[usize], gout: &Tensor) -> Tensor {
    let (outer, len, inner, _) = reduce_geometry(in_shape, axis).expect("reduce backward geometry");
    let mut g = Tensor::zeros(in_shape);
    let gd = g.data_mut();
    match kind {
        ReduceKind::Max => {
            for (&src, &go) in argmax.iter().zip(gout.data()) {
                gd[src] += go;
            }
        }
        ReduceKind::Sum | ReduceKind::Mean => {
            let f = if kind == ReduceKind::Mean { 1.0 / len as f64 } else { 1.0 };
            for o in 0..outer {
                for i in 0..inner {
                    let go = gout.data()[o * inner + i] * f;
                    for r in 0..len {
                        gd[(o * len + r) * inner + i] = go;
                    }
                }
            }
        }
    }
    g
}

pub(super) fn concat_backward(shapes: &[&[usize]], axis: usize, gout: &Tensor) -> Vec<Tensor> {
    let outer: usize = shapes[0][..axis].iter().product();
    let chunks: Vec<usize> = shapes.iter().map(|s| s[axis..].iter().product()).collect();
    let mut parts: Vec<Vec<f64>> = shapes.iter().map(|s| Vec::with_capacity(numel(s))).collect();
    let mut off = 0;
    for _ in 0..outer {
        for (part, &c) in parts.iter_mut().zip(&chunks) {
            part.extend_from_slice(&gout.data()[off..off + c]);
            off += c;
        }
    }
    parts
        .into_iter()
        .zip(shapes)
        .map(|(p, s)| Tensor::new(s, p).expect("concat grad shape"))
        .collect()
}

/// `out[n, c, y, x] = t[n, c, y + top, x + left]`, zero outside `t`.
pub(crate) fn window(t: &Tensor, h: usize, w: usize, top: isize, left: isize) -> Tensor {
    let s = t.shape();
    let (n, c, ih, iw) = (s[0], s[1], s[2] as isize, s[3] as isize);
    let mut out = vec![0.0; n * c * h * w];
    for plane in 0..n * c {
        let src = &t.data()[plane * (ih * iw) as usize..];
        let dst = &mut out[plane * h * w..(plane + 1) * h * w];
        for y in 0..h {
            let sy = y as isize + top;
            if sy < 0 || sy >= ih {
                continue;
            }
            for x in 0..w {
                let sx = x as isize + left;
                if sx >= 0 && sx < iw {
                    dst[y * w + x] = src[(sy * iw + sx) as usize];
                }
            }
        }
    }
    Tensor::new(&[n, c, h, w], out).expect("window shape")
}
