mod common;

use proptest::prelude::*;
use segattn_core::nn::{self, conv2d, conv_transpose2d, init_params, maxpool2d, Conv2dParams, ConvSpec, InitSpec};
use segattn_core::{Graph, Tensor};

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape, data.to_vec()).unwrap()
}

fn conv(x: &Tensor, w: &Tensor, b: Option<&Tensor>, spec: ConvSpec) -> Tensor {
    conv2d(
        x,
        &Conv2dParams {
            weight: w.clone(),
            bias: b.cloned(),
            spec,
        },
    )
    .unwrap()
}

#[test]
fn maxpool_examples() {
    let c = Tensor::full(&[1, 2, 4, 6], 1.5);
    let y = maxpool2d(&c).unwrap();
    assert_eq!(y.shape(), &[1, 2, 2, 3]);
    assert!(y.data().iter().all(|&v| v == 1.5));

    #[rustfmt::skip]
    let q = t(&[1, 1, 4, 4], &[
        5., 1., 0., 6.,
        2., 3., 4., 1.,
        0., 7., 2., 8.,
        1., 1., 3., 0.,
    ]);
    assert_eq!(maxpool2d(&q).unwrap().data(), &[5., 6., 7., 8.]);

    let odd = Tensor::from_fn(&[1, 1, 5, 5], |i| i as f64);
    let y = maxpool2d(&odd).unwrap();
    assert_eq!(y.shape(), &[1, 1, 2, 2]);
    assert_eq!(y.data(), &[6., 8., 16., 18.]);

    assert!(maxpool2d(&Tensor::zeros(&[1, 1, 1, 4])).is_err());
}

#[test]
fn maxpool_gradient_goes_to_first_argmax() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[1, 1, 2, 2], &[3., 3., 1., 3.]));
    let y = g.maxpool2d(x).unwrap();
    let l = g.sum(y);
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[1., 0., 0., 0.]);
}

#[test]
fn depthwise_delta_and_identity_is_identity() {
    let mut r = common::rng(5);
    let x = common::uniform(&mut r, &[2, 3, 4, 5], -1.0, 1.0);
    let mut dw = Tensor::zeros(&[3, 1, 3, 3]);
    for c in 0..3 {
        dw.set(&[c, 0, 1, 1], 1.0);
    }
    let mut pw = Tensor::zeros(&[3, 3, 1, 1]);
    for c in 0..3 {
        pw.set(&[c, c, 0, 0], 1.0);
    }
    let mut g = Graph::new();
    let (xv, dv, pv) = (g.constant(x.clone()), g.constant(dw), g.constant(pw));
    let y = g.depthwise_separable_conv(xv, dv, pv, None).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn depthwise_parameter_count() {
    let c = 8;
    let separable = c * 9 + c * c + c;
    let dense = c * c * 9 + c;
    assert_eq!((separable, dense), (144, 584));
}

#[test]
fn depthwise_equals_composed_dense_kernel() {
    let mut r = common::rng(9);
    let (c, co) = (2, 3);
    let x = common::uniform(&mut r, &[1, c, 4, 4], -1.0, 1.0);
    let dw = common::uniform(&mut r, &[c, 1, 3, 3], -1.0, 1.0);
    let pw = common::uniform(&mut r, &[co, c, 1, 1], -1.0, 1.0);
    let b = common::uniform(&mut r, &[co], -1.0, 1.0);
    // Dense kernel K[o][i][y][x] = pw[o][i] * dw[i][y][x].
    let dense = Tensor::from_fn(&[co, c, 3, 3], |k| {
        let (o, i, tap) = (k / (c * 9), (k / 9) % c, k % 9);
        pw.data()[o * c + i] * dw.data()[i * 9 + tap]
    });
    let want = common::conv_oracle(&x, &dense, Some(&b), ConvSpec::default().with_padding(1, 1));
    let mut g = Graph::new();
    let (xv, dv, pv, bv) = (g.constant(x), g.constant(dw), g.constant(pw), g.constant(b));
    let y = g.depthwise_separable_conv(xv, dv, pv, Some(bv)).unwrap();
    assert!(g.value(y).max_abs_diff(&want) < 1e-12);
}

#[test]
fn transposed_examples() {
    let y = conv_transpose2d(&t(&[1, 1, 1, 1], &[2.5]), &Tensor::full(&[1, 1, 4, 4], 1.0), None, (4, 4)).unwrap();
    assert_eq!(y.shape(), &[1, 1, 4, 4]);
    assert!(y.data().iter().all(|&v| v == 2.5));

    let mut r = common::rng(1);
    let x = common::uniform(&mut r, &[1, 1, 2, 2], -1.0, 1.0);
    let w = common::uniform(&mut r, &[1, 1, 4, 4], -1.0, 1.0);
    let b = t(&[1], &[0.25]);
    let y = conv_transpose2d(&x, &w, Some(&b), (4, 4)).unwrap();
    assert_eq!(y.shape(), &[1, 1, 8, 8]);
    assert!(y.max_abs_diff(&common::conv_transpose_oracle(&x, &w, Some(&b), (4, 4))) < 1e-12);
}

#[test]
fn init_bounds_and_determinism() {
    let a = init_params(InitSpec::new(7), &[4, 1, 3, 3], 0);
    assert!(a.data().iter().all(|v| v.abs() <= 1.0 / 3.0));
    assert_eq!(nn::fan_in(&[4, 1, 3, 3]), 9);
    assert_eq!(a, init_params(InitSpec::new(7), &[4, 1, 3, 3], 0));
    assert_ne!(a, init_params(InitSpec::new(8), &[4, 1, 3, 3], 0));
    assert_ne!(a, init_params(InitSpec::new(7), &[4, 1, 3, 3], 1));
}

#[test]
fn kernel_larger_than_input_is_rejected() {
    let x = Tensor::zeros(&[1, 1, 2, 2]);
    let w = Tensor::zeros(&[1, 1, 3, 3]);
    let p = Conv2dParams {
        weight: w,
        bias: None,
        spec: ConvSpec::default(),
    };
    let e = conv2d(&x, &p).unwrap_err().to_string();
    assert!(e.contains('3') && e.contains('2'), "{e}");
}

/// Number of window positions by sliding a `d(k-1)+1` window over the
/// padded extent with stride `s`.
fn enumerate_positions(n: usize, k: usize, s: usize, d: usize, pad: usize) -> usize {
    let padded = n + 2 * pad;
    let eff = d * (k - 1) + 1;
    let mut count = 0;
    let mut start = 0;
    while start + eff <= padded {
        count += 1;
        start += s;
    }
    count
}

#[test]
fn output_shape_grid() {
    for k in [1, 3, 4] {
        for s in [1, 2, 4] {
            for d in [1, 2] {
                for pad in [0, 1] {
                    for n in 1..12 {
                        let want = enumerate_positions(n, k, s, d, pad);
                        let got = ConvSpec::output_extent(n, k, s, d, pad);
                        if want == 0 {
                            assert!(got.is_err(), "n={n} k={k} s={s} d={d} pad={pad}");
                        } else {
                            assert_eq!(got, Ok(want), "n={n} k={k} s={s} d={d} pad={pad}");
                        }
                    }
                }
            }
        }
    }
}

fn spec_strategy() -> impl Strategy<Value = (usize, usize, usize, usize)> {
    // (k, stride, dilation, pad)
    (prop::sample::select(vec![1usize, 3, 4]), 1usize..3, 1usize..3, 0usize..2)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_matches_direct_oracle(
        (k, s, d, pad) in spec_strategy(), n in 1usize..3, ci in 1usize..4, co in 1usize..4,
        hw in 4usize..9, seed in any::<u64>()
    ) {
        prop_assume!(d * (k - 1) < hw + 2 * pad);
        let mut r = common::rng(seed);
        let x = common::uniform(&mut r, &[n, ci, hw, hw], -1.0, 1.0);
        let w = common::uniform(&mut r, &[co, ci, k, k], -1.0, 1.0);
        let b = common::uniform(&mut r, &[co], -1.0, 1.0);
        let spec = ConvSpec::default().with_stride(s, s).with_dilation(d, d).with_padding(pad, pad);
        let got = conv(&x, &w, Some(&b), spec);
        prop_assert!(got.max_abs_diff(&common::conv_oracle(&x, &w, Some(&b), spec)) < 1e-12);
    }

    #[test]
    fn conv_is_linear_without_bias(
        a in -2.0f64..2.0, b in -2.0f64..2.0, seed in any::<u64>(), d in 1usize..3
    ) {
        let mut r = common::rng(seed);
        let x = common::uniform(&mut r, &[1, 2, 6, 6], -1.0, 1.0);
        let y = common::uniform(&mut r, &[1, 2, 6, 6], -1.0, 1.0);
        let w = common::uniform(&mut r, &[3, 2, 3, 3], -1.0, 1.0);
        let spec = ConvSpec::default().with_dilation(d, d);
        let mix = Tensor::from_fn(x.shape(), |i| a * x.data()[i] + b * y.data()[i]);
        let lhs = conv(&mix, &w, None, spec);
        let (cx, cy) = (conv(&x, &w, None, spec), conv(&y, &w, None, spec));
        let rhs = Tensor::from_fn(lhs.shape(), |i| a * cx.data()[i] + b * cy.data()[i]);
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn transposed_conv_is_adjoint_of_strided_conv(
        s in 1usize..5, k in 1usize..5, h in 1usize..4, w in 1usize..4,
        ci in 1usize..4, co in 1usize..4, seed in any::<u64>()
    ) {
        let mut r = common::rng(seed);
        // conv: C_out=ci channels from co channels on the upsampled grid.
        let wt = common::uniform(&mut r, &[co, ci, k, k], -1.0, 1.0);
        let small = common::uniform(&mut r, &[1, co, h, w], -1.0, 1.0);
        let up = conv_transpose2d(&small, &wt, None, (s, s)).unwrap();
        let big = common::uniform(&mut r, up.shape(), -1.0, 1.0);
        // The same weight read as C_out=co x C_in=ci is the forward conv.
        let fwd = conv(&big, &wt, None, ConvSpec::default().with_stride(s, s));
        prop_assert_eq!(fwd.shape(), small.shape());
        let lhs = fwd.dot(&small).unwrap();
        let rhs = big.dot(&up).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn transposed_matches_scatter_add(
        s in 1usize..5, k in 1usize..5, h in 1usize..4, seed in any::<u64>()
    ) {
        let mut r = common::rng(seed);
        let x = common::uniform(&mut r, &[2, 2, h, h + 1], -1.0, 1.0);
        let w = common::uniform(&mut r, &[2, 3, k, k], -1.0, 1.0);
        let b = common::uniform(&mut r, &[3], -1.0, 1.0);
        let got = conv_transpose2d(&x, &w, Some(&b), (s, s)).unwrap();
        prop_assert_eq!(got.shape(), &[2, 3, (h - 1) * s + k, h * s + k]);
        prop_assert!(got.max_abs_diff(&common::conv_transpose_oracle(&x, &w, Some(&b), (s, s))) < 1e-12);
    }
}
