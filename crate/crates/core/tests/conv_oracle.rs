mod common;

use atrous_seg::ops::{conv2d, depthwise_conv2d, pointwise_conv2d, separable_conv2d, ConvGeometry, Padding};
use atrous_seg::{SegError, Shape, Tensor};
use common::*;
use proptest::prelude::*;

fn geometries() -> Vec<(usize, ConvGeometry)> {
    let mut out = Vec::new();
    for k in [1, 3, 5] {
        for rate in [1, 2, 4] {
            for stride in [1, 2] {
                for padding in [Padding::Same, Padding::Valid] {
                    out.push((k, ConvGeometry { stride, rate, padding }));
                }
            }
        }
    }
    out
}

const SIZES: [(usize, usize); 4] = [(9, 9), (7, 5), (4, 9), (1, 6)];

#[test]
fn conv2d_matches_direct_summation() {
    let mut checked = 0;
    for (i, (k, g)) in geometries().into_iter().enumerate() {
        for (j, &(h, w)) in SIZES.iter().enumerate() {
            let seed = (i * 10 + j) as u64;
            let x = random_tensor(Shape::new(2, 3, h, w), seed);
            let kernel = random_tensor(Shape::new(4, 3, k, k), seed + 1000);
            match direct_conv(&x, &kernel, &g) {
                Some(want) => {
                    let got = conv2d(&x, &kernel, &g).unwrap();
                    assert_eq!(got.shape(), want.shape(), "k{k} {g:?} {h}x{w}");
                    assert!(got.max_abs_diff(&want).unwrap() <= 1e-12, "k{k} {g:?} {h}x{w}");
                    checked += 1;
                }
                None => assert!(matches!(conv2d(&x, &kernel, &g), Err(SegError::EmptyOutput(_)))),
            }
        }
    }
    assert!(checked > 100);
}

#[test]
fn depthwise_matches_direct_summation() {
    for (i, (k, g)) in geometries().into_iter().enumerate() {
        for (j, &(h, w)) in SIZES.iter().enumerate() {
            let seed = (i * 10 + j) as u64;
            let x = random_tensor(Shape::new(2, 3, h, w), seed);
            let kernel = random_tensor(Shape::new(3, 1, k, k), seed + 500);
            match direct_depthwise(&x, &kernel, &g) {
                Some(want) => {
                    let got = depthwise_conv2d(&x, &kernel, &g).unwrap();
                    assert!(got.max_abs_diff(&want).unwrap() <= 1e-12, "k{k} {g:?} {h}x{w}");
                }
                None => assert!(matches!(depthwise_conv2d(&x, &kernel, &g), Err(SegError::EmptyOutput(_)))),
            }
        }
    }
}

#[test]
fn pointwise_and_separable_match_direct_summation() {
    let x = random_tensor(Shape::new(2, 3, 9, 7), 1);
    let pw = random_tensor(Shape::new(5, 3, 1, 1), 2);
    let want = direct_conv(&x, &pw, &ConvGeometry::same(1, 1)).unwrap();
    assert!(pointwise_conv2d(&x, &pw).unwrap().max_abs_diff(&want).unwrap() <= 1e-12);

    for (k, g) in geometries() {
        let dw = random_tensor(Shape::new(3, 1, k, k), 3);
        let Some(d) = direct_depthwise(&x, &dw, &g) else { continue };
        let want = direct_conv(&d, &pw, &ConvGeometry::same(1, 1)).unwrap();
        let got = separable_conv2d(&x, &dw, &pw, &g).unwrap();
        assert!(got.max_abs_diff(&want).unwrap() <= 1e-12, "k{k} {g:?}");
    }
}

#[test]
fn separable_is_exactly_depthwise_then_pointwise() {
    let x = random_tensor(Shape::new(1, 4, 8, 8), 11);
    let dw = random_tensor(Shape::new(4, 1, 3, 3), 12);
    let pw = random_tensor(Shape::new(6, 4, 1, 1), 13);
    let g = ConvGeometry::same(2, 2);
    let composed = pointwise_conv2d(&depthwise_conv2d(&x, &dw, &g).unwrap(), &pw).unwrap();
    assert_eq!(separable_conv2d(&x, &dw, &pw, &g).unwrap().data(), composed.data());
}

#[test]
fn depthwise_channels_are_isolated() {
    let x = random_tensor(Shape::new(1, 3, 7, 7), 21);
    let dw = random_tensor(Shape::new(3, 1, 3, 3), 22);
    let g = ConvGeometry::same(1, 2);
    let base = depthwise_conv2d(&x, &dw, &g).unwrap();
    let mut bumped = x.clone();
    for v in bumped.plane_mut(0, 1) {
        *v += 5.0;
    }
    let y = depthwise_conv2d(&bumped, &dw, &g).unwrap();
    assert_eq!(y.plane(0, 0), base.plane(0, 0));
    assert_eq!(y.plane(0, 2), base.plane(0, 2));
    assert_ne!(y.plane(0, 1), base.plane(0, 1));
}

#[test]
fn atrous_equals_dense_conv_with_dilated_kernel() {
    for rate in [2, 3, 4] {
        for stride in [1, 2] {
            for padding in [Padding::Same, Padding::Valid] {
                let x = random_tensor(Shape::new(1, 2, 9, 9), rate as u64);
                let w = random_tensor(Shape::new(3, 2, 3, 3), 40 + rate as u64);
                let atrous = ConvGeometry { stride, rate, padding };
                let dense = ConvGeometry { stride, rate: 1, padding };
                match conv2d(&x, &w, &atrous) {
                    Ok(a) => {
                        let b = conv2d(&x, &dilate_kernel(&w, rate), &dense).unwrap();
                        assert!(a.max_abs_diff(&b).unwrap() <= 1e-12);
                    }
                    Err(e) => assert!(matches!(e, SegError::EmptyOutput(_))),
                }
            }
        }
    }
}

#[test]
fn rate_one_is_ordinary_convolution() {
    let x = random_tensor(Shape::new(1, 1, 1, 4), 0);
    let w = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![1.0, 1.0, 0.0]).unwrap();
    let y = conv2d(&x, &w, &ConvGeometry::valid(1, 1)).unwrap();
    assert_eq!(y.shape().w, 2);
    for i in 0..2 {
        assert_eq!(y.data()[i], x.data()[i] + x.data()[i + 1]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_is_linear_in_input(seed in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0, rate in 1usize..4, stride in 1usize..3) {
        let g = ConvGeometry::same(stride, rate);
        let x1 = random_tensor(Shape::new(1, 2, 7, 6), seed);
        let x2 = random_tensor(Shape::new(1, 2, 7, 6), seed + 1);
        let w = random_tensor(Shape::new(3, 2, 3, 3), seed + 2);
        let mix = x1.scale(a).add(&x2.scale(b)).unwrap();
        let lhs = conv2d(&mix, &w, &g).unwrap();
        let rhs = conv2d(&x1, &w, &g).unwrap().scale(a).add(&conv2d(&x2, &w, &g).unwrap().scale(b)).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-12);
    }

    #[test]
    fn same_output_is_ceil_of_input_over_stride(h in 1usize..12, w in 1usize..12, k in prop::sample::select(vec![1usize, 3, 5]), rate in 1usize..5, stride in 1usize..4) {
        let x = random_tensor(Shape::new(1, 1, h, w), 0);
        let kernel = random_tensor(Shape::new(1, 1, k, k), 1);
        let y = conv2d(&x, &kernel, &ConvGeometry::same(stride, rate)).unwrap();
        prop_assert_eq!((y.shape().h, y.shape().w), (h.div_ceil(stride), w.div_ceil(stride)));
    }
}
