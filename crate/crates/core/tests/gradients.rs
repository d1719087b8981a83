mod common;

use atrous_seg::arch::{ArchSpec, LowLevelTaps};
use atrous_seg::graph::exec::Mode;
use atrous_seg::ops::{
    batch_norm_backward, batch_norm_forward, conv2d, conv2d_backward, depthwise_conv2d, depthwise_conv2d_backward,
    global_avg_pool, global_avg_pool_backward, relu_backward, softmax_cross_entropy, ConvGeometry, Padding,
};
use atrous_seg::{Shape, Tensor, VOID};
use common::*;

const OP_TOL: f64 = 1e-5;
const MODEL_TOL: f64 = 1e-4;

fn weighted_sum(y: &Tensor, r: &Tensor) -> f64 {
    y.dot(r).unwrap()
}

#[test]
fn conv2d_gradients() {
    for (stride, rate, padding) in [(1, 1, Padding::Same), (2, 2, Padding::Same), (1, 3, Padding::Valid), (2, 1, Padding::Valid)] {
        let g = ConvGeometry { stride, rate, padding };
        let x = random_tensor(Shape::new(2, 3, 8, 7), 1);
        let w = random_tensor(Shape::new(2, 3, 3, 3), 2);
        let y = conv2d(&x, &w, &g).unwrap();
        let r = random_tensor(y.shape(), 3);
        let (dx, dw) = conv2d_backward(&x, &w, &g, &r).unwrap();
        let ex = check_gradient(&x, &dx, None, |x| weighted_sum(&conv2d(x, &w, &g).unwrap(), &r));
        let ew = check_gradient(&w, &dw, None, |w| weighted_sum(&conv2d(&x, w, &g).unwrap(), &r));
        assert!(ex <= OP_TOL && ew <= OP_TOL, "{g:?}: dx {ex:e} dw {ew:e}");
    }
}

#[test]
fn depthwise_gradients() {
    for (stride, rate) in [(1, 1), (1, 2), (2, 2), (2, 4)] {
        let g = ConvGeometry::same(stride, rate);
        let x = random_tensor(Shape::new(2, 3, 9, 8), 4);
        let w = random_tensor(Shape::new(3, 1, 3, 3), 5);
        let y = depthwise_conv2d(&x, &w, &g).unwrap();
        let r = random_tensor(y.shape(), 6);
        let (dx, dw) = depthwise_conv2d_backward(&x, &w, &g, &r).unwrap();
        let ex = check_gradient(&x, &dx, None, |x| weighted_sum(&depthwise_conv2d(x, &w, &g).unwrap(), &r));
        let ew = check_gradient(&w, &dw, None, |w| weighted_sum(&depthwise_conv2d(&x, w, &g).unwrap(), &r));
        assert!(ex <= OP_TOL && ew <= OP_TOL, "{g:?}: dx {ex:e} dw {ew:e}");
    }
}

#[test]
fn convolutions_on_maps_smaller_than_the_kernel() {
    for (h, w) in [(1, 1), (2, 2), (1, 3), (4, 4), (2, 5)] {
        for (stride, rate) in [(1, 2), (1, 4), (2, 4), (1, 12), (2, 1)] {
            let g = ConvGeometry::same(stride, rate);
            let x = random_tensor(Shape::new(2, 3, h, w), 30);
            let w3 = random_tensor(Shape::new(3, 1, 3, 3), 31);
            let y = depthwise_conv2d(&x, &w3, &g).unwrap();
            let r = random_tensor(y.shape(), 32);
            let (dx, dw) = depthwise_conv2d_backward(&x, &w3, &g, &r).unwrap();
            let ex = check_gradient(&x, &dx, None, |x| weighted_sum(&depthwise_conv2d(x, &w3, &g).unwrap(), &r));
            let ew = check_gradient(&w3, &dw, None, |w| weighted_sum(&depthwise_conv2d(&x, w, &g).unwrap(), &r));
            assert!(ex <= OP_TOL && ew <= OP_TOL, "depthwise {h}x{w} {g:?}: dx {ex:e} dw {ew:e}");

            let k = random_tensor(Shape::new(2, 3, 3, 3), 33);
            let y = conv2d(&x, &k, &g).unwrap();
            let r = random_tensor(y.shape(), 34);
            let (dx, dk) = conv2d_backward(&x, &k, &g, &r).unwrap();
            let ex = check_gradient(&x, &dx, None, |x| weighted_sum(&conv2d(x, &k, &g).unwrap(), &r));
            let ek = check_gradient(&k, &dk, None, |k| weighted_sum(&conv2d(&x, k, &g).unwrap(), &r));
            assert!(ex <= OP_TOL && ek <= OP_TOL, "conv {h}x{w} {g:?}: dx {ex:e} dk {ek:e}");
        }
    }
}

#[test]
fn batch_norm_gradients() {
    let x = random_tensor(Shape::new(3, 2, 4, 5), 7);
    let gamma = vec![1.5, -0.5];
    let beta = vec![0.2, 0.1];
    let (rm, rv) = (vec![0.0; 2], vec![1.0; 2]);
    for batch_stats in [true, false] {
        let f = |x: &Tensor, gamma: &[f64], beta: &[f64]| batch_norm_forward(x, gamma, beta, &rm, &rv, 1e-5, batch_stats).unwrap();
        let (y, cache) = f(&x, &gamma, &beta);
        let r = random_tensor(y.shape(), 8);
        let (dx, dg, db) = batch_norm_backward(&cache, &gamma, &r).unwrap();
        let ex = check_gradient(&x, &dx, None, |x| weighted_sum(&f(x, &gamma, &beta).0, &r));
        assert!(ex <= OP_TOL, "dx {ex:e}");
        let gt = Tensor::from_vec(Shape::new(1, 1, 1, 2), gamma.clone()).unwrap();
        let dgt = Tensor::from_vec(Shape::new(1, 1, 1, 2), dg).unwrap();
        let eg = check_gradient(&gt, &dgt, None, |g| weighted_sum(&f(&x, g.data(), &beta).0, &r));
        let bt = Tensor::from_vec(Shape::new(1, 1, 1, 2), beta.clone()).unwrap();
        let dbt = Tensor::from_vec(Shape::new(1, 1, 1, 2), db).unwrap();
        let eb = check_gradient(&bt, &dbt, None, |b| weighted_sum(&f(&x, &gamma, b.data()).0, &r));
        assert!(eg <= OP_TOL && eb <= OP_TOL, "dgamma {eg:e} dbeta {eb:e}");
    }
}

#[test]
fn relu_pool_and_resize_gradients() {
    let x = random_tensor(Shape::new(2, 2, 5, 6), 9);
    let r = random_tensor(x.shape(), 10);
    let y = x.relu();
    let dx = relu_backward(&y, &r).unwrap();
    assert!(check_gradient(&x, &dx, None, |x| weighted_sum(&x.relu(), &r)) <= OP_TOL);

    let rp = random_tensor(Shape::new(2, 2, 1, 1), 11);
    let dx = global_avg_pool_backward(&rp, 5, 6).unwrap();
    assert!(check_gradient(&x, &dx, None, |x| weighted_sum(&global_avg_pool(x), &rp)) <= OP_TOL);

    for (oh, ow) in [(9, 11), (3, 2), (5, 6), (1, 1)] {
        let rr = random_tensor(Shape::new(2, 2, oh, ow), 12);
        let dx = rr.bilinear_resize_backward(5, 6).unwrap();
        let e = check_gradient(&x, &dx, None, |x| weighted_sum(&x.bilinear_resize(oh, ow).unwrap(), &rr));
        assert!(e <= OP_TOL, "{oh}x{ow}: {e:e}");
    }
}

#[test]
fn cross_entropy_gradient() {
    let logits = random_tensor(Shape::new(2, 4, 3, 5), 13).scale(3.0);
    let labels = vec![random_labels(3, 5, 4, 0.2, 1), random_labels(3, 5, 4, 0.2, 2)];
    let (_, d) = softmax_cross_entropy(&logits, &labels, VOID).unwrap();
    let e = check_gradient(&logits, &d, None, |l| softmax_cross_entropy(l, &labels, VOID).unwrap().0);
    assert!(e <= OP_TOL, "{e:e}");
}

#[test]
fn small_dilated_conv_is_tight() {
    let g = ConvGeometry { stride: 1, rate: 2, padding: Padding::Same };
    let x = random_tensor(Shape::new(1, 1, 5, 5), 21);
    let w = random_tensor(Shape::new(1, 1, 3, 3), 22);
    let r = random_tensor(conv2d(&x, &w, &g).unwrap().shape(), 23);
    let (dx, dw) = conv2d_backward(&x, &w, &g, &r).unwrap();
    let ex = check_gradient(&x, &dx, None, |x| weighted_sum(&conv2d(x, &w, &g).unwrap(), &r));
    let ew = check_gradient(&w, &dw, None, |w| weighted_sum(&conv2d(&x, w, &g).unwrap(), &r));
    assert!(ex <= 1e-6 && ew <= 1e-6, "dx {ex:e} dw {ew:e}");
}

#[test]
fn small_cross_entropy_is_tight() {
    let logits = random_tensor(Shape::new(1, 3, 2, 2), 24).scale(2.0);
    let labels = vec![random_labels(2, 2, 3, 0.0, 25)];
    let (_, d) = softmax_cross_entropy(&logits, &labels, VOID).unwrap();
    let e = check_gradient(&logits, &d, None, |l| softmax_cross_entropy(l, &labels, VOID).unwrap().0);
    assert!(e <= 1e-6, "{e:e}");
}

fn assert_model_gradients(spec: &ArchSpec, modes: &[Mode], per_tensor: usize) {
    for &mode in modes {
        let (e, name) = model_gradient_error(spec, mode, per_tensor);
        assert!(e <= MODEL_TOL, "{mode:?}: {name} has relative error {e:e}");
    }
}

// In training mode the 1x1 ASPP maps are normalized over only four values,
// which makes the loss too rugged for finite differences at full width.
#[test]
fn full_model_gradients_xception() {
    assert_model_gradients(&ArchSpec::toy_xception(3), &[Mode::Eval], 2);
}

#[test]
fn full_model_gradients_resnet_two_taps() {
    let mut spec = ArchSpec::toy_resnet(3);
    spec.decoder_low_level_taps = LowLevelTaps::Conv2Conv3;
    assert_model_gradients(&spec, &[Mode::Eval, Mode::Train], 2);
}

#[test]
fn full_model_gradients_at_output_stride_8() {
    let mut spec = ArchSpec::toy_xception(3);
    spec.scale_widths(4);
    spec.target_output_stride = 8;
    assert_model_gradients(&spec, &[Mode::Eval, Mode::Train], 3);
}
