//! Reference implementations and helpers shared by the integration tests.
#![allow(dead_code)]

use atrous_seg::arch::{ArchSpec, Model};
use atrous_seg::graph::exec::Mode;
use atrous_seg::graph::Op;
use atrous_seg::ops::{softmax_cross_entropy, ConvGeometry, Padding};
use atrous_seg::params::ParamRole;
use atrous_seg::train::{loss_and_gradients, Batch};
use atrous_seg::{LabelMap, Params, Shape, Tensor, VOID};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: Shape, seed: u64) -> Tensor {
    let mut r = rng(seed);
    Tensor::from_vec(shape, (0..shape.numel()).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_labels(h: usize, w: usize, k: u8, void_frac: f64, seed: u64) -> LabelMap {
    let mut r = rng(seed);
    let data = (0..h * w)
        .map(|_| if r.gen_bool(void_frac) { VOID } else { r.gen_range(0..k) })
        .collect();
    LabelMap::new(h, w, data).unwrap()
}

/// Output length and leading pad along one axis, straight from the padding rule.
pub fn axis(input: usize, k: usize, g: &ConvGeometry) -> Option<(usize, isize)> {
    let ext = (k - 1) * g.rate + 1;
    match g.padding {
        Padding::Same => Some((input.div_ceil(g.stride), ((ext - 1) / 2) as isize)),
        Padding::Valid => (ext <= input).then(|| ((input - ext) / g.stride + 1, 0)),
    }
}

/// `y[n,o,i,j] = Σ_{c,a,b} x[n,c,i·s+a·r−p, j·s+b·r−p]·w[o,c,a,b]`, by direct summation.
pub fn direct_conv(x: &Tensor, w: &Tensor, g: &ConvGeometry) -> Option<Tensor> {
    let (xs, ws) = (x.shape(), w.shape());
    let (oh, ph) = axis(xs.h, ws.h, g)?;
    let (ow, pw) = axis(xs.w, ws.w, g)?;
    let mut y = Tensor::zeros(Shape::new(xs.n, ws.n, oh, ow)).unwrap();
    for n in 0..xs.n {
        for o in 0..ws.n {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = 0.0;
                    for c in 0..xs.c {
                        for a in 0..ws.h {
                            for b in 0..ws.w {
                                let yy = (i * g.stride + a * g.rate) as isize - ph;
                                let xx = (j * g.stride + b * g.rate) as isize - pw;
                                if yy < 0 || xx < 0 || yy >= xs.h as isize || xx >= xs.w as isize {
                                    continue;
                                }
                                acc += x.at(n, c, yy as usize, xx as usize) * w.at(o, c, a, b);
                            }
                        }
                    }
                    y.set(n, o, i, j, acc);
                }
            }
        }
    }
    Some(y)
}

/// Depthwise reference: channel `c` convolved with filter `c` alone.
pub fn direct_depthwise(x: &Tensor, w: &Tensor, g: &ConvGeometry) -> Option<Tensor> {
    let xs = x.shape();
    let ws = w.shape();
    let mut parts = Vec::new();
    for c in 0..xs.c {
        let xc = x.slice_channels(c, 1).unwrap();
        let wc = Tensor::from_vec(Shape::new(1, 1, ws.h, ws.w), w.sample(c).to_vec()).unwrap();
        parts.push(direct_conv(&xc, &wc, g)?);
    }
    let refs: Vec<&Tensor> = parts.iter().collect();
    Some(atrous_seg::tensor::concat_channels(&refs).unwrap())
}

/// Dilates a kernel by inserting `rate − 1` zeros between taps.
pub fn dilate_kernel(w: &Tensor, rate: usize) -> Tensor {
    let s = w.shape();
    let (kh, kw) = ((s.h - 1) * rate + 1, (s.w - 1) * rate + 1);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, kh, kw)).unwrap();
    for o in 0..s.n {
        for c in 0..s.c {
            for a in 0..s.h {
                for b in 0..s.w {
                    out.set(o, c, a * rate, b * rate, w.at(o, c, a, b));
                }
            }
        }
    }
    out
}

/// Central difference of `f` along coordinate `i` of `x`.
pub fn central_difference(x: &Tensor, i: usize, h: f64, mut f: impl FnMut(&Tensor) -> f64) -> f64 {
    let mut p = x.clone();
    p.data_mut()[i] += h;
    let fp = f(&p);
    p.data_mut()[i] -= 2.0 * h;
    let fm = f(&p);
    (fp - fm) / (2.0 * h)
}

/// `max|a − n| / max(max|a|, max|n|)` over paired analytic and numeric values.
pub fn relative_error(pairs: &[(f64, f64)]) -> f64 {
    let diff = pairs.iter().map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
    let scale = pairs.iter().map(|(a, n)| a.abs().max(n.abs())).fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Like [`relative_error`] with the scale clamped to at least `floor`.
pub fn relative_error_floor(pairs: &[(f64, f64)], floor: f64) -> f64 {
    let diff = pairs.iter().map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
    let scale = pairs.iter().map(|(a, n)| a.abs().max(n.abs())).fold(floor, f64::max);
    diff / scale
}

/// Checks the analytic gradient `grad` of `f` at `x` on every coordinate
/// (or on `sample` evenly spaced coordinates when given).
pub fn check_gradient(x: &Tensor, grad: &Tensor, sample: Option<usize>, mut f: impl FnMut(&Tensor) -> f64) -> f64 {
    let n = x.data().len();
    let idx: Vec<usize> = match sample {
        Some(m) if m < n => (0..m).map(|i| i * n / m).collect(),
        _ => (0..n).collect(),
    };
    let pairs: Vec<(f64, f64)> = idx.iter().map(|&i| (grad.data()[i], central_difference(x, i, 1e-6, &mut f))).collect();
    relative_error(&pairs)
}

/// Per-class IOU by counting pixel sets directly.
pub fn brute_force_miou(gts: &[LabelMap], preds: &[LabelMap], k: usize) -> Option<f64> {
    let mut ious = Vec::new();
    for c in 0..k as u8 {
        let (mut inter, mut union) = (0usize, 0usize);
        for (g, p) in gts.iter().zip(preds) {
            for (&gv, &pv) in g.data().iter().zip(p.data()) {
                if gv == VOID {
                    continue;
                }
                if gv == c && pv == c {
                    inter += 1;
                }
                if gv == c || pv == c {
                    union += 1;
                }
            }
        }
        if union > 0 {
            ious.push(inter as f64 / union as f64);
        }
    }
    (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64)
}

/// Squared Euclidean distance from every pixel to the nearest void pixel.
pub fn brute_force_void_distance_sq(gt: &LabelMap) -> Vec<f64> {
    let (h, w) = (gt.height(), gt.width());
    let voids: Vec<(usize, usize)> =
        (0..h * w).filter(|&i| gt.data()[i] == VOID).map(|i| (i / w, i % w)).collect();
    (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            voids
                .iter()
                .map(|&(vy, vx)| (vy as f64 - y as f64).powi(2) + (vx as f64 - x as f64).powi(2))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Gradients below this magnitude count as zero (for example a bias that a
/// following batch norm removes exactly).
pub const GRAD_FLOOR: f64 = 1e-6;
/// Whole-model probes use a five-point stencil, so a larger step keeps
/// rounding noise in the loss well below the tolerance. Smaller steps are
/// tried when a larger one crosses a ReLU kink.
pub const FD_STEPS: [f64; 5] = [1e-4, 1e-5, 1e-6, 1e-7, 1e-8];
pub const KINK_SLACK: f64 = 1e-6;

/// Loss and the input of every ReLU for one perturbed coordinate.
fn probe(model: &Model, params: &Params, batch: &Batch<f64>, mode: Mode, name: &str, i: usize, h: f64) -> (f64, Vec<f64>) {
    let mut p = params.clone();
    p.get_mut(name).unwrap().value.data_mut()[i] += h;
    let trace = model.trace(&p, &batch.images, mode).unwrap();
    let pre = model
        .graph()
        .nodes()
        .iter()
        .filter(|n| matches!(n.op, Op::Relu))
        .flat_map(|n| trace.value(n.inputs[0]).data().to_vec())
        .collect();
    let loss = softmax_cross_entropy(trace.output(), &batch.labels, VOID).unwrap().0;
    (loss, pre)
}

/// Whether a probe at step `h` left every ReLU on its side of the kink.
/// Units within `KINK_SLACK * h` of zero at the base point may switch: the
/// bias they add to the difference quotient is at most that fraction of
/// their slope.
fn same_side(base: &[f64], probe: &[f64], h: f64) -> bool {
    base.iter().zip(probe).all(|(&b, &p)| (b > 0.0) == (p > 0.0) || b.abs() <= KINK_SLACK * h)
}

/// Five-point derivative at the first step in `FD_STEPS` whose probes
/// leave every ReLU on the same side. `None` when none do.
fn smooth_derivative(
    model: &Model,
    params: &Params,
    batch: &Batch<f64>,
    mode: Mode,
    name: &str,
    i: usize,
    base: &[f64],
) -> Option<f64> {
    'steps: for h in FD_STEPS {
        let mut f = [0.0; 4];
        for (slot, k) in f.iter_mut().zip([2.0, 1.0, -1.0, -2.0]) {
            let (l, pre) = probe(model, params, batch, mode, name, i, k * h);
            if !same_side(base, &pre, h) {
                continue 'steps;
            }
            *slot = l;
        }
        return Some((-f[0] + 8.0 * f[1] - 8.0 * f[2] + f[3]) / (12.0 * h));
    }
    None
}

/// Worst relative error over every trainable tensor, probing `per_tensor`
/// coordinates of each. Coordinates whose probes all switch a ReLU are
/// replaced by the next coordinate, since the loss is not differentiable there.
pub fn model_gradient_error(spec: &ArchSpec, mode: Mode, per_tensor: usize) -> (f64, String) {
    let model = Model::new(spec).unwrap();
    let mut params: Params = model.init_params(3).unwrap();
    // Non-identity batch norm, bias and statistics so every path carries gradient.
    let names: Vec<String> = params.names().map(String::from).collect();
    for (j, n) in names.iter().enumerate() {
        if [".gamma", ".beta", ".bias", ".running_mean", ".running_var"].iter().any(|s| n.ends_with(s)) {
            let s = params.value(n).unwrap().shape();
            let mut v = random_tensor(s, 100 + j as u64).scale(0.1);
            if n.ends_with(".gamma") || n.ends_with(".running_var") {
                v = v.map(|g| 1.0 + g);
            }
            params.set_value(n, v).unwrap();
        }
    }
    // Batch 4: with two images a 1x1 feature map normalizes to exactly ±1.
    let images = random_tensor(Shape::new(4, 3, 16, 16), 4);
    let labels = (0..4).map(|i| random_labels(16, 16, 3, 0.1, 5 + i)).collect();
    let batch = Batch::new(images, labels).unwrap();
    params.zero_grads();
    loss_and_gradients(&model, &mut params, &batch, mode).unwrap();
    let (_, base) = probe(&model, &params, &batch, mode, &names[0], 0, 0.0);
    let mut worst = (0.0, String::new());
    for name in &names {
        let p = params.get(name).unwrap();
        if p.role != ParamRole::Trainable {
            continue;
        }
        let n = p.value.data().len();
        let grad = p.grad.data().to_vec();
        let want = per_tensor.min(n);
        let mut pairs = Vec::new();
        let mut tried = 0;
        while pairs.len() < want && tried < n {
            let i = (tried * 7919 + 13) % n;
            tried += 1;
            if let Some(fd) = smooth_derivative(&model, &params, &batch, mode, name, i, &base) {
                pairs.push((grad[i], fd));
            }
        }
        assert!(!pairs.is_empty(), "{name}: every probe crossed ReLU kinks");
        let e = relative_error_floor(&pairs, GRAD_FLOOR);
        if e > worst.0 {
            worst = (e, name.clone());
        }
    }
    worst
}

