//! Batch normalization over `(n, h, w)` per channel.

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

pub const DEFAULT_EPS: f64 = 1e-5;
/// Fraction of the new batch statistic blended into the running estimate.
pub const DEFAULT_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: T,
    pub momentum: T,
    pub frozen: bool,
}

impl<T: Scalar> BatchNormParams<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps: T::from_f64_lossy(DEFAULT_EPS),
            momentum: T::from_f64_lossy(DEFAULT_MOMENTUM),
            frozen: false,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// Saved forward state needed by [`batch_norm_backward`].
#[derive(Clone, Debug)]
pub struct BnCache<T> {
    pub x_hat: Tensor4<T>,
    pub inv_std: Vec<T>,
    /// Whether batch statistics were used (and therefore carry gradient).
    pub batch_stats: bool,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Normalizes with batch statistics when `use_batch_stats`, otherwise with
/// the supplied running statistics. Returns `γ·x̂ + β` and the cache.
pub fn batch_norm_forward<T: Scalar>(
    x: &Tensor4<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    eps: T,
    use_batch_stats: bool,
) -> Result<(Tensor4<T>, BnCache<T>)> {
    let s = x.shape();
    if [gamma.len(), beta.len(), running_mean.len(), running_var.len()].iter().any(|&l| l != s.c) {
        return shape_err(format!("batch norm with {} channels applied to {s}", gamma.len()));
    }
    let count = T::from_usize(s.n * s.plane()).unwrap();
    let mut mean = running_mean.to_vec();
    let mut var = running_var.to_vec();
    if use_batch_stats {
        for c in 0..s.c {
            let mut sum = T::zero();
            for n in 0..s.n {
                sum += x.plane(n, c).iter().copied().sum::<T>();
            }
            let m = sum / count;
            let mut sq = T::zero();
            for n in 0..s.n {
                sq += x.plane(n, c).iter().map(|&v| (v - m) * (v - m)).sum::<T>();
            }
            mean[c] = m;
            var[c] = sq / count;
        }
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut x_hat = x.clone();
    let mut y = x.clone();
    for n in 0..s.n {
        for c in 0..s.c {
            let (m, is, g, b) = (mean[c], inv_std[c], gamma[c], beta[c]);
            for (h, yv) in x_hat.plane_mut(n, c).iter_mut().zip(y.plane_mut(n, c).iter_mut()) {
                *h = (*h - m) * is;
                *yv = g * *h + b;
            }
        }
    }
    Ok((y, BnCache { x_hat, inv_std, batch_stats: use_batch_stats, mean, var }))
}

/// Returns `(dx, dγ, dβ)`.
pub fn batch_norm_backward<T: Scalar>(
    cache: &BnCache<T>,
    gamma: &[T],
    dy: &Tensor4<T>,
) -> Result<(Tensor4<T>, Vec<T>, Vec<T>)> {
    let s = dy.shape();
    if s != cache.x_hat.shape() {
        return shape_err(format!("batch norm gradient {s} vs {}", cache.x_hat.shape()));
    }
    let count = T::from_usize(s.n * s.plane()).unwrap();
    let mut dgamma = vec![T::zero(); s.c];
    let mut dbeta = vec![T::zero(); s.c];
    for n in 0..s.n {
        for c in 0..s.c {
            for (&g, &h) in dy.plane(n, c).iter().zip(cache.x_hat.plane(n, c)) {
                dgamma[c] += g * h;
                dbeta[c] += g;
            }
        }
    }
    let mut dx = dy.clone();
    for n in 0..s.n {
        for c in 0..s.c {
            let scale = gamma[c] * cache.inv_std[c];
            let xh = cache.x_hat.plane(n, c);
            let dst = dx.plane_mut(n, c);
            if cache.batch_stats {
                let mean_dy = dbeta[c] / count;
                let mean_dyxh = dgamma[c] / count;
                for (d, &h) in dst.iter_mut().zip(xh) {
                    *d = scale * (*d - mean_dy - h * mean_dyxh);
                }
            } else {
                for d in dst.iter_mut() {
                    *d *= scale;
                }
            }
        }
    }
    Ok((dx, dgamma, dbeta))
}

/// Blends batch statistics into running statistics.
pub fn update_running_stats<T: Scalar>(
    running_mean: &mut [T],
    running_var: &mut [T],
    cache: &BnCache<T>,
    momentum: T,
) {
    if !cache.batch_stats {
        return;
    }
    let keep = T::one() - momentum;
    for (r, &m) in running_mean.iter_mut().zip(&cache.mean) {
        *r = keep * *r + momentum * m;
    }
    for (r, &v) in running_var.iter_mut().zip(&cache.var) {
        *r = keep * *r + momentum * v;
    }
}

/// Stateful batch norm: batch statistics and running-stat update when
/// training and not frozen, running statistics otherwise.
pub fn batch_norm<T: Scalar>(
    x: &Tensor4<T>,
    p: &mut BatchNormParams<T>,
    training: bool,
) -> Result<Tensor4<T>> {
    let use_batch = training && !p.frozen;
    let (y, cache) =
        batch_norm_forward(x, &p.gamma, &p.beta, &p.running_mean, &p.running_var, p.eps, use_batch)?;
    if use_batch {
        update_running_stats(&mut p.running_mean, &mut p.running_var, &cache, p.momentum);
    }
    Ok(y)
}
