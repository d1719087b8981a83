//! "Poly" learning-rate schedule and momentum SGD.

use indexmap::IndexMap;

use crate::error::{Result, SegError};
use crate::params::{ParamRole, ParamStore};
use crate::scalar::Scalar;

pub const DEFAULT_BASE_LR: f64 = 0.007;
pub const DEFAULT_POLY_POWER: f64 = 0.9;
pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_WEIGHT_DECAY: f64 = 4e-5;

/// `base_lr · (1 − iter/max_iter)^power`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolySchedule {
    pub base_lr: f64,
    pub power: f64,
    pub max_iter: usize,
}

impl PolySchedule {
    pub fn new(base_lr: f64, power: f64, max_iter: usize) -> Result<Self> {
        if !(base_lr > 0.0) || !(power > 0.0) || max_iter == 0 {
            return Err(SegError::Config(format!(
                "poly schedule needs base_lr > 0, power > 0, max_iter >= 1 (got {base_lr}, {power}, {max_iter})"
            )));
        }
        Ok(Self { base_lr, power, max_iter })
    }

    /// Learning rate at `iter`; zero at and beyond `max_iter`.
    pub fn lr_at(&self, iter: usize) -> f64 {
        if iter >= self.max_iter {
            return 0.0;
        }
        self.base_lr * (1.0 - iter as f64 / self.max_iter as f64).powf(self.power)
    }
}

#[derive(Clone, Debug)]
pub struct SgdState<T> {
    pub momentum: T,
    pub weight_decay: T,
    velocity: IndexMap<String, Vec<T>>,
}

impl<T: Scalar> SgdState<T> {
    pub fn new(momentum: T, weight_decay: T) -> Result<Self> {
        if momentum < T::zero() || momentum >= T::one() || weight_decay < T::zero() {
            return Err(SegError::Config(format!(
                "momentum must be in [0,1) and weight decay >= 0 (got {momentum}, {weight_decay})"
            )));
        }
        Ok(Self { momentum, weight_decay, velocity: IndexMap::new() })
    }

    pub fn velocity(&self, name: &str) -> Option<&[T]> {
        self.velocity.get(name).map(Vec::as_slice)
    }

    pub fn velocities(&self) -> impl Iterator<Item = (&str, &[T])> {
        self.velocity.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn set_velocity(&mut self, name: &str, v: Vec<T>) {
        self.velocity.insert(name.to_string(), v);
    }

    /// `v ← m·v + g + wd·w; w ← w − lr·v`, then clears all gradients.
    ///
    /// Buffers and frozen parameters are skipped. A trainable parameter
    /// that received no gradient is an error.
    pub fn step(&mut self, params: &mut ParamStore<T>, lr: T) -> Result<()> {
        if let Some((name, _)) = params
            .iter()
            .find(|(_, p)| p.role == ParamRole::Trainable && !p.frozen && !p.has_grad)
        {
            return Err(SegError::MissingGradient(name.to_string()));
        }
        for (name, p) in params.iter_mut() {
            if p.role != ParamRole::Trainable || p.frozen {
                continue;
            }
            let n = p.value.data().len();
            let v = self.velocity.entry(name.to_string()).or_insert_with(|| vec![T::zero(); n]);
            if v.len() != n {
                return Err(SegError::Shape(format!("velocity for `{name}` has {} entries, expected {n}", v.len())));
            }
            let grad = p.grad.data().to_vec();
            for ((w, vi), g) in p.value.data_mut().iter_mut().zip(v.iter_mut()).zip(grad) {
                *vi = self.momentum * *vi + g + self.weight_decay * *w;
                *w -= lr * *vi;
            }
        }
        params.zero_grads();
        Ok(())
    }
}

/// Free-function form of [`SgdState::step`].
pub fn sgd_step<T: Scalar>(params: &mut ParamStore<T>, st: &mut SgdState<T>, lr: T) -> Result<()> {
    st.step(params, lr)
}
