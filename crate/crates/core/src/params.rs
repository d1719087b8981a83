//! Named parameter registry with paired gradient storage.

use indexmap::IndexMap;

use crate::error::{shape_err, Result, SegError};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamRole {
    /// Updated by the optimizer.
    Trainable,
    /// State carried along with the model (batch-norm running statistics).
    Buffer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub role: ParamRole,
    /// Excluded from optimizer updates while set.
    pub frozen: bool,
    pub value: Tensor4<T>,
    pub grad: Tensor4<T>,
    /// Set once a backward pass has written into `grad`.
    pub has_grad: bool,
}

/// Insertion-ordered map from parameter name to value and gradient.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    entries: IndexMap<String, Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: IndexMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, role: ParamRole, value: Tensor4<T>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(SegError::Config(format!("duplicate parameter `{name}`")));
        }
        let grad = Tensor4::zeros(value.shape())?;
        self.entries.insert(name, Param { role, frozen: false, value, grad, has_grad: false });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Param<T>> {
        self.entries
            .get(name)
            .ok_or_else(|| SegError::Config(format!("unknown parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param<T>> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| SegError::Config(format!("unknown parameter `{name}`")))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor4<T>> {
        Ok(&self.get(name)?.value)
    }

    pub fn set_value(&mut self, name: &str, value: Tensor4<T>) -> Result<()> {
        let p = self.get_mut(name)?;
        if p.value.shape() != value.shape() {
            return shape_err(format!("`{name}` is {} but got {}", p.value.shape(), value.shape()));
        }
        p.value = value;
        Ok(())
    }

    /// Adds `g` into the gradient of `name`.
    pub fn accumulate_grad(&mut self, name: &str, g: &Tensor4<T>) -> Result<()> {
        let p = self.get_mut(name)?;
        p.grad.add_assign(g)?;
        p.has_grad = true;
        Ok(())
    }

    pub fn accumulate_grad_slice(&mut self, name: &str, g: &[T]) -> Result<()> {
        let p = self.get_mut(name)?;
        if p.grad.data().len() != g.len() {
            return shape_err(format!("gradient of length {} for `{name}`", g.len()));
        }
        for (a, &b) in p.grad.data_mut().iter_mut().zip(g) {
            *a += b;
        }
        p.has_grad = true;
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.data_mut().fill(T::zero());
            p.has_grad = false;
        }
    }

    pub fn set_frozen(&mut self, name: &str, frozen: bool) -> Result<()> {
        self.get_mut(name)?.frozen = frozen;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn shapes(&self) -> Vec<(String, Shape)> {
        self.entries.iter().map(|(k, v)| (k.clone(), v.value.shape())).collect()
    }

    /// Number of scalar entries across trainable parameters.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .values()
            .filter(|p| p.role == ParamRole::Trainable)
            .map(|p| p.value.shape().numel())
            .sum()
    }

    /// Name of the first parameter whose value or gradient is non-finite.
    pub fn first_non_finite(&self) -> Option<String> {
        self.entries.iter().find_map(|(k, p)| {
            if !p.value.all_finite() {
                Some(format!("{k} (value)"))
            } else if !p.grad.all_finite() {
                Some(format!("{k} (gradient)"))
            } else {
                None
            }
        })
    }
}
