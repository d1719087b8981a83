//! One-batch training steps over a [`Model`].

use crate::arch::{ArchSpec, Model};
use crate::error::{Result, SegError};
use crate::graph::exec::{self, Mode};
use crate::label::{LabelMap, VOID};
use crate::ops::softmax_cross_entropy;
use crate::optim::SgdState;
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Images `(n,3,h,w)` with one label map per image.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub images: Tensor4<T>,
    pub labels: Vec<LabelMap>,
}

impl<T: Scalar> Batch<T> {
    pub fn new(images: Tensor4<T>, labels: Vec<LabelMap>) -> Result<Self> {
        let s = images.shape();
        if labels.len() != s.n {
            return Err(SegError::Shape(format!("{} label maps for {} images", labels.len(), s.n)));
        }
        if let Some(l) = labels.iter().find(|l| l.height() != s.h || l.width() != s.w) {
            return Err(SegError::Shape(format!(
                "label map {}x{} does not match images {s}",
                l.height(),
                l.width()
            )));
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Parameters for `spec` at its planned output stride.
pub fn init_params<T: Scalar>(spec: &ArchSpec, seed: u64) -> Result<ParamStore<T>> {
    Model::new(spec)?.init_params(seed)
}

/// Loss of the batch without touching gradients or running statistics.
pub fn batch_loss<T: Scalar>(model: &Model, params: &ParamStore<T>, batch: &Batch<T>, mode: Mode) -> Result<T> {
    let logits = model.forward(params, &batch.images, mode)?;
    Ok(softmax_cross_entropy(&logits, &batch.labels, VOID)?.0)
}

/// Forward and backward pass. Gradients are added into `params`; running
/// statistics are left alone. Non-finite values abort with the name of the
/// first offending tensor.
pub fn loss_and_gradients<T: Scalar>(
    model: &Model,
    params: &mut ParamStore<T>,
    batch: &Batch<T>,
    mode: Mode,
) -> Result<(T, exec::Trace<T>)> {
    let trace = model.trace(params, &batch.images, mode)?;
    let (loss, dlogits) = softmax_cross_entropy(trace.output(), &batch.labels, VOID)?;
    if let Some(culprit) = trace.first_non_finite(model.graph()) {
        return Err(SegError::NonFinite(format!("loss is {loss}; first non-finite tensor: {culprit}")));
    }
    if !loss.is_finite() {
        return Err(SegError::NonFinite(format!("loss is {loss}")));
    }
    exec::backward(model.graph(), params, &trace, dlogits)?;
    if let Some(name) = params.first_non_finite() {
        return Err(SegError::NonFinite(format!("first non-finite tensor: {name}")));
    }
    Ok((loss, trace))
}

/// One forward, one backward, one SGD update at learning rate `lr`.
/// Returns the loss before the update.
pub fn train_step<T: Scalar>(
    model: &Model,
    params: &mut ParamStore<T>,
    sgd: &mut SgdState<T>,
    batch: &Batch<T>,
    lr: T,
) -> Result<T> {
    params.zero_grads();
    let (loss, trace) = loss_and_gradients(model, params, batch, Mode::Train)?;
    exec::update_running_stats(model.graph(), params, &trace)?;
    sgd.step(params, lr)?;
    Ok(loss)
}
