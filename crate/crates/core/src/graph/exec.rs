//! Forward evaluation and reverse-mode gradient propagation over a [`Graph`].

use crate::error::{Result, SegError};
use crate::graph::{Graph, NodeId, Op};
use crate::ops::{self, BnCache};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::{concat_channels, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Batch statistics in batch norm (unless frozen).
    Train,
    /// Running statistics everywhere.
    Eval,
}

/// Every node output of one forward pass plus the state backward needs.
#[derive(Debug)]
pub struct Trace<T> {
    values: Vec<Tensor4<T>>,
    bn: Vec<Option<BnCache<T>>>,
    output: NodeId,
}

impl<T: Scalar> Trace<T> {
    pub fn value(&self, id: NodeId) -> &Tensor4<T> {
        &self.values[id]
    }

    pub fn output(&self) -> &Tensor4<T> {
        &self.values[self.output]
    }

    pub fn into_output(mut self) -> Tensor4<T> {
        self.values.swap_remove(self.output)
    }

    /// Name of the first node whose output is non-finite.
    pub fn first_non_finite(&self, graph: &Graph) -> Option<String> {
        self.values
            .iter()
            .position(|v| !v.all_finite())
            .map(|i| graph.node(i).name.clone())
    }
}

fn param<'a, T: Scalar>(params: &'a ParamStore<T>, node: &str, suffix: &str) -> Result<&'a Tensor4<T>> {
    params.value(&format!("{node}.{suffix}"))
}

pub fn forward<T: Scalar>(graph: &Graph, params: &ParamStore<T>, x: &Tensor4<T>, mode: Mode) -> Result<Trace<T>> {
    if x.shape().c != graph.in_channels() {
        return Err(SegError::Shape(format!(
            "graph expects {} input channels, got {}",
            graph.in_channels(),
            x.shape()
        )));
    }
    let bn = graph.bn();
    let use_batch = mode == Mode::Train && !bn.frozen;
    let eps = T::from_f64_lossy(bn.eps);
    let mut values: Vec<Tensor4<T>> = Vec::with_capacity(graph.nodes().len());
    let mut caches = Vec::with_capacity(graph.nodes().len());
    for node in graph.nodes() {
        let input = |k: usize| &values[node.inputs[k]];
        let mut cache = None;
        let out = match node.op {
            Op::Input => x.clone(),
            Op::Conv { bias, .. } => {
                let w = param(params, &node.name, "weight")?;
                let mut y = ops::conv2d(input(0), w, &node.op.geometry().unwrap())?;
                if bias {
                    let b = param(params, &node.name, "bias")?.data().to_vec();
                    let s = y.shape();
                    for n in 0..s.n {
                        for (c, &bv) in b.iter().enumerate() {
                            y.plane_mut(n, c).iter_mut().for_each(|v| *v += bv);
                        }
                    }
                }
                y
            }
            Op::Depthwise { .. } => {
                let w = param(params, &node.name, "weight")?;
                ops::depthwise_conv2d(input(0), w, &node.op.geometry().unwrap())?
            }
            Op::BatchNorm => {
                let (y, c) = ops::batch_norm_forward(
                    input(0),
                    param(params, &node.name, "gamma")?.data(),
                    param(params, &node.name, "beta")?.data(),
                    param(params, &node.name, "running_mean")?.data(),
                    param(params, &node.name, "running_var")?.data(),
                    eps,
                    use_batch,
                )?;
                cache = Some(c);
                y
            }
            Op::Relu => input(0).relu(),
            Op::Add => input(0).add(input(1))?,
            Op::Concat => {
                let parts: Vec<&Tensor4<T>> = node.inputs.iter().map(|&i| &values[i]).collect();
                concat_channels(&parts)?
            }
            Op::GlobalAvgPool => ops::global_avg_pool(input(0)),
            Op::ResizeLike => {
                let r = input(1).shape();
                input(0).bilinear_resize(r.h, r.w)?
            }
        };
        values.push(out);
        caches.push(cache);
    }
    Ok(Trace { values, bn: caches, output: graph.output() })
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor4<T>>], id: NodeId, g: Tensor4<T>) -> Result<()> {
    match &mut grads[id] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Propagates `d_out` (gradient of the loss w.r.t. the graph output) back
/// through the trace, adding parameter gradients into `params`. Returns the
/// gradient w.r.t. the graph input.
pub fn backward<T: Scalar>(
    graph: &Graph,
    params: &mut ParamStore<T>,
    trace: &Trace<T>,
    d_out: Tensor4<T>,
) -> Result<Tensor4<T>> {
    if d_out.shape() != trace.output().shape() {
        return Err(SegError::Shape(format!(
            "output gradient {} vs output {}",
            d_out.shape(),
            trace.output().shape()
        )));
    }
    let mut grads: Vec<Option<Tensor4<T>>> = vec![None; graph.nodes().len()];
    grads[graph.output()] = Some(d_out);
    for id in (1..graph.nodes().len()).rev() {
        let Some(dy) = grads[id].take() else { continue };
        let node = graph.node(id);
        let x = |k: usize| trace.value(node.inputs[k]);
        match node.op {
            Op::Input => {}
            Op::Conv { bias, .. } => {
                let w = params.value(&format!("{}.weight", node.name))?;
                let (dx, dw) = ops::conv2d_backward(x(0), w, &node.op.geometry().unwrap(), &dy)?;
                params.accumulate_grad(&format!("{}.weight", node.name), &dw)?;
                if bias {
                    let s = dy.shape();
                    let db: Vec<T> = (0..s.c)
                        .map(|c| (0..s.n).map(|n| dy.plane(n, c).iter().copied().sum::<T>()).sum())
                        .collect();
                    params.accumulate_grad_slice(&format!("{}.bias", node.name), &db)?;
                }
                accumulate(&mut grads, node.inputs[0], dx)?;
            }
            Op::Depthwise { .. } => {
                let w = params.value(&format!("{}.weight", node.name))?;
                let (dx, dw) = ops::depthwise_conv2d_backward(x(0), w, &node.op.geometry().unwrap(), &dy)?;
                params.accumulate_grad(&format!("{}.weight", node.name), &dw)?;
                accumulate(&mut grads, node.inputs[0], dx)?;
            }
            Op::BatchNorm => {
                let cache = trace.bn[id].as_ref().expect("batch norm nodes always cache");
                let gamma = params.value(&format!("{}.gamma", node.name))?.data().to_vec();
                let (dx, dgamma, dbeta) = ops::batch_norm_backward(cache, &gamma, &dy)?;
                params.accumulate_grad_slice(&format!("{}.gamma", node.name), &dgamma)?;
                params.accumulate_grad_slice(&format!("{}.beta", node.name), &dbeta)?;
                accumulate(&mut grads, node.inputs[0], dx)?;
            }
            Op::Relu => {
                let dx = ops::relu_backward(trace.value(id), &dy)?;
                accumulate(&mut grads, node.inputs[0], dx)?;
            }
            Op::Add => {
                accumulate(&mut grads, node.inputs[1], dy.clone())?;
                accumulate(&mut grads, node.inputs[0], dy)?;
            }
            Op::Concat => {
                let mut start = 0;
                for &part in &node.inputs {
                    let c = trace.value(part).shape().c;
                    accumulate(&mut grads, part, dy.slice_channels(start, c)?)?;
                    start += c;
                }
            }
            Op::GlobalAvgPool => {
                let s = x(0).shape();
                accumulate(&mut grads, node.inputs[0], ops::global_avg_pool_backward(&dy, s.h, s.w)?)?;
            }
            Op::ResizeLike => {
                let s = x(0).shape();
                accumulate(&mut grads, node.inputs[0], dy.bilinear_resize_backward(s.h, s.w)?)?;
            }
        }
    }
    match grads[0].take() {
        Some(g) => Ok(g),
        None => Tensor4::zeros(trace.value(0).shape()),
    }
}

/// Blends the batch statistics of a training-mode trace into the running
/// statistics stored in `params`.
pub fn update_running_stats<T: Scalar>(graph: &Graph, params: &mut ParamStore<T>, trace: &Trace<T>) -> Result<()> {
    let momentum = T::from_f64_lossy(graph.bn().momentum);
    for (id, cache) in trace.bn.iter().enumerate() {
        let Some(cache) = cache else { continue };
        if !cache.batch_stats {
            continue;
        }
        let name = &graph.node(id).name;
        let mut mean = params.value(&format!("{name}.running_mean"))?.clone();
        let mut var = params.value(&format!("{name}.running_var"))?.clone();
        ops::update_running_stats(mean.data_mut(), var.data_mut(), cache, momentum);
        params.set_value(&format!("{name}.running_mean"), mean)?;
        params.set_value(&format!("{name}.running_var"), var)?;
    }
    Ok(())
}
