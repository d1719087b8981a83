//! Layer graphs: a topologically ordered list of operator nodes whose
//! parameters live in a [`ParamStore`] under names derived from the node
//! name. [`exec`] runs them forward and in reverse.

pub mod exec;

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Result, SegError};
use crate::ops::ConvGeometry;
use crate::params::{ParamRole, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor4};

pub type NodeId = usize;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Op {
    Input,
    /// SAME-padded (atrous) convolution; `{name}.weight`, optional `{name}.bias`.
    Conv { out_channels: usize, kernel: usize, stride: usize, rate: usize, bias: bool },
    /// SAME-padded (atrous) depthwise convolution; `{name}.weight`.
    Depthwise { kernel: usize, stride: usize, rate: usize },
    /// `{name}.gamma`, `{name}.beta` and running-statistic buffers.
    BatchNorm,
    Relu,
    Add,
    Concat,
    GlobalAvgPool,
    /// Bilinear resize of input 0 to the spatial size of input 1.
    ResizeLike,
}

impl Op {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Conv { kernel: 1, .. } => "pointwise",
            Op::Conv { .. } => "conv",
            Op::Depthwise { .. } => "depthwise",
            Op::BatchNorm => "batch_norm",
            Op::Relu => "relu",
            Op::Add => "add",
            Op::Concat => "concat",
            Op::GlobalAvgPool => "global_avg_pool",
            Op::ResizeLike => "bilinear_resize",
        }
    }

    pub fn geometry(&self) -> Option<ConvGeometry> {
        match *self {
            Op::Conv { stride, rate, .. } | Op::Depthwise { stride, rate, .. } => {
                Some(ConvGeometry::same(stride, rate))
            }
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Node {
    pub name: String,
    pub op: Op,
    pub inputs: Vec<NodeId>,
    /// Output channel count.
    pub channels: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BnSettings {
    pub eps: f64,
    pub momentum: f64,
    /// Normalize with running statistics even when training.
    pub frozen: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ParamInit {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Glorot { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Shape,
    pub role: ParamRole,
    pub init: ParamInit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    nodes: Vec<Node>,
    output: NodeId,
    bn: BnSettings,
    marks: Vec<(String, NodeId)>,
}

impl Graph {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn output(&self) -> NodeId {
        self.output
    }

    pub fn bn(&self) -> BnSettings {
        self.bn
    }

    /// Named intermediate features (taps, encoder output, ...).
    pub fn marks(&self) -> &[(String, NodeId)] {
        &self.marks
    }

    pub fn mark(&self, name: &str) -> Option<NodeId> {
        self.marks.iter().find(|(n, _)| n == name).map(|&(_, id)| id)
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn in_channels(&self) -> usize {
        self.nodes[0].channels
    }

    /// Parameters in node order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        let p = |name: &str, suffix: &str, shape: Shape, role, init| ParamSpec {
            name: format!("{name}.{suffix}"),
            shape,
            role,
            init,
        };
        for node in &self.nodes {
            let cin = node.inputs.first().map_or(0, |&i| self.nodes[i].channels);
            match node.op {
                Op::Conv { out_channels, kernel, bias, .. } => {
                    let kk = kernel * kernel;
                    out.push(p(
                        &node.name,
                        "weight",
                        Shape::new(out_channels, cin, kernel, kernel),
                        ParamRole::Trainable,
                        ParamInit::Glorot { fan_in: cin * kk, fan_out: out_channels * kk },
                    ));
                    if bias {
                        out.push(p(&node.name, "bias", Shape::new(1, out_channels, 1, 1), ParamRole::Trainable, ParamInit::Zeros));
                    }
                }
                Op::Depthwise { kernel, .. } => {
                    let kk = kernel * kernel;
                    out.push(p(
                        &node.name,
                        "weight",
                        Shape::new(cin, 1, kernel, kernel),
                        ParamRole::Trainable,
                        ParamInit::Glorot { fan_in: kk, fan_out: kk },
                    ));
                }
                Op::BatchNorm => {
                    let s = Shape::new(1, cin, 1, 1);
                    out.push(p(&node.name, "gamma", s, ParamRole::Trainable, ParamInit::Ones));
                    out.push(p(&node.name, "beta", s, ParamRole::Trainable, ParamInit::Zeros));
                    out.push(p(&node.name, "running_mean", s, ParamRole::Buffer, ParamInit::Zeros));
                    out.push(p(&node.name, "running_var", s, ParamRole::Buffer, ParamInit::Ones));
                }
                _ => {}
            }
        }
        out
    }

    /// Fresh parameters, deterministic in `seed`.
    pub fn init_params<T: Scalar>(&self, seed: u64) -> Result<ParamStore<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for spec in self.param_specs() {
            let len = spec.shape.validate()?;
            let data: Vec<T> = match spec.init {
                ParamInit::Glorot { fan_in, fan_out } => {
                    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    (0..len).map(|_| T::from_f64_lossy(rng.gen_range(-bound..bound))).collect()
                }
                ParamInit::Zeros => vec![T::zero(); len],
                ParamInit::Ones => vec![T::one(); len],
            };
            store.insert(spec.name, spec.role, Tensor4::from_vec(spec.shape, data)?)?;
        }
        if self.bn.frozen {
            freeze_batch_norm(self, &mut store)?;
        }
        Ok(store)
    }

    /// Checks that `params` holds every parameter of this graph with the right shape.
    pub fn check_params<T: Scalar>(&self, params: &ParamStore<T>) -> Result<()> {
        for spec in self.param_specs() {
            let p = params.get(&spec.name)?;
            if p.value.shape() != spec.shape {
                return shape_err(format!("parameter `{}` is {} but the graph needs {}", spec.name, p.value.shape(), spec.shape));
            }
        }
        Ok(())
    }

    /// Output shape of every node for a given input shape.
    pub fn infer_shapes(&self, input: Shape) -> Result<Vec<Shape>> {
        input.validate()?;
        if input.c != self.in_channels() {
            return shape_err(format!("graph expects {} input channels, got {input}", self.in_channels()));
        }
        let mut shapes: Vec<Shape> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let ins: Vec<Shape> = node.inputs.iter().map(|&i| shapes[i]).collect();
            let s = match node.op {
                Op::Input => input,
                Op::Conv { .. } | Op::Depthwise { .. } => {
                    let g = node.op.geometry().unwrap();
                    let x = ins[0];
                    Shape::new(x.n, node.channels, (x.h - 1) / g.stride + 1, (x.w - 1) / g.stride + 1)
                }
                Op::BatchNorm | Op::Relu => ins[0],
                Op::Add => {
                    if ins[0] != ins[1] {
                        return shape_err(format!("`{}` adds {} and {}", node.name, ins[0], ins[1]));
                    }
                    ins[0]
                }
                Op::Concat => {
                    let s0 = ins[0];
                    if ins.iter().any(|s| s.n != s0.n || s.h != s0.h || s.w != s0.w) {
                        return shape_err(format!("`{}` concatenates mismatched maps {ins:?}", node.name));
                    }
                    s0.with_c(ins.iter().map(|s| s.c).sum())
                }
                Op::GlobalAvgPool => ins[0].with_hw(1, 1),
                Op::ResizeLike => ins[0].with_hw(ins[1].h, ins[1].w),
            };
            shapes.push(s);
        }
        Ok(shapes)
    }
}

/// Marks every batch-norm scale and shift as frozen.
pub fn freeze_batch_norm<T: Scalar>(graph: &Graph, params: &mut ParamStore<T>) -> Result<()> {
    for node in graph.nodes().iter().filter(|n| n.op == Op::BatchNorm) {
        params.set_frozen(&format!("{}.gamma", node.name), true)?;
        params.set_frozen(&format!("{}.beta", node.name), true)?;
    }
    Ok(())
}

/// Incrementally assembles a [`Graph`]; nodes can only reference earlier nodes.
#[derive(Debug)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
    names: HashSet<String>,
    marks: Vec<(String, NodeId)>,
}

impl GraphBuilder {
    pub fn new(in_channels: usize) -> Self {
        let mut b = Self { nodes: Vec::new(), names: HashSet::new(), marks: Vec::new() };
        b.push("input".into(), Op::Input, vec![], in_channels);
        b
    }

    pub fn input(&self) -> NodeId {
        0
    }

    pub fn channels(&self, id: NodeId) -> usize {
        self.nodes[id].channels
    }

    fn push(&mut self, name: String, op: Op, inputs: Vec<NodeId>, channels: usize) -> NodeId {
        assert!(self.names.insert(name.clone()), "duplicate node name `{name}`");
        assert!(inputs.iter().all(|&i| i < self.nodes.len()), "node `{name}` references a later node");
        self.nodes.push(Node { name, op, inputs, channels });
        self.nodes.len() - 1
    }

    pub fn mark(&mut self, name: &str, id: NodeId) {
        self.marks.push((name.to_string(), id));
    }

    pub fn conv(&mut self, name: &str, x: NodeId, out: usize, kernel: usize, stride: usize, rate: usize, bias: bool) -> NodeId {
        self.push(name.into(), Op::Conv { out_channels: out, kernel, stride, rate, bias }, vec![x], out)
    }

    pub fn depthwise(&mut self, name: &str, x: NodeId, kernel: usize, stride: usize, rate: usize) -> NodeId {
        let c = self.channels(x);
        self.push(name.into(), Op::Depthwise { kernel, stride, rate }, vec![x], c)
    }

    pub fn batch_norm(&mut self, name: &str, x: NodeId) -> NodeId {
        let c = self.channels(x);
        self.push(name.into(), Op::BatchNorm, vec![x], c)
    }

    pub fn relu(&mut self, name: &str, x: NodeId) -> NodeId {
        let c = self.channels(x);
        self.push(name.into(), Op::Relu, vec![x], c)
    }

    pub fn add(&mut self, name: &str, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.channels(a), self.channels(b), "add of mismatched channels at `{name}`");
        let c = self.channels(a);
        self.push(name.into(), Op::Add, vec![a, b], c)
    }

    pub fn concat(&mut self, name: &str, parts: &[NodeId]) -> NodeId {
        let c = parts.iter().map(|&p| self.channels(p)).sum();
        self.push(name.into(), Op::Concat, parts.to_vec(), c)
    }

    pub fn global_avg_pool(&mut self, name: &str, x: NodeId) -> NodeId {
        let c = self.channels(x);
        self.push(name.into(), Op::GlobalAvgPool, vec![x], c)
    }

    pub fn resize_like(&mut self, name: &str, x: NodeId, reference: NodeId) -> NodeId {
        let c = self.channels(x);
        self.push(name.into(), Op::ResizeLike, vec![x, reference], c)
    }

    /// `conv → bn → relu` with nodes `{p}`, `{p}_bn`, `{p}_relu`.
    pub fn conv_bn_relu(&mut self, p: &str, x: NodeId, out: usize, kernel: usize, stride: usize, rate: usize) -> NodeId {
        let c = self.conv(p, x, out, kernel, stride, rate, false);
        let b = self.batch_norm(&format!("{p}_bn"), c);
        self.relu(&format!("{p}_relu"), b)
    }

    /// `depthwise → bn → relu → pointwise [→ bn → relu]` under prefix `p`.
    #[allow(clippy::too_many_arguments)]
    pub fn separable_conv(
        &mut self,
        p: &str,
        x: NodeId,
        out: usize,
        kernel: usize,
        stride: usize,
        rate: usize,
        pointwise_bn_relu: bool,
    ) -> NodeId {
        let d = self.depthwise(&format!("{p}.depthwise"), x, kernel, stride, rate);
        let d = self.batch_norm(&format!("{p}.depthwise_bn"), d);
        let d = self.relu(&format!("{p}.depthwise_relu"), d);
        if pointwise_bn_relu {
            self.conv_bn_relu(&format!("{p}.pointwise"), d, out, 1, 1, 1)
        } else {
            self.conv(&format!("{p}.pointwise"), d, out, 1, 1, 1, false)
        }
    }

    pub fn finish(self, output: NodeId, bn: BnSettings) -> Result<Graph> {
        if output >= self.nodes.len() {
            return Err(SegError::Plan("graph output is not a node".into()));
        }
        Ok(Graph { nodes: self.nodes, output, bn, marks: self.marks })
    }
}
