//! Multiply-Adds accounting.
//!
//! One multiply-add per multiply. Biases, batch norm, activations, pooling,
//! concatenation and resizes cost zero.

use std::fmt::Write as _;

use crate::arch::{scaled_size, Model};
use crate::error::Result;
use crate::graph::{Graph, Op};
use crate::tensor::Shape;

pub const COST_CONVENTION: &str =
    "multiply-adds: one per multiply; bias, batch norm, activations, pooling, concat and resize count zero";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    pub kind: &'static str,
    pub output: Shape,
    pub kernel: usize,
    pub stride: usize,
    pub rate: usize,
    pub multiply_adds: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostReport {
    pub input: Shape,
    pub records: Vec<LayerCost>,
    pub total: u64,
}

impl CostReport {
    pub fn get(&self, name: &str) -> Option<&LayerCost> {
        self.records.iter().find(|r| r.name == name)
    }

    /// Summed cost of layers whose name starts with `prefix`.
    pub fn total_with_prefix(&self, prefix: &str) -> u64 {
        self.records.iter().filter(|r| r.name.starts_with(prefix)).map(|r| r.multiply_adds).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# {COST_CONVENTION}\nlayer,kind,kernel,stride,rate,n,c,h,w,multiply_adds\n");
        for r in &self.records {
            let s = r.output;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.name, r.kind, r.kernel, r.stride, r.rate, s.n, s.c, s.h, s.w, r.multiply_adds
            );
        }
        let i = self.input;
        let _ = writeln!(out, "total,,,,,{},{},{},{},{}", i.n, i.c, i.h, i.w, self.total);
        out
    }
}

pub fn standard_conv_cost(out_h: usize, out_w: usize, k: usize, cin: usize, cout: usize) -> u64 {
    (out_h * out_w * k * k * cin * cout) as u64
}

pub fn depthwise_conv_cost(out_h: usize, out_w: usize, k: usize, channels: usize) -> u64 {
    (out_h * out_w * k * k * channels) as u64
}

pub fn pointwise_conv_cost(out_h: usize, out_w: usize, cin: usize, cout: usize) -> u64 {
    (out_h * out_w * cin * cout) as u64
}

pub fn count_graph(graph: &Graph, input: Shape) -> Result<CostReport> {
    let shapes = graph.infer_shapes(input)?;
    let mut records = Vec::new();
    for (id, node) in graph.nodes().iter().enumerate() {
        let out = shapes[id];
        let cin = node.inputs.first().map_or(0, |&i| shapes[i].c);
        let per_image = match node.op {
            Op::Conv { kernel, out_channels, .. } => standard_conv_cost(out.h, out.w, kernel, cin, out_channels),
            Op::Depthwise { kernel, .. } => depthwise_conv_cost(out.h, out.w, kernel, cin),
            _ => continue,
        };
        let g = node.op.geometry().expect("convolutions have a geometry");
        let kernel = match node.op {
            Op::Conv { kernel, .. } | Op::Depthwise { kernel, .. } => kernel,
            _ => unreachable!(),
        };
        records.push(LayerCost {
            name: node.name.clone(),
            kind: node.op.kind(),
            output: out,
            kernel,
            stride: g.stride,
            rate: g.rate,
            multiply_adds: per_image * out.n as u64,
        });
    }
    let total = records.iter().map(|r| r.multiply_adds).sum();
    Ok(CostReport { input, records, total })
}

/// Cost of one forward pass of `model` on `input`.
pub fn count_multiply_adds(model: &Model, input: Shape) -> Result<CostReport> {
    model.check_input(input)?;
    count_graph(model.graph(), input)
}

/// Total cost of a multi-scale (and optionally flipped) evaluation.
pub fn multiscale_cost(model: &Model, input: Shape, scales: &[f64], flip: bool) -> Result<u64> {
    let mut total = 0;
    for &s in scales {
        let (h, w) = scaled_size(input.h, input.w, s);
        total += count_multiply_adds(model, input.with_hw(h, w))?.total;
    }
    Ok(if flip { 2 * total } else { total })
}
