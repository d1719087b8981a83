//! Assembly of the full encoder-decoder graph: backbone, ASPP, decoder.

use crate::arch::plan::{plan_output_stride, PlannedArch, PlannedBlock, TapName};
use crate::arch::spec::{ArchSpec, BlockKind, HeadConv, LowLevelTaps};
use crate::error::{shape_err, Result, SegError};
use crate::graph::exec::{self, Mode, Trace};
use crate::graph::{BnSettings, Graph, GraphBuilder, NodeId};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor4};

/// A planned architecture and its layer graph. Parameter names do not
/// depend on the output stride, so one [`ParamStore`] serves every plan.
#[derive(Clone, Debug)]
pub struct Model {
    spec: ArchSpec,
    plan: PlannedArch,
    graph: Graph,
}

/// Knobs of the ASPP head.
#[derive(Clone, Debug, PartialEq)]
pub struct AsppConfig {
    pub rates: Vec<usize>,
    pub image_level: bool,
    pub separable: bool,
    pub channels: usize,
}

impl Model {
    pub fn new(spec: &ArchSpec) -> Result<Self> {
        Self::with_output_stride(spec, spec.target_output_stride)
    }

    /// Same weights layout, re-planned for another output stride.
    pub fn with_output_stride(spec: &ArchSpec, output_stride: usize) -> Result<Self> {
        let mut spec = spec.clone();
        spec.target_output_stride = output_stride;
        spec.validate()?;
        let plan = plan_output_stride(&spec)?;
        let graph = build_graph(&spec, &plan)?;
        Ok(Self { spec, plan, graph })
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn plan(&self) -> &PlannedArch {
        &self.plan
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn output_stride(&self) -> usize {
        self.plan.output_stride()
    }

    pub fn init_params<T: Scalar>(&self, seed: u64) -> Result<ParamStore<T>> {
        self.graph.init_params(seed)
    }

    pub fn check_input(&self, shape: Shape) -> Result<()> {
        let os = self.output_stride();
        if shape.h < os || shape.w < os {
            return shape_err(format!("input {shape} is smaller than the output stride {os}"));
        }
        if shape.c != self.spec.in_channels {
            return shape_err(format!("input {shape} does not have {} channels", self.spec.in_channels));
        }
        Ok(())
    }

    pub fn trace<T: Scalar>(&self, params: &ParamStore<T>, x: &Tensor4<T>, mode: Mode) -> Result<Trace<T>> {
        self.check_input(x.shape())?;
        exec::forward(&self.graph, params, x, mode)
    }

    /// Logits at input resolution.
    pub fn forward<T: Scalar>(&self, params: &ParamStore<T>, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        Ok(self.trace(params, x, mode)?.into_output())
    }
}

/// Full-model graph from a spec and its output-stride plan.
pub fn build_graph(spec: &ArchSpec, plan: &PlannedArch) -> Result<Graph> {
    let mut b = GraphBuilder::new(spec.in_channels);
    let (features, taps) = build_backbone(&mut b, spec, plan)?;
    b.mark("backbone", features);
    let aspp = AsppConfig {
        rates: plan.aspp_rates.clone(),
        image_level: spec.aspp_image_level,
        separable: spec.separable_heads,
        channels: spec.aspp_channels,
    };
    let encoder = build_aspp(&mut b, features, &aspp);
    b.mark("encoder", encoder);
    let head = if spec.decoder_enabled {
        build_decoder(&mut b, spec, plan, encoder, &taps)?
    } else {
        encoder
    };
    let logits = b.conv("logits", head, spec.num_classes, 1, 1, 1, true);
    b.mark("logits", logits);
    let input = b.input();
    let out = b.resize_like("upsample_logits", logits, input);
    b.finish(out, BnSettings { eps: spec.bn_eps, momentum: spec.bn_momentum, frozen: spec.bn_frozen })
}

/// Backbone blocks honoring the planned strides and rates. Returns the
/// final feature node and the low-level taps.
pub fn build_backbone(
    b: &mut GraphBuilder,
    spec: &ArchSpec,
    plan: &PlannedArch,
) -> Result<(NodeId, Vec<(TapName, NodeId)>)> {
    let mut x = b.input();
    let mut taps = Vec::new();
    for pb in &plan.blocks {
        x = build_block(b, spec, pb, x);
        for t in plan.taps.iter().filter(|t| t.block == pb.index) {
            b.mark(t.name.as_str(), x);
            taps.push((t.name, x));
        }
    }
    Ok((x, taps))
}

fn build_block(b: &mut GraphBuilder, spec: &ArchSpec, pb: &PlannedBlock, mut x: NodeId) -> NodeId {
    let bs = pb.spec;
    let ch = bs.channels;
    for u in 0..bs.repeats {
        let p = format!("backbone.block{}.unit{u}", pb.index);
        let first = u == 0;
        let stride = if first { pb.effective_stride } else { 1 };
        // Convolutions up to the (possibly removed) stride run at the incoming rate.
        let r_in = if first { pb.input_rate } else { pb.rate };
        let r_out = pb.rate;
        let cin = b.channels(x);
        let project = (first && bs.nominal_stride != 1) || cin != ch;
        let shortcut = |b: &mut GraphBuilder, x: NodeId| {
            if project {
                let s = b.conv(&format!("{p}.shortcut"), x, ch, 1, stride, 1, false);
                b.batch_norm(&format!("{p}.shortcut_bn"), s)
            } else {
                x
            }
        };
        x = match bs.kind {
            BlockKind::StandardConv => b.conv_bn_relu(&format!("{p}.conv"), x, ch, 3, stride, r_in),
            BlockKind::SeparableConv => {
                b.separable_conv(&format!("{p}.sep"), x, ch, 3, stride, r_in, spec.pointwise_bn_relu)
            }
            BlockKind::ResidualUnit => {
                let a = b.conv_bn_relu(&format!("{p}.conv1"), x, ch, 3, stride, r_in);
                let c = b.conv(&format!("{p}.conv2"), a, ch, 3, 1, r_out, false);
                let c = b.batch_norm(&format!("{p}.conv2_bn"), c);
                let sum = if bs.has_skip {
                    let s = shortcut(b, x);
                    b.add(&format!("{p}.add"), c, s)
                } else {
                    c
                };
                b.relu(&format!("{p}.relu"), sum)
            }
            BlockKind::XceptionUnit => {
                let s1 = b.separable_conv(&format!("{p}.sep1"), x, ch, 3, 1, r_in, spec.pointwise_bn_relu);
                let s2 = b.separable_conv(&format!("{p}.sep2"), s1, ch, 3, 1, r_in, spec.pointwise_bn_relu);
                let s3 = b.separable_conv(&format!("{p}.sep3"), s2, ch, 3, stride, r_in, spec.pointwise_bn_relu);
                if bs.has_skip {
                    let s = shortcut(b, x);
                    b.add(&format!("{p}.add"), s3, s)
                } else {
                    s3
                }
            }
        };
    }
    x
}

/// Parallel 1×1, atrous 3×3 (one per rate) and optional image-pooling
/// branches, concatenated and projected to `channels`.
pub fn build_aspp(b: &mut GraphBuilder, x: NodeId, cfg: &AsppConfig) -> NodeId {
    let ch = cfg.channels;
    let mut branches = vec![b.conv_bn_relu("aspp.branch0", x, ch, 1, 1, 1)];
    for (i, &rate) in cfg.rates.iter().enumerate() {
        let name = format!("aspp.branch{}", i + 1);
        branches.push(if cfg.separable {
            b.separable_conv(&name, x, ch, 3, 1, rate, true)
        } else {
            b.conv_bn_relu(&name, x, ch, 3, 1, rate)
        });
    }
    if cfg.image_level {
        let pooled = b.global_avg_pool("aspp.image_pool", x);
        let c = b.conv_bn_relu("aspp.image_conv", pooled, ch, 1, 1, 1);
        branches.push(b.resize_like("aspp.image_upsample", c, x));
    }
    let cat = b.concat("aspp.concat", &branches);
    b.conv_bn_relu("aspp.project", cat, ch, 1, 1, 1)
}

/// Stand-alone ASPP graph over a feature map with `in_channels` channels.
pub fn aspp_graph(in_channels: usize, cfg: &AsppConfig) -> Result<Graph> {
    let mut b = GraphBuilder::new(in_channels);
    let x = b.input();
    let out = build_aspp(&mut b, x, cfg);
    b.finish(out, BnSettings { eps: 1e-5, momentum: 0.1, frozen: false })
}

fn refine(b: &mut GraphBuilder, prefix: &str, mut x: NodeId, structure: &[HeadConv], separable: bool) -> NodeId {
    for (i, hc) in structure.iter().enumerate() {
        let name = format!("{prefix}.conv{i}");
        x = if separable && hc.kernel > 1 {
            b.separable_conv(&name, x, hc.filters, hc.kernel, 1, 1, true)
        } else {
            b.conv_bn_relu(&name, x, hc.filters, hc.kernel, 1, 1)
        };
    }
    x
}

/// Upsample the encoder output to a low-level tap, concatenate the
/// channel-reduced tap, refine. With two taps this happens twice,
/// coarse (Conv3) first.
pub fn build_decoder(
    b: &mut GraphBuilder,
    spec: &ArchSpec,
    plan: &PlannedArch,
    encoder: NodeId,
    taps: &[(TapName, NodeId)],
) -> Result<NodeId> {
    let stages: &[TapName] = match spec.decoder_low_level_taps {
        LowLevelTaps::Conv2 => &[TapName::Conv2],
        LowLevelTaps::Conv2Conv3 => &[TapName::Conv3, TapName::Conv2],
    };
    let encoder_os = plan.output_stride();
    let mut x = encoder;
    for &name in stages {
        let tap = plan.tap(name)?;
        if tap.output_stride > encoder_os {
            return Err(SegError::Plan(format!(
                "{} tap at output stride {} is coarser than the encoder output stride {encoder_os}",
                name.as_str(),
                tap.output_stride
            )));
        }
        let node = taps
            .iter()
            .find(|(n, _)| *n == name)
            .map(|&(_, id)| id)
            .ok_or_else(|| SegError::Plan(format!("{} tap was not built", name.as_str())))?;
        let tag = name.as_str();
        let up = b.resize_like(&format!("decoder.upsample_{tag}"), x, node);
        let low = b.conv_bn_relu(&format!("decoder.reduce_{tag}"), node, spec.decoder_reduce_channels, 1, 1, 1);
        let cat = b.concat(&format!("decoder.concat_{tag}"), &[up, low]);
        b.mark(&format!("decoder.concat_{tag}"), cat);
        x = refine(b, &format!("decoder.refine_{tag}"), cat, &spec.decoder_conv_structure, spec.separable_heads);
    }
    Ok(x)
}
