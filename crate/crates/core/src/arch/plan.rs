//! Output-stride planning.
//!
//! Blocks are scanned in order. Once the cumulative stride would exceed the
//! target, the block's striding is removed and the running atrous rate is
//! multiplied by the removed stride; every later convolution inherits it.

use crate::arch::spec::{ArchSpec, BlockSpec};
use crate::error::{Result, SegError};

#[derive(Clone, Debug, PartialEq)]
pub struct PlannedBlock {
    pub index: usize,
    pub spec: BlockSpec,
    /// Stride actually applied (1 when the striding was removed).
    pub effective_stride: usize,
    /// Rate for the block's convolutions up to and including the strided one.
    pub input_rate: usize,
    /// Rate after the block: nominal cumulative stride / effective cumulative stride.
    pub rate: usize,
    pub nominal_cum_stride: usize,
    pub effective_cum_stride: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TapName {
    Conv2,
    Conv3,
}

impl TapName {
    pub fn nominal_stride(&self) -> usize {
        match self {
            TapName::Conv2 => 4,
            TapName::Conv3 => 8,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            TapName::Conv2 => "conv2",
            TapName::Conv3 => "conv3",
        }
    }
}

/// A low-level feature exposed to the decoder: the output of `block`, the
/// last block at the tap's nominal stride (the feature map before striding).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TapPoint {
    pub name: TapName,
    pub block: usize,
    pub output_stride: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlannedArch {
    pub target_output_stride: usize,
    pub blocks: Vec<PlannedBlock>,
    pub taps: Vec<TapPoint>,
    /// ASPP rates at the planned output stride.
    pub aspp_rates: Vec<usize>,
}

impl PlannedArch {
    pub fn tap(&self, name: TapName) -> Result<TapPoint> {
        self.taps
            .iter()
            .copied()
            .find(|t| t.name == name)
            .ok_or_else(|| SegError::Plan(format!("backbone has no {} tap (no feature map at output stride {})", name.as_str(), name.nominal_stride())))
    }

    pub fn output_stride(&self) -> usize {
        self.blocks.last().map_or(1, |b| b.effective_cum_stride)
    }

    pub fn effective_strides(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.effective_stride).collect()
    }

    pub fn rates(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.rate).collect()
    }
}

/// Scales rates given at output stride 16 to `output_stride`, rounding up.
pub fn scale_aspp_rates(rates: &[usize], output_stride: usize) -> Vec<usize> {
    rates.iter().map(|&r| ((r * 16).div_ceil(output_stride)).max(1)).collect()
}

pub fn plan_output_stride(spec: &ArchSpec) -> Result<PlannedArch> {
    plan_blocks(&spec.blocks(), spec.target_output_stride, &spec.aspp_rates)
}

pub fn plan_blocks(blocks: &[BlockSpec], target: usize, aspp_rates: &[usize]) -> Result<PlannedArch> {
    let product: usize = blocks.iter().map(|b| b.nominal_stride).product();
    if target == 0 || target > product || product % target != 0 {
        return Err(SegError::Plan(format!(
            "output stride {target} is not reachable with nominal stride product {product}"
        )));
    }
    let mut nominal = 1;
    let mut effective = 1;
    let mut rate = 1;
    let mut planned = Vec::with_capacity(blocks.len());
    for (index, b) in blocks.iter().enumerate() {
        let input_rate = rate;
        let effective_stride = if effective * b.nominal_stride > target {
            rate *= b.nominal_stride;
            1
        } else {
            effective *= b.nominal_stride;
            b.nominal_stride
        };
        nominal *= b.nominal_stride;
        planned.push(PlannedBlock {
            index,
            spec: *b,
            effective_stride,
            input_rate,
            rate,
            nominal_cum_stride: nominal,
            effective_cum_stride: effective,
        });
    }
    if effective != target {
        return Err(SegError::Plan(format!("planned output stride {effective} differs from target {target}")));
    }
    let mut taps = Vec::new();
    for name in [TapName::Conv2, TapName::Conv3] {
        if let Some(b) = planned.iter().rev().find(|b| b.nominal_cum_stride == name.nominal_stride()) {
            taps.push(TapPoint { name, block: b.index, output_stride: b.effective_cum_stride });
        }
    }
    Ok(PlannedArch {
        target_output_stride: target,
        blocks: planned,
        taps,
        aspp_rates: scale_aspp_rates(aspp_rates, target),
    })
}
