//! Declarative network description, before output-stride planning.

use std::fmt;
use std::str::FromStr;

use crate::error::{Result, SegError};
use crate::ops::{DEFAULT_EPS, DEFAULT_MOMENTUM};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockKind {
    /// 3×3 convolution + BN + ReLU.
    StandardConv,
    /// Depthwise 3×3 + BN + ReLU, then pointwise (+ BN + ReLU).
    SeparableConv,
    /// Two 3×3 convolutions with a shortcut.
    ResidualUnit,
    /// Three separable convolutions with a shortcut; the last one carries the stride.
    XceptionUnit,
}

impl BlockKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BlockKind::StandardConv => "standard_conv",
            BlockKind::SeparableConv => "separable_conv",
            BlockKind::ResidualUnit => "residual_unit",
            BlockKind::XceptionUnit => "xception_unit",
        }
    }
}

impl FromStr for BlockKind {
    type Err = SegError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "standard_conv" => BlockKind::StandardConv,
            "separable_conv" => BlockKind::SeparableConv,
            "residual_unit" => BlockKind::ResidualUnit,
            "xception_unit" => BlockKind::XceptionUnit,
            other => return Err(SegError::Config(format!("unknown block kind `{other}`"))),
        })
    }
}

/// `repeats` units of `kind`; the first unit carries `nominal_stride`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub repeats: usize,
    pub channels: usize,
    pub nominal_stride: usize,
    pub has_skip: bool,
}

impl BlockSpec {
    pub const fn new(kind: BlockKind, channels: usize, nominal_stride: usize, repeats: usize) -> Self {
        let has_skip = matches!(kind, BlockKind::ResidualUnit | BlockKind::XceptionUnit);
        Self { kind, repeats, channels, nominal_stride, has_skip }
    }

    fn validate(&self) -> Result<()> {
        if !matches!(self.nominal_stride, 1 | 2) {
            return Err(SegError::Config(format!("block stride must be 1 or 2, got {}", self.nominal_stride)));
        }
        if self.channels == 0 || self.repeats == 0 {
            return Err(SegError::Config("block channels and repeats must be >= 1".into()));
        }
        Ok(())
    }
}

/// `kind:channels:stride:repeats[:skip|:noskip]`
impl fmt::Display for BlockSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}:{}:{}:{}",
            self.kind.as_str(),
            self.channels,
            self.nominal_stride,
            self.repeats,
            if self.has_skip { "skip" } else { "noskip" }
        )
    }
}

impl FromStr for BlockSpec {
    type Err = SegError;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').map(str::trim).collect();
        if !(4..=5).contains(&parts.len()) {
            return Err(SegError::Config(format!("block `{s}` is not kind:channels:stride:repeats[:skip]")));
        }
        let kind: BlockKind = parts[0].parse()?;
        let num = |i: usize| -> Result<usize> {
            parts[i].parse().map_err(|_| SegError::Config(format!("bad number `{}` in block `{s}`", parts[i])))
        };
        let mut b = BlockSpec::new(kind, num(1)?, num(2)?, num(3)?);
        if let Some(flag) = parts.get(4) {
            b.has_skip = match *flag {
                "skip" => true,
                "noskip" => false,
                other => return Err(SegError::Config(format!("bad skip flag `{other}`"))),
            };
        }
        b.validate()?;
        Ok(b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LowLevelTaps {
    Conv2,
    Conv2Conv3,
}

impl LowLevelTaps {
    pub fn as_str(&self) -> &'static str {
        match self {
            LowLevelTaps::Conv2 => "conv2",
            LowLevelTaps::Conv2Conv3 => "conv2+conv3",
        }
    }
}

impl FromStr for LowLevelTaps {
    type Err = SegError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "conv2" => Ok(LowLevelTaps::Conv2),
            "conv2+conv3" => Ok(LowLevelTaps::Conv2Conv3),
            other => Err(SegError::Config(format!("unknown decoder taps `{other}`"))),
        }
    }
}

/// One `[k×k, f]` refinement convolution of the decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct HeadConv {
    pub kernel: usize,
    pub filters: usize,
}

impl fmt::Display for HeadConv {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.kernel, self.filters)
    }
}

impl FromStr for HeadConv {
    type Err = SegError;

    fn from_str(s: &str) -> Result<Self> {
        let (k, f) = s
            .trim()
            .split_once('x')
            .ok_or_else(|| SegError::Config(format!("decoder conv `{s}` is not KxF")))?;
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| SegError::Config(format!("bad decoder conv `{s}`")));
        let h = HeadConv { kernel: parse(k)?, filters: parse(f)? };
        if h.kernel % 2 == 0 || h.filters == 0 {
            return Err(SegError::Config(format!("decoder conv `{s}` needs an odd kernel and >= 1 filter")));
        }
        Ok(h)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArchSpec {
    pub in_channels: usize,
    pub stem: Vec<BlockSpec>,
    pub body: Vec<BlockSpec>,
    /// Adds extra stride-1 entry-flow units after the stem.
    pub deep_entry: bool,
    pub target_output_stride: usize,
    /// ASPP rates expressed at output stride 16; rescaled for other strides.
    pub aspp_rates: Vec<usize>,
    pub aspp_image_level: bool,
    pub aspp_channels: usize,
    pub decoder_enabled: bool,
    pub decoder_reduce_channels: usize,
    pub decoder_conv_structure: Vec<HeadConv>,
    pub decoder_low_level_taps: LowLevelTaps,
    pub separable_heads: bool,
    /// Batch norm + ReLU after the pointwise stage of backbone separable convs.
    pub pointwise_bn_relu: bool,
    pub num_classes: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub bn_frozen: bool,
}

impl Default for ArchSpec {
    fn default() -> Self {
        Self::toy_xception(4)
    }
}

impl ArchSpec {
    /// Xception-style toy backbone: stride-4 separable stem, three body
    /// stages of two units each, widths 32/64/128/256.
    pub fn toy_xception(num_classes: usize) -> Self {
        use BlockKind::*;
        Self {
            in_channels: 3,
            stem: vec![BlockSpec::new(SeparableConv, 32, 2, 1), BlockSpec::new(SeparableConv, 32, 2, 1)],
            body: vec![
                BlockSpec::new(XceptionUnit, 64, 2, 2),
                BlockSpec::new(XceptionUnit, 128, 2, 2),
                BlockSpec::new(XceptionUnit, 256, 2, 2),
            ],
            deep_entry: false,
            target_output_stride: 16,
            aspp_rates: vec![6, 12, 18],
            aspp_image_level: true,
            aspp_channels: 256,
            decoder_enabled: true,
            decoder_reduce_channels: 48,
            decoder_conv_structure: vec![HeadConv { kernel: 3, filters: 256 }; 2],
            decoder_low_level_taps: LowLevelTaps::Conv2,
            separable_heads: true,
            pointwise_bn_relu: true,
            num_classes,
            bn_eps: DEFAULT_EPS,
            bn_momentum: DEFAULT_MOMENTUM,
            bn_frozen: false,
        }
    }

    /// Residual-style toy backbone with the same stride layout.
    pub fn toy_resnet(num_classes: usize) -> Self {
        use BlockKind::*;
        Self {
            stem: vec![BlockSpec::new(StandardConv, 32, 2, 1), BlockSpec::new(StandardConv, 32, 2, 1)],
            body: vec![
                BlockSpec::new(ResidualUnit, 64, 2, 2),
                BlockSpec::new(ResidualUnit, 128, 2, 2),
                BlockSpec::new(ResidualUnit, 256, 2, 2),
            ],
            separable_heads: false,
            ..Self::toy_xception(num_classes)
        }
    }

    /// Divides every channel width by `divisor` (at least 1 channel each).
    /// Keeps the topology; used for narrow test instances.
    pub fn scale_widths(&mut self, divisor: usize) {
        let d = |c: usize| (c / divisor.max(1)).max(1);
        for b in self.stem.iter_mut().chain(self.body.iter_mut()) {
            b.channels = d(b.channels);
        }
        self.aspp_channels = d(self.aspp_channels);
        self.decoder_reduce_channels = d(self.decoder_reduce_channels);
        for h in &mut self.decoder_conv_structure {
            h.filters = d(h.filters);
        }
    }

    /// Stem, optional extra entry-flow units, then body.
    pub fn blocks(&self) -> Vec<BlockSpec> {
        let mut out = self.stem.clone();
        if self.deep_entry {
            let width = self.stem.last().map_or(32, |b| b.channels);
            out.push(BlockSpec::new(BlockKind::XceptionUnit, width, 1, 2));
        }
        out.extend(self.body.iter().copied());
        out
    }

    pub fn nominal_stride_product(&self) -> usize {
        self.blocks().iter().map(|b| b.nominal_stride).product()
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(SegError::Config(m));
        if self.in_channels == 0 || self.num_classes == 0 {
            return cfg("in_channels and num_classes must be >= 1".into());
        }
        if self.stem.is_empty() && self.body.is_empty() {
            return cfg("backbone has no blocks".into());
        }
        for b in self.blocks() {
            b.validate()?;
        }
        if !matches!(self.target_output_stride, 4 | 8 | 16 | 32) {
            return cfg(format!("output stride must be one of 4, 8, 16, 32, got {}", self.target_output_stride));
        }
        if self.aspp_rates.is_empty() || self.aspp_rates.contains(&0) {
            return cfg("aspp rates must be non-empty and >= 1".into());
        }
        if self.aspp_channels == 0 {
            return cfg("aspp channels must be >= 1".into());
        }
        if self.decoder_reduce_channels == 0 {
            return cfg("decoder reduce channels must be >= 1".into());
        }
        if self.decoder_enabled && self.decoder_conv_structure.is_empty() {
            return cfg("decoder structure must list at least one conv".into());
        }
        if !(self.bn_eps > 0.0) || !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) {
            return cfg(format!("bn eps must be > 0 and momentum in (0,1), got {} / {}", self.bn_eps, self.bn_momentum));
        }
        Ok(())
    }

    /// Flat `key = value` form, in a fixed key order.
    pub fn to_config(&self) -> Vec<(String, String)> {
        let join = |v: Vec<String>| v.join(", ");
        vec![
            ("arch.in_channels".into(), self.in_channels.to_string()),
            ("arch.stem".into(), join(self.stem.iter().map(ToString::to_string).collect())),
            ("arch.body".into(), join(self.body.iter().map(ToString::to_string).collect())),
            ("arch.deep_entry".into(), self.deep_entry.to_string()),
            ("arch.output_stride".into(), self.target_output_stride.to_string()),
            ("arch.num_classes".into(), self.num_classes.to_string()),
            ("arch.separable_heads".into(), self.separable_heads.to_string()),
            ("arch.pointwise_bn_relu".into(), self.pointwise_bn_relu.to_string()),
            ("aspp.rates".into(), join(self.aspp_rates.iter().map(ToString::to_string).collect())),
            ("aspp.image_level".into(), self.aspp_image_level.to_string()),
            ("aspp.channels".into(), self.aspp_channels.to_string()),
            ("decoder.enabled".into(), self.decoder_enabled.to_string()),
            ("decoder.reduce_channels".into(), self.decoder_reduce_channels.to_string()),
            ("decoder.structure".into(), join(self.decoder_conv_structure.iter().map(ToString::to_string).collect())),
            ("decoder.taps".into(), self.decoder_low_level_taps.as_str().into()),
            ("bn.eps".into(), format!("{:e}", self.bn_eps)),
            ("bn.momentum".into(), self.bn_momentum.to_string()),
            ("bn.frozen".into(), self.bn_frozen.to_string()),
        ]
    }

    /// Applies one config entry. Returns `Ok(false)` when the key is not an
    /// architecture key.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<bool> {
        let v = value.trim();
        match key {
            "arch.in_channels" => self.in_channels = parse_num(key, v)?,
            "arch.stem" => self.stem = parse_list(v)?,
            "arch.body" => self.body = parse_list(v)?,
            "arch.deep_entry" => self.deep_entry = parse_bool(key, v)?,
            "arch.output_stride" => self.target_output_stride = parse_num(key, v)?,
            "arch.num_classes" => self.num_classes = parse_num(key, v)?,
            "arch.separable_heads" => self.separable_heads = parse_bool(key, v)?,
            "arch.pointwise_bn_relu" => self.pointwise_bn_relu = parse_bool(key, v)?,
            "aspp.rates" => self.aspp_rates = parse_list(v)?,
            "aspp.image_level" => self.aspp_image_level = parse_bool(key, v)?,
            "aspp.channels" => self.aspp_channels = parse_num(key, v)?,
            "decoder.enabled" => self.decoder_enabled = parse_bool(key, v)?,
            "decoder.reduce_channels" => self.decoder_reduce_channels = parse_num(key, v)?,
            "decoder.structure" => self.decoder_conv_structure = parse_list(v)?,
            "decoder.taps" => self.decoder_low_level_taps = v.parse()?,
            "bn.eps" => self.bn_eps = parse_num(key, v)?,
            "bn.momentum" => self.bn_momentum = parse_num(key, v)?,
            "bn.frozen" => self.bn_frozen = parse_bool(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

pub fn parse_num<N: FromStr>(key: &str, v: &str) -> Result<N> {
    v.trim().parse().map_err(|_| SegError::Config(format!("`{key}`: cannot parse `{v}`")))
}

pub fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(SegError::Config(format!("`{key}`: expected a boolean, got `{v}`"))),
    }
}

/// Comma-separated list; an empty value is an empty list.
pub fn parse_list<E: FromStr>(v: &str) -> Result<Vec<E>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<E>().map_err(|_| SegError::Config(format!("cannot parse list item `{s}`"))))
        .collect()
}
