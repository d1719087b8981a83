//! Ablation sweeps laid out like the decoder and inference-strategy tables.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::str::FromStr;

use log::info;

use atrous_seg::arch::{HeadConv, LowLevelTaps};
use atrous_seg::data::Sample;
use atrous_seg::{Params, Result, SegError};

use crate::config::RunConfig;
use crate::evaluate::{evaluate, EvalOptions};
use crate::train::train;

pub const DEFAULT_MS_SCALES: [f64; 6] = [0.5, 0.75, 1.0, 1.25, 1.5, 1.75];
pub const REDUCE_CHANNELS: [usize; 5] = [8, 16, 32, 48, 64];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    ReduceChannels,
    DecoderStructure,
    OsMatrix,
    Sc,
}

impl Axis {
    pub fn as_str(&self) -> &'static str {
        match self {
            Axis::ReduceChannels => "reduce_channels",
            Axis::DecoderStructure => "decoder_structure",
            Axis::OsMatrix => "os_matrix",
            Axis::Sc => "sc",
        }
    }
}

impl FromStr for Axis {
    type Err = SegError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reduce_channels" => Ok(Axis::ReduceChannels),
            "decoder_structure" => Ok(Axis::DecoderStructure),
            "os_matrix" => Ok(Axis::OsMatrix),
            "sc" => Ok(Axis::Sc),
            _ => Err(SegError::Config(format!(
                "unknown ablation axis `{s}` (expected reduce_channels, decoder_structure, os_matrix or sc)"
            ))),
        }
    }
}

/// A finished table: header, rows, and the index of the best mIOU row.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub miou: Vec<f64>,
    pub best: usize,
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{},best", self.header.join(","));
        for (i, r) in self.rows.iter().enumerate() {
            let _ = writeln!(out, "{},{}", r.join(","), if i == self.best { "*" } else { "" });
        }
        out
    }
}

/// The channel sweep is printed transposed, as a header row of channel
/// counts and one row of scores.
pub fn transposed_csv(t: &Table) -> String {
    let mut out = String::from("Channels");
    for r in &t.rows {
        out.push(',');
        out.push_str(&r[0]);
    }
    out.push_str("\nmIOU");
    for r in &t.rows {
        out.push(',');
        out.push_str(&r[1]);
    }
    out.push_str("\nbest");
    for i in 0..t.rows.len() {
        out.push_str(if i == t.best { ",*" } else { "," });
    }
    out.push('\n');
    out
}

fn pct(v: f64) -> String {
    format!("{:.2}%", 100.0 * v)
}

fn check(b: bool) -> String {
    if b { "x".into() } else { String::new() }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Trains each distinct configuration once.
struct Trainer<'a> {
    train: &'a [Sample],
    cache: HashMap<String, Params>,
}

impl Trainer<'_> {
    fn params(&mut self, cfg: &RunConfig) -> Result<Params> {
        let key = cfg.arch.to_config().iter().map(|(k, v)| format!("{k}={v}\n")).collect::<String>();
        if let Some(p) = self.cache.get(&key) {
            return Ok(p.clone());
        }
        info!("training ablation variant ({} iterations)", cfg.train.max_iter);
        let p = train(cfg, self.train, None, None)?.params;
        self.cache.insert(key, p.clone());
        Ok(p)
    }
}

fn ms_scales(base: &RunConfig) -> Vec<f64> {
    if base.eval.ms_scales.len() > 1 {
        base.eval.ms_scales.clone()
    } else {
        DEFAULT_MS_SCALES.to_vec()
    }
}

fn structure_label(s: &[HeadConv]) -> String {
    let first = s[0];
    let unit = format!("[{0}x{0}; {1}]", first.kernel, first.filters);
    if s.len() == 1 {
        unit
    } else {
        format!("{unit} x {}", s.len())
    }
}

pub fn run(base: &RunConfig, axis: Axis, train_set: &[Sample], eval_set: &[Sample]) -> Result<Table> {
    let mut trainer = Trainer { train: train_set, cache: HashMap::new() };
    let opts = |os: usize, scales: Vec<f64>, flip: bool| EvalOptions {
        output_stride: os,
        scales,
        flip,
        trimap_widths: vec![],
        batch: base.eval.batch,
    };
    let single = vec![1.0];
    let (header, rows, miou): (Vec<&str>, Vec<Vec<String>>, Vec<f64>) = match axis {
        Axis::ReduceChannels => {
            let mut rows = Vec::new();
            let mut miou = Vec::new();
            for c in REDUCE_CHANNELS {
                let mut cfg = base.clone();
                cfg.arch.decoder_enabled = true;
                cfg.arch.decoder_low_level_taps = LowLevelTaps::Conv2;
                cfg.arch.decoder_reduce_channels = c;
                let p = trainer.params(&cfg)?;
                let r = evaluate(&cfg.arch, &p, eval_set, &opts(cfg.arch.target_output_stride, single.clone(), false))?;
                rows.push(vec![c.to_string(), pct(r.miou)]);
                miou.push(r.miou);
            }
            (vec!["Channels", "mIOU"], rows, miou)
        }
        Axis::DecoderStructure => {
            let h = |kernel, filters| HeadConv { kernel, filters };
            let variants: Vec<(bool, Vec<HeadConv>)> = vec![
                (false, vec![h(3, 256)]),
                (false, vec![h(3, 256); 2]),
                (false, vec![h(3, 256); 3]),
                (false, vec![h(3, 128)]),
                (false, vec![h(1, 256)]),
                (true, vec![h(3, 256)]),
            ];
            let mut rows = Vec::new();
            let mut miou = Vec::new();
            for (conv3, structure) in variants {
                let mut cfg = base.clone();
                cfg.arch.decoder_enabled = true;
                cfg.arch.decoder_reduce_channels = 48;
                cfg.arch.decoder_low_level_taps = if conv3 { LowLevelTaps::Conv2Conv3 } else { LowLevelTaps::Conv2 };
                cfg.arch.decoder_conv_structure = structure.clone();
                let p = trainer.params(&cfg)?;
                let r = evaluate(&cfg.arch, &p, eval_set, &opts(cfg.arch.target_output_stride, single.clone(), false))?;
                rows.push(vec![check(true), check(conv3), structure_label(&structure), pct(r.miou)]);
                miou.push(r.miou);
            }
            (vec!["Conv2", "Conv3", "3x3 Conv Structure", "mIOU"], rows, miou)
        }
        Axis::OsMatrix => {
            let ms = ms_scales(base);
            // (train OS, eval OS, decoder, MS, flip)
            let grid: [(usize, usize, bool, bool, bool); 14] = [
                (16, 16, false, false, false),
                (16, 8, false, false, false),
                (16, 8, false, true, false),
                (16, 8, false, true, true),
                (16, 16, true, false, false),
                (16, 16, true, true, false),
                (16, 16, true, true, true),
                (16, 8, true, false, false),
                (16, 8, true, true, false),
                (16, 8, true, true, true),
                (32, 32, false, false, false),
                (32, 32, true, false, false),
                (32, 16, true, false, false),
                (32, 8, true, false, false),
            ];
            let mut rows = Vec::new();
            let mut miou = Vec::new();
            for (train_os, eval_os, decoder, use_ms, flip) in grid {
                let mut cfg = base.clone();
                cfg.arch.target_output_stride = train_os;
                cfg.arch.decoder_enabled = decoder;
                let p = trainer.params(&cfg)?;
                let scales = if use_ms { ms.clone() } else { single.clone() };
                let r = evaluate(&cfg.arch, &p, eval_set, &opts(eval_os, scales, flip))?;
                rows.push(vec![
                    train_os.to_string(),
                    eval_os.to_string(),
                    check(decoder),
                    check(use_ms),
                    check(flip),
                    pct(r.miou),
                    r.multiply_adds.to_string(),
                ]);
                miou.push(r.miou);
            }
            (vec!["train OS", "eval OS", "Decoder", "MS", "Flip", "mIOU", "Multiply-Adds"], rows, miou)
        }
        Axis::Sc => {
            let ms = ms_scales(base);
            let mut rows = Vec::new();
            let mut miou = Vec::new();
            for sc in [false, true] {
                for (eval_os, strat) in [(16, false), (16, true), (8, false), (8, true)] {
                    let mut cfg = base.clone();
                    cfg.arch.target_output_stride = 16;
                    cfg.arch.decoder_enabled = true;
                    cfg.arch.separable_heads = sc;
                    let p = trainer.params(&cfg)?;
                    let scales = if strat { ms.clone() } else { single.clone() };
                    let r = evaluate(&cfg.arch, &p, eval_set, &opts(eval_os, scales, strat))?;
                    rows.push(vec![
                        "16".into(),
                        eval_os.to_string(),
                        check(true),
                        check(strat),
                        check(strat),
                        check(sc),
                        pct(r.miou),
                        r.multiply_adds.to_string(),
                    ]);
                    miou.push(r.miou);
                }
            }
            (vec!["train OS", "eval OS", "Decoder", "MS", "Flip", "SC", "mIOU", "Multiply-Adds"], rows, miou)
        }
    };
    let best = argmax(&miou);
    Ok(Table { header: header.into_iter().map(String::from).collect(), rows, miou, best })
}

/// CSV text for `table`, in the layout used for `axis`.
pub fn render(axis: Axis, table: &Table) -> String {
    match axis {
        Axis::ReduceChannels => transposed_csv(table),
        _ => table.to_csv(),
    }
}
