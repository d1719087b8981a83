//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use atrous_seg::arch::spec::{parse_bool, parse_list, parse_num};
use atrous_seg::arch::ArchSpec;
use atrous_seg::data::AugmentConfig;
use atrous_seg::optim;
use atrous_seg::{Result, SegError};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub power: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub max_iter: usize,
    pub batch: usize,
    pub crop: usize,
    pub scale_lo: f64,
    pub scale_hi: f64,
    pub hflip_prob: f64,
    /// 0 writes a checkpoint only at the end.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: optim::DEFAULT_BASE_LR,
            power: optim::DEFAULT_POLY_POWER,
            momentum: optim::DEFAULT_MOMENTUM,
            weight_decay: optim::DEFAULT_WEIGHT_DECAY,
            max_iter: 3000,
            batch: 8,
            crop: 64,
            scale_lo: 0.5,
            scale_hi: 2.0,
            hflip_prob: 0.5,
            checkpoint_every: 1000,
        }
    }
}

impl TrainConfig {
    pub fn augment(&self) -> AugmentConfig {
        AugmentConfig { crop: self.crop, scale_lo: self.scale_lo, scale_hi: self.scale_hi, hflip_prob: self.hflip_prob }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    /// 0 evaluates at the training output stride.
    pub output_stride: usize,
    pub ms_scales: Vec<f64>,
    pub flip: bool,
    pub trimap_widths: Vec<usize>,
    pub batch: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { output_stride: 0, ms_scales: vec![1.0], flip: false, trimap_widths: vec![1, 3, 5, 9], batch: 8 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataSource {
    /// Generated shape images; evaluation uses the images after the training ones.
    Shapes,
    Manifest,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    pub train_manifest: String,
    pub eval_manifest: String,
    pub shapes_train: usize,
    pub shapes_eval: usize,
    pub shapes_side: usize,
    pub shapes_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Shapes,
            train_manifest: String::new(),
            eval_manifest: String::new(),
            shapes_train: 200,
            shapes_eval: 50,
            shapes_side: 64,
            shapes_seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub arch: ArchSpec,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub data: DataConfig,
    pub seed: u64,
    /// Directory relative manifest paths resolve against. Not serialized.
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            arch: ArchSpec::toy_xception(4),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            data: DataConfig::default(),
            seed: 7,
            base_dir: PathBuf::new(),
        }
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SegError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Parses config text over the defaults. Unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| SegError::Config(format!("line {}: expected `key = value`, got `{line}`", i + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| match e {
                    SegError::Config(m) => SegError::Config(format!("line {}: {m}", i + 1)),
                    other => other,
                })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        if self.arch.apply(key, v)? {
            return Ok(());
        }
        let t = &mut self.train;
        let e = &mut self.eval;
        let d = &mut self.data;
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "train.base_lr" => t.base_lr = parse_num(key, v)?,
            "train.power" => t.power = parse_num(key, v)?,
            "train.momentum" => t.momentum = parse_num(key, v)?,
            "train.weight_decay" => t.weight_decay = parse_num(key, v)?,
            "train.max_iter" => t.max_iter = parse_num(key, v)?,
            "train.batch" => t.batch = parse_num(key, v)?,
            "train.crop" => t.crop = parse_num(key, v)?,
            "train.scale_lo" => t.scale_lo = parse_num(key, v)?,
            "train.scale_hi" => t.scale_hi = parse_num(key, v)?,
            "train.hflip_prob" => t.hflip_prob = parse_num(key, v)?,
            "train.checkpoint_every" => t.checkpoint_every = parse_num(key, v)?,
            "eval.output_stride" => e.output_stride = parse_num(key, v)?,
            "eval.ms_scales" => e.ms_scales = parse_list(v)?,
            "eval.flip" => e.flip = parse_bool(key, v)?,
            "eval.trimap_widths" => e.trimap_widths = parse_list(v)?,
            "eval.batch" => e.batch = parse_num(key, v)?,
            "data.source" => {
                d.source = match v {
                    "shapes" => DataSource::Shapes,
                    "manifest" => DataSource::Manifest,
                    _ => return Err(SegError::Config(format!("`data.source` must be shapes or manifest, got `{v}`"))),
                }
            }
            "data.train_manifest" => d.train_manifest = v.to_string(),
            "data.eval_manifest" => d.eval_manifest = v.to_string(),
            "data.shapes_train" => d.shapes_train = parse_num(key, v)?,
            "data.shapes_eval" => d.shapes_eval = parse_num(key, v)?,
            "data.shapes_side" => d.shapes_side = parse_num(key, v)?,
            "data.shapes_seed" => d.shapes_seed = parse_num(key, v)?,
            _ => return Err(SegError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let t = &self.train;
        let bad = |m: String| Err(SegError::Config(m));
        if !(t.base_lr > 0.0) || !(t.power > 0.0) || t.max_iter == 0 {
            return bad("train.base_lr and train.power must be > 0 and train.max_iter >= 1".into());
        }
        if !(0.0..1.0).contains(&t.momentum) || !(t.weight_decay >= 0.0) {
            return bad("train.momentum must be in [0,1) and train.weight_decay >= 0".into());
        }
        if t.batch == 0 || self.eval.batch == 0 {
            return bad("batch sizes must be >= 1".into());
        }
        t.augment().validate()?;
        if self.eval.ms_scales.is_empty() || self.eval.ms_scales.iter().any(|s| !(*s > 0.0)) {
            return bad("eval.ms_scales must list positive scales".into());
        }
        if self.eval.output_stride != 0 && !matches!(self.eval.output_stride, 4 | 8 | 16 | 32) {
            return bad(format!("eval.output_stride must be 0, 4, 8, 16 or 32, got {}", self.eval.output_stride));
        }
        Ok(())
    }

    /// Output stride used for evaluation.
    pub fn eval_os(&self) -> usize {
        if self.eval.output_stride == 0 {
            self.arch.target_output_stride
        } else {
            self.eval.output_stride
        }
    }

    pub fn resolve(&self, p: &str) -> PathBuf {
        self.base_dir.join(p)
    }

    /// Canonical text form; parsing it gives back the same config.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let e = &self.eval;
        let d = &self.data;
        let mut entries = vec![("seed".to_string(), self.seed.to_string())];
        entries.extend(self.arch.to_config());
        entries.extend([
            ("train.base_lr".into(), t.base_lr.to_string()),
            ("train.power".into(), t.power.to_string()),
            ("train.momentum".into(), t.momentum.to_string()),
            ("train.weight_decay".into(), t.weight_decay.to_string()),
            ("train.max_iter".into(), t.max_iter.to_string()),
            ("train.batch".into(), t.batch.to_string()),
            ("train.crop".into(), t.crop.to_string()),
            ("train.scale_lo".into(), t.scale_lo.to_string()),
            ("train.scale_hi".into(), t.scale_hi.to_string()),
            ("train.hflip_prob".into(), t.hflip_prob.to_string()),
            ("train.checkpoint_every".into(), t.checkpoint_every.to_string()),
            ("eval.output_stride".into(), e.output_stride.to_string()),
            ("eval.ms_scales".into(), join(&e.ms_scales)),
            ("eval.flip".into(), e.flip.to_string()),
            ("eval.trimap_widths".into(), join(&e.trimap_widths)),
            ("eval.batch".into(), e.batch.to_string()),
            (
                "data.source".into(),
                match d.source {
                    DataSource::Shapes => "shapes".into(),
                    DataSource::Manifest => "manifest".into(),
                },
            ),
            ("data.train_manifest".into(), d.train_manifest.clone()),
            ("data.eval_manifest".into(), d.eval_manifest.clone()),
            ("data.shapes_train".into(), d.shapes_train.to_string()),
            ("data.shapes_eval".into(), d.shapes_eval.to_string()),
            ("data.shapes_side".into(), d.shapes_side.to_string()),
            ("data.shapes_seed".into(), d.shapes_seed.to_string()),
        ]);
        let mut out = String::new();
        for (k, v) in entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut cfg = RunConfig::default();
        cfg.set("decoder.reduce_channels", "16").unwrap();
        cfg.set("eval.ms_scales", "0.5, 1, 1.5").unwrap();
        cfg.set("data.train_manifest", "train/manifest.tsv").unwrap();
        let back = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_text(), cfg.to_text());
    }

    #[test]
    fn unknown_key_names_the_key() {
        let err = RunConfig::parse("# hi\nseed = 3\ndecoder.bogus = 1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("decoder.bogus") && msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn comments_and_blank_lines() {
        let cfg = RunConfig::parse("\n  # comment\ntrain.max_iter = 10 # trailing\n").unwrap();
        assert_eq!(cfg.train.max_iter, 10);
        assert!(RunConfig::parse("train.max_iter 10").is_err());
        assert!(RunConfig::parse("train.max_iter = 0").is_err());
    }
}
