//! Random scale, crop and left-right flip.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Sample;
use crate::error::{Result, SegError};
use crate::label::{LabelMap, VOID};
use crate::tensor::Tensor4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    pub crop: usize,
    pub scale_lo: f64,
    pub scale_hi: f64,
    pub hflip_prob: f64,
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.crop == 0 {
            return Err(SegError::Config("crop must be >= 1".into()));
        }
        if !(0.25 <= self.scale_lo && self.scale_lo <= self.scale_hi && self.scale_hi <= 4.0) {
            return Err(SegError::Config(format!(
                "scale range ({}, {}) must satisfy 0.25 <= lo <= hi <= 4",
                self.scale_lo, self.scale_hi
            )));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(SegError::Config(format!("flip probability {} is outside [0,1]", self.hflip_prob)));
        }
        Ok(())
    }
}

/// Scales (bilinear image, nearest labels), pads short sides with the mean
/// image colour and void labels, crops `crop×crop`, and maybe mirrors.
pub fn augment(s: &Sample, cfg: &AugmentConfig, seed: u64) -> Result<Sample> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = rng.gen_range(cfg.scale_lo..=cfg.scale_hi);
    let (h, w) = (s.label.height(), s.label.width());
    let (sh, sw) = (((h as f64 * scale).round() as usize).max(1), ((w as f64 * scale).round() as usize).max(1));
    let image = s.image.bilinear_resize(sh, sw)?;
    let label = if (sh, sw) == (h, w) { s.label.clone() } else { s.label.resize_nearest(sh, sw) };

    let (ph, pw) = (sh.max(cfg.crop), sw.max(cfg.crop));
    let (image, label) = if (ph, pw) == (sh, sw) { (image, label) } else { pad(&image, &label, ph, pw)? };

    let oy = rng.gen_range(0..=ph - cfg.crop);
    let ox = rng.gen_range(0..=pw - cfg.crop);
    let mut out_image = Tensor4::zeros(image.shape().with_hw(cfg.crop, cfg.crop))?;
    let mut out_label = LabelMap::filled(cfg.crop, cfg.crop, VOID);
    for y in 0..cfg.crop {
        for x in 0..cfg.crop {
            for c in 0..image.shape().c {
                out_image.set(0, c, y, x, image.at(0, c, oy + y, ox + x));
            }
            out_label.set(y, x, label.get(oy + y, ox + x));
        }
    }
    let flip = rng.gen::<f64>() < cfg.hflip_prob;
    if flip {
        out_image = out_image.flip_horizontal();
        out_label = out_label.flip_horizontal();
    }
    Sample::new(out_image, out_label)
}

fn pad(image: &Tensor4<f64>, label: &LabelMap, ph: usize, pw: usize) -> Result<(Tensor4<f64>, LabelMap)> {
    let s = image.shape();
    let mut out = Tensor4::zeros(s.with_hw(ph, pw))?;
    for c in 0..s.c {
        let mean = image.plane(0, c).iter().sum::<f64>() / s.plane() as f64;
        let dst = out.plane_mut(0, c);
        dst.fill(mean);
        for y in 0..s.h {
            dst[y * pw..y * pw + s.w].copy_from_slice(&image.plane(0, c)[y * s.w..(y + 1) * s.w]);
        }
    }
    let mut l = LabelMap::filled(ph, pw, VOID);
    for y in 0..s.h {
        for x in 0..s.w {
            l.set(y, x, label.get(y, x));
        }
    }
    Ok((out, l))
}
