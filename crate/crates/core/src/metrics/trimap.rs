//! Boundary accuracy: mIOU restricted to a band around void annotations.

use log::warn;

use crate::error::{Result, SegError};
use crate::label::{LabelMap, VOID};
use crate::metrics::ConfusionMatrix;

/// One-dimensional squared distance transform (lower envelope of
/// parabolas rooted at the finite entries of `f`).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let mut k = 0usize;
    let mut sites = 0usize;
    for q in 0..f.len() {
        if !f[q].is_finite() {
            continue;
        }
        let mut s = f64::NEG_INFINITY;
        if sites > 0 {
            loop {
                let p = v[k];
                s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
                if s > z[k] {
                    break;
                }
                k -= 1;
            }
            k += 1;
        }
        sites = k + 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    if sites == 0 {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Squared Euclidean distance from every pixel to the nearest void pixel
/// (infinite when the map has none).
pub fn void_distance_sq(gt: &LabelMap) -> Vec<f64> {
    let (h, w) = (gt.height(), gt.width());
    let m = h.max(w);
    let (mut v, mut z) = (vec![0usize; m], vec![0.0; m + 1]);
    let mut grid: Vec<f64> = gt.data().iter().map(|&l| if l == VOID { 0.0 } else { f64::INFINITY }).collect();
    let mut col = vec![0.0; h];
    let mut out = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = grid[y * w + x];
        }
        edt_1d(&col, &mut out, &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = out[y];
        }
    }
    let mut row = vec![0.0; w];
    for y in 0..h {
        edt_1d(&grid[y * w..(y + 1) * w], &mut row, &mut v, &mut z);
        grid[y * w..(y + 1) * w].copy_from_slice(&row);
    }
    grid
}

/// Non-void pixels within Euclidean distance `width` of a void pixel.
pub fn trimap_band(gt: &LabelMap, width: usize) -> Vec<bool> {
    let r2 = (width * width) as f64;
    void_distance_sq(gt).iter().zip(gt.data()).map(|(&d, &l)| l != VOID && d <= r2).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrimapScore {
    pub width: usize,
    pub pixels: u64,
    /// `None` when the band is empty (or no class is defined inside it).
    pub miou: Option<f64>,
}

/// Per-width confusion matrices accumulated over many images.
#[derive(Clone, Debug)]
pub struct TrimapAccumulator {
    widths: Vec<usize>,
    matrices: Vec<ConfusionMatrix>,
}

impl TrimapAccumulator {
    pub fn new(num_classes: usize, widths: &[usize]) -> Self {
        Self { widths: widths.to_vec(), matrices: widths.iter().map(|_| ConfusionMatrix::new(num_classes)).collect() }
    }

    pub fn add(&mut self, gt: &LabelMap, pred: &LabelMap) -> Result<()> {
        if gt.height() != pred.height() || gt.width() != pred.width() {
            return Err(SegError::Shape("trimap ground truth and prediction differ in size".into()));
        }
        let dist = void_distance_sq(gt);
        for (&w, cm) in self.widths.iter().zip(&mut self.matrices) {
            let r2 = (w * w) as f64;
            cm.add_where(gt, pred, |i| dist[i] <= r2)?;
        }
        Ok(())
    }

    pub fn scores(&self) -> Vec<TrimapScore> {
        self.widths
            .iter()
            .zip(&self.matrices)
            .map(|(&width, cm)| {
                let pixels = cm.total();
                let miou = cm.miou().ok().map(|r| r.miou);
                if miou.is_none() {
                    warn!("trimap band of width {width} is empty; skipped");
                }
                TrimapScore { width, pixels, miou }
            })
            .collect()
    }
}

/// mIOU inside the trimap band for each width, for one image pair.
pub fn trimap_miou(gt: &LabelMap, pred: &LabelMap, num_classes: usize, widths: &[usize]) -> Result<Vec<TrimapScore>> {
    let mut acc = TrimapAccumulator::new(num_classes, widths);
    acc.add(gt, pred)?;
    Ok(acc.scores())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn void_column_band() {
        let mut data = vec![0u8; 25];
        for y in 0..5 {
            data[y * 5 + 2] = VOID;
            data[y * 5 + 3] = 1;
            data[y * 5 + 4] = 1;
        }
        let gt = LabelMap::new(5, 5, data).unwrap();
        let band = trimap_band(&gt, 1);
        for y in 0..5 {
            for x in 0..5 {
                assert_eq!(band[y * 5 + x], x == 1 || x == 3, "({y},{x})");
            }
        }
        let s = trimap_miou(&gt, &gt, 2, &[1]).unwrap();
        assert_eq!(s[0].pixels, 10);
        assert_eq!(s[0].miou, Some(1.0));
    }

    #[test]
    fn no_void_means_empty_band() {
        let gt = LabelMap::filled(4, 4, 1);
        let s = trimap_miou(&gt, &gt, 2, &[3]).unwrap();
        assert_eq!(s[0], TrimapScore { width: 3, pixels: 0, miou: None });
    }
}
