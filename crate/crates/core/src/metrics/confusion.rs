use crate::error::{Result, SegError};
use crate::label::{LabelMap, VOID};

/// `counts[g·K + p]` = pixels with ground truth `g` predicted as `p`.
/// Void ground-truth pixels are never counted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MiouReport {
    pub miou: f64,
    /// `None` for classes absent from both ground truth and prediction.
    pub per_class: Vec<Option<f64>>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self { k: num_classes, counts: vec![0; num_classes * num_classes] }
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn add(&mut self, gt: &LabelMap, pred: &LabelMap) -> Result<()> {
        self.add_where(gt, pred, |_| true)
    }

    /// Counts only pixels whose flat index satisfies `keep`.
    pub fn add_where(&mut self, gt: &LabelMap, pred: &LabelMap, keep: impl Fn(usize) -> bool) -> Result<()> {
        if gt.height() != pred.height() || gt.width() != pred.width() {
            return Err(SegError::Shape(format!(
                "ground truth {}x{} vs prediction {}x{}",
                gt.height(),
                gt.width(),
                pred.height(),
                pred.width()
            )));
        }
        gt.validate(self.k)?;
        for (i, (&g, &p)) in gt.data().iter().zip(pred.data()).enumerate() {
            if g == VOID || !keep(i) {
                continue;
            }
            if p as usize >= self.k {
                return Err(SegError::Data(format!("prediction {p} at pixel {i} is outside 0..{}", self.k)));
            }
            self.counts[g as usize * self.k + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.k != self.k {
            return Err(SegError::Shape(format!("merging {}-class and {}-class matrices", self.k, other.k)));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// `IOU_k = cm[k][k] / (row_k + col_k − cm[k][k])`, `None` when the
    /// denominator is zero.
    pub fn iou(&self) -> Vec<Option<f64>> {
        (0..self.k)
            .map(|c| {
                let tp = self.get(c, c);
                let row: u64 = (0..self.k).map(|p| self.get(c, p)).sum();
                let col: u64 = (0..self.k).map(|g| self.get(g, c)).sum();
                let den = row + col - tp;
                (den > 0).then(|| tp as f64 / den as f64)
            })
            .collect()
    }

    pub fn miou(&self) -> Result<MiouReport> {
        let per_class = self.iou();
        let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
        if defined.is_empty() {
            return Err(SegError::UndefinedMetric("no class has a non-zero IOU denominator".into()));
        }
        let miou = defined.iter().sum::<f64>() / defined.len() as f64;
        Ok(MiouReport { miou, per_class })
    }
}
