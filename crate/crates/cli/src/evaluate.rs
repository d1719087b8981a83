//! Evaluation and single-image inference.

use std::fmt::Write as _;
use std::path::Path;

use atrous_seg::arch::{argmax_labels, predict_multiscale, ArchSpec, Model};
use atrous_seg::data::{collate, netpbm, Sample};
use atrous_seg::metrics::{multiscale_cost, ConfusionMatrix, TrimapAccumulator, TrimapScore};
use atrous_seg::{LabelMap, Params, Result, SegError};

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub output_stride: usize,
    pub scales: Vec<f64>,
    pub flip: bool,
    pub trimap_widths: Vec<usize>,
    pub batch: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub images: usize,
    pub output_stride: usize,
    pub scales: Vec<f64>,
    pub flip: bool,
    pub miou: f64,
    pub per_class: Vec<Option<f64>>,
    pub trimap: Vec<TrimapScore>,
    /// Cost of evaluating one image of the first sample's size.
    pub multiply_adds: u64,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| x.to_string())
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let scales: Vec<String> = self.scales.iter().map(ToString::to_string).collect();
        let mut out = String::from("metric,value\n");
        let _ = writeln!(out, "images,{}", self.images);
        let _ = writeln!(out, "eval_os,{}", self.output_stride);
        let _ = writeln!(out, "scales,{}", scales.join(" "));
        let _ = writeln!(out, "flip,{}", self.flip);
        let _ = writeln!(out, "miou,{}", self.miou);
        for (c, v) in self.per_class.iter().enumerate() {
            let _ = writeln!(out, "iou_class_{c},{}", fmt_opt(*v));
        }
        for t in &self.trimap {
            let _ = writeln!(out, "trimap_miou_w{},{}", t.width, fmt_opt(t.miou));
        }
        let _ = writeln!(out, "multiply_adds,{}", self.multiply_adds);
        out
    }
}

/// Predicted label maps for `samples` in order.
pub fn predict(model: &Model, params: &Params, samples: &[Sample], scales: &[f64], flip: bool, batch: usize) -> Result<Vec<LabelMap>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch.max(1)) {
        // Mixed sizes cannot share a tensor; fall back to one image at a time.
        let same = chunk.iter().all(|s| s.image.shape() == chunk[0].image.shape());
        let groups: Vec<&[Sample]> = if same { vec![chunk] } else { chunk.chunks(1).collect() };
        for g in groups {
            let b = collate(g)?;
            let probs = predict_multiscale(model, params, &b.images, scales, flip)?;
            out.extend(argmax_labels(&probs)?);
        }
    }
    Ok(out)
}

pub fn score(
    num_classes: usize,
    gts: &[&LabelMap],
    preds: &[LabelMap],
    widths: &[usize],
) -> Result<(ConfusionMatrix, Vec<TrimapScore>)> {
    if gts.len() != preds.len() {
        return Err(SegError::Data(format!("{} ground truths vs {} predictions", gts.len(), preds.len())));
    }
    let mut cm = ConfusionMatrix::new(num_classes);
    let mut tri = TrimapAccumulator::new(num_classes, widths);
    for (g, p) in gts.iter().zip(preds) {
        cm.add(g, p)?;
        tri.add(g, p)?;
    }
    Ok((cm, tri.scores()))
}

pub fn evaluate(arch: &ArchSpec, params: &Params, samples: &[Sample], opts: &EvalOptions) -> Result<EvalReport> {
    let first = samples.first().ok_or_else(|| SegError::Data("no evaluation samples".into()))?;
    let model = Model::with_output_stride(arch, opts.output_stride)?;
    model.graph().check_params(params)?;
    let preds = predict(&model, params, samples, &opts.scales, opts.flip, opts.batch)?;
    let gts: Vec<&LabelMap> = samples.iter().map(|s| &s.label).collect();
    let (cm, trimap) = score(arch.num_classes, &gts, &preds, &opts.trimap_widths)?;
    let m = cm.miou()?;
    Ok(EvalReport {
        images: samples.len(),
        output_stride: model.output_stride(),
        scales: opts.scales.clone(),
        flip: opts.flip,
        miou: m.miou,
        per_class: m.per_class,
        trimap,
        multiply_adds: multiscale_cost(&model, first.image.shape(), &opts.scales, opts.flip)?,
    })
}

/// Scores saved prediction maps `dir/NNNNN.pgm` against the samples.
pub fn evaluate_prediction_dir(num_classes: usize, samples: &[Sample], dir: &Path, widths: &[usize]) -> Result<(f64, Vec<Option<f64>>, Vec<TrimapScore>)> {
    let preds = (0..samples.len())
        .map(|i| netpbm::load_label(&dir.join(format!("{i:05}.pgm"))))
        .collect::<Result<Vec<_>>>()?;
    let gts: Vec<&LabelMap> = samples.iter().map(|s| &s.label).collect();
    let (cm, trimap) = score(num_classes, &gts, &preds, widths)?;
    let m = cm.miou()?;
    Ok((m.miou, m.per_class, trimap))
}

/// Labels and overlay for one image, written under `out_prefix`.
pub fn infer_image(
    arch: &ArchSpec,
    params: &Params,
    output_stride: usize,
    image_path: &Path,
    out_prefix: &Path,
    scales: &[f64],
    flip: bool,
) -> Result<LabelMap> {
    let model = Model::with_output_stride(arch, output_stride)?;
    model.graph().check_params(params)?;
    let image = netpbm::load_image(image_path)?;
    model.check_input(image.shape())?;
    let probs = predict_multiscale(&model, params, &image, scales, flip)?;
    let label = argmax_labels(&probs)?.remove(0);
    netpbm::save_prediction(out_prefix, &image, &label)?;
    Ok(label)
}
