//! Plan dumps and cost reports (`seg analyze`).

use std::fmt::Write as _;

use atrous_seg::arch::{ArchSpec, Model};
use atrous_seg::metrics::{count_multiply_adds, CostReport};
use atrous_seg::{Result, Shape};

pub fn plan_dump(model: &Model) -> String {
    let plan = model.plan();
    let mut out = String::new();
    let _ = writeln!(out, "output_stride = {}", plan.output_stride());
    let _ = writeln!(out, "block,kind,channels,repeats,nominal_stride,effective_stride,input_rate,rate,output_stride");
    for b in &plan.blocks {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            b.index,
            b.spec.kind.as_str(),
            b.spec.channels,
            b.spec.repeats,
            b.spec.nominal_stride,
            b.effective_stride,
            b.input_rate,
            b.rate,
            b.effective_cum_stride
        );
    }
    for t in &plan.taps {
        let _ = writeln!(out, "tap {} = block {} at output stride {}", t.name.as_str(), t.block, t.output_stride);
    }
    let rates: Vec<String> = plan.aspp_rates.iter().map(ToString::to_string).collect();
    let _ = writeln!(out, "aspp_rates = {}", rates.join(", "));
    out
}

pub struct Analysis {
    pub plan: String,
    pub cost: CostReport,
}

pub fn analyze(arch: &ArchSpec, output_stride: usize, input: Shape) -> Result<Analysis> {
    let model = Model::with_output_stride(arch, output_stride)?;
    Ok(Analysis { plan: plan_dump(&model), cost: count_multiply_adds(&model, input)? })
}

/// `(layer, standard cost, separable cost)` for each head convolution that
/// the separable-heads switch converts.
pub fn converted_layers(arch: &ArchSpec, output_stride: usize, input: Shape) -> Result<Vec<(String, u64, u64)>> {
    let mut standard = arch.clone();
    standard.separable_heads = false;
    let mut separable = arch.clone();
    separable.separable_heads = true;
    let a = analyze(&standard, output_stride, input)?.cost;
    let b = analyze(&separable, output_stride, input)?.cost;
    let mut out = Vec::new();
    for r in &a.records {
        let dw = b.get(&format!("{}.depthwise", r.name));
        let pw = b.get(&format!("{}.pointwise", r.name));
        if let (Some(dw), Some(pw)) = (dw, pw) {
            out.push((r.name.clone(), r.multiply_adds, dw.multiply_adds + pw.multiply_adds));
        }
    }
    Ok(out)
}
