//! Inference strategies: multi-scale inputs, left-right flipping, argmax.

use crate::arch::Model;
use crate::error::{Result, SegError};
use crate::graph::exec::Mode;
use crate::label::LabelMap;
use crate::ops::softmax_channels;
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Spatial size of an input rescaled by `scale` (rounded, at least 1).
pub fn scaled_size(h: usize, w: usize, scale: f64) -> (usize, usize) {
    let r = |v: usize| ((v as f64 * scale).round() as usize).max(1);
    (r(h), r(w))
}

/// Softmax of the eval-mode logits.
pub fn predict_probs<T: Scalar>(model: &Model, params: &ParamStore<T>, x: &Tensor4<T>) -> Result<Tensor4<T>> {
    Ok(softmax_channels(&model.forward(params, x, Mode::Eval)?))
}

/// Class probabilities averaged over rescaled (and optionally mirrored)
/// copies of `x`, each mapped back to the original resolution.
pub fn predict_multiscale<T: Scalar>(
    model: &Model,
    params: &ParamStore<T>,
    x: &Tensor4<T>,
    scales: &[f64],
    flip: bool,
) -> Result<Tensor4<T>> {
    if scales.is_empty() {
        return Err(SegError::Config("at least one inference scale is required".into()));
    }
    if let Some(s) = scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(SegError::Config(format!("inference scale {s} must be positive")));
    }
    let s = x.shape();
    let mut acc: Option<Tensor4<T>> = None;
    let mut terms = 0usize;
    let mut add = |p: Tensor4<T>| -> Result<()> {
        terms += 1;
        match &mut acc {
            Some(a) => a.add_assign(&p),
            None => {
                acc = Some(p);
                Ok(())
            }
        }
    };
    for &scale in scales {
        let (h, w) = scaled_size(s.h, s.w, scale);
        let xs = x.bilinear_resize(h, w)?;
        add(predict_probs(model, params, &xs)?.bilinear_resize(s.h, s.w)?)?;
        if flip {
            let p = predict_probs(model, params, &xs.flip_horizontal())?;
            add(p.flip_horizontal().bilinear_resize(s.h, s.w)?)?;
        }
    }
    let acc = acc.expect("at least one term");
    if terms == 1 {
        return Ok(acc);
    }
    Ok(acc.scale(T::one() / T::from_f64_lossy(terms as f64)))
}

/// Per-pixel argmax over channels; ties go to the lower class index.
pub fn argmax_labels<T: Scalar>(probs: &Tensor4<T>) -> Result<Vec<LabelMap>> {
    let s = probs.shape();
    if s.c > 255 {
        return Err(SegError::Shape(format!("{} classes do not fit a label map", s.c)));
    }
    let p = s.plane();
    (0..s.n)
        .map(|n| {
            let mut out = vec![0u8; p];
            for (i, o) in out.iter_mut().enumerate() {
                let mut best = probs.plane(n, 0)[i];
                for c in 1..s.c {
                    let v = probs.plane(n, c)[i];
                    if v > best {
                        best = v;
                        *o = c as u8;
                    }
                }
            }
            LabelMap::new(s.h, s.w, out)
        })
        .collect()
}
