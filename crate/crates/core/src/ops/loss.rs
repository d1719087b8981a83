use crate::error::{shape_err, Result, SegError};
use crate::label::LabelMap;
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Channel-wise softmax at every pixel.
pub fn softmax_channels<T: Scalar>(logits: &Tensor4<T>) -> Tensor4<T> {
    let s = logits.shape();
    let p = s.plane();
    let mut out = logits.clone();
    let data = out.data_mut();
    for n in 0..s.n {
        let base = n * s.c * p;
        for i in 0..p {
            let mut mx = T::neg_infinity();
            for c in 0..s.c {
                mx = mx.max(data[base + c * p + i]);
            }
            let mut z = T::zero();
            for c in 0..s.c {
                let e = (data[base + c * p + i] - mx).exp();
                data[base + c * p + i] = e;
                z += e;
            }
            for c in 0..s.c {
                data[base + c * p + i] /= z;
            }
        }
    }
    out
}

/// Mean per-pixel cross entropy over non-void pixels and its gradient.
///
/// Void pixels contribute neither loss nor gradient. A batch with no
/// labelled pixel yields loss 0 and a zero gradient.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor4<T>,
    labels: &[LabelMap],
    void_index: u8,
) -> Result<(T, Tensor4<T>)> {
    let s = logits.shape();
    if labels.len() != s.n {
        return shape_err(format!("{} label maps for batch of {}", labels.len(), s.n));
    }
    for l in labels {
        if l.height() != s.h || l.width() != s.w {
            return shape_err(format!(
                "label map {}x{} vs logits {}x{}",
                l.height(),
                l.width(),
                s.h,
                s.w
            ));
        }
        if let Some(&bad) = l.data().iter().find(|&&v| v != void_index && v as usize >= s.c) {
            return Err(SegError::Data(format!("label {bad} outside 0..{}", s.c)));
        }
    }
    let p = s.plane();
    let mut grad = softmax_channels(logits);
    let mut loss = T::zero();
    let mut count = 0usize;
    for (n, label) in labels.iter().enumerate() {
        let base = n * s.c * p;
        let g = grad.data_mut();
        for (i, &cls) in label.data().iter().enumerate() {
            if cls == void_index {
                for c in 0..s.c {
                    g[base + c * p + i] = T::zero();
                }
                continue;
            }
            count += 1;
            let idx = base + cls as usize * p + i;
            loss -= g[idx].max(T::min_positive_value()).ln();
            g[idx] -= T::one();
        }
    }
    if count == 0 {
        return Ok((T::zero(), Tensor4::zeros_unchecked(s)));
    }
    let inv = T::one() / T::from_usize(count).unwrap();
    for v in grad.data_mut() {
        *v *= inv;
    }
    Ok((loss * inv, grad))
}
