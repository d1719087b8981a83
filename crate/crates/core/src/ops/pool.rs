use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor4};

/// Per-channel spatial mean, producing a `1×1` map.
pub fn global_avg_pool<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    let s = x.shape();
    let count = T::from_usize(s.plane()).unwrap();
    let mut out = Tensor4::zeros_unchecked(s.with_hw(1, 1));
    for n in 0..s.n {
        for c in 0..s.c {
            out.set(n, c, 0, 0, x.plane(n, c).iter().copied().sum::<T>() / count);
        }
    }
    out
}

/// Spreads `dy / (h·w)` uniformly over the pooled window.
pub fn global_avg_pool_backward<T: Scalar>(dy: &Tensor4<T>, h: usize, w: usize) -> Result<Tensor4<T>> {
    let s = dy.shape();
    let mut dx = Tensor4::zeros(Shape::new(s.n, s.c, h, w))?;
    let count = T::from_usize(h * w).unwrap();
    for n in 0..s.n {
        for c in 0..s.c {
            let g = dy.at(n, c, 0, 0) / count;
            dx.plane_mut(n, c).fill(g);
        }
    }
    Ok(dx)
}
