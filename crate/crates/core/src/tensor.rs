//! Dense rank-4 tensors in `(n, c, h, w)` row-major order.

use std::fmt;

use crate::error::{shape_err, Result, SegError};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    /// Checks that every dim is at least 1 and that the element count fits
    /// in an allocation.
    pub fn validate(&self) -> Result<usize> {
        if self.n == 0 || self.c == 0 || self.h == 0 || self.w == 0 {
            return shape_err(format!("all dims must be >= 1, got {self}"));
        }
        self.n
            .checked_mul(self.c)
            .and_then(|v| v.checked_mul(self.h))
            .and_then(|v| v.checked_mul(self.w))
            .filter(|&v| v <= isize::MAX as usize / 8)
            .ok_or_else(|| SegError::Size(format!("{self} overflows the index range")))
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn with_n(self, n: usize) -> Self {
        Self { n, ..self }
    }

    pub fn with_c(self, c: usize) -> Self {
        Self { c, ..self }
    }

    pub fn with_hw(self, h: usize, w: usize) -> Self {
        Self { h, w, ..self }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.n, self.c, self.h, self.w)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T> {
    shape: Shape,
    data: Vec<T>,
}

/// Pointwise operators accepted by [`elementwise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Elementwise<T> {
    Add,
    Mul,
    Relu,
    Scale(T),
}

pub fn elementwise<T: Scalar>(
    op: Elementwise<T>,
    a: &Tensor4<T>,
    b: Option<&Tensor4<T>>,
) -> Result<Tensor4<T>> {
    match op {
        Elementwise::Add | Elementwise::Mul => {
            let b = b.ok_or_else(|| SegError::Shape("binary op needs two operands".into()))?;
            if op == Elementwise::Add {
                a.add(b)
            } else {
                a.mul(b)
            }
        }
        Elementwise::Relu => Ok(a.relu()),
        Elementwise::Scale(alpha) => Ok(a.scale(alpha)),
    }
}

impl<T: Scalar> Tensor4<T> {
    pub fn zeros(shape: Shape) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Shape, value: T) -> Result<Self> {
        let len = shape.validate()?;
        Ok(Self { shape, data: vec![value; len] })
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        let len = shape.validate()?;
        if data.len() != len {
            return shape_err(format!("{} values supplied for shape {shape}", data.len()));
        }
        Ok(Self { shape, data })
    }

    /// Zero tensor of a shape already known to be valid.
    pub(crate) fn zeros_unchecked(shape: Shape) -> Self {
        Self { shape, data: vec![T::zero(); shape.numel()] }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + h) * self.shape.w + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.index(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: T) {
        let i = self.index(n, c, h, w);
        self.data[i] = v;
    }

    /// The `h·w` plane of sample `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &mut self.data[start..start + p]
    }

    /// All channels of sample `n`.
    pub fn sample(&self, n: usize) -> &[T] {
        let len = self.shape.c * self.shape.plane();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    fn same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.shape != other.shape {
            return shape_err(format!("{what}: {} vs {}", self.shape, other.shape));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.same_shape(other, "elementwise")?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { shape: self.shape, data })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn relu(&self) -> Self {
        self.map(|v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn scale(&self, alpha: T) -> Self {
        self.map(|v| v * alpha)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.same_shape(other, "accumulate")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        self.same_shape(other, "dot")?;
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| U::from_f64_lossy(v.as_f64())).collect(),
        }
    }

    /// Channels `[start, start + len)`.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Self> {
        let s = self.shape;
        if len == 0 || start + len > s.c {
            return shape_err(format!("channel slice {start}+{len} out of range for {s}"));
        }
        let p = s.plane();
        let mut data = Vec::with_capacity(s.n * len * p);
        for n in 0..s.n {
            let base = (n * s.c + start) * p;
            data.extend_from_slice(&self.data[base..base + len * p]);
        }
        Ok(Self { shape: s.with_c(len), data })
    }

    pub fn flip_horizontal(&self) -> Self {
        let s = self.shape;
        let mut out = self.clone();
        for row in out.data.chunks_mut(s.w) {
            row.reverse();
        }
        debug_assert_eq!(out.shape, s);
        out
    }

    pub fn pad_zero(&self, top: usize, bottom: usize, left: usize, right: usize) -> Self {
        let s = self.shape;
        let (h, w) = (s.h + top + bottom, s.w + left + right);
        let mut out = Self::zeros_unchecked(s.with_hw(h, w));
        for n in 0..s.n {
            for c in 0..s.c {
                let src = self.plane(n, c);
                let dst = out.plane_mut(n, c);
                for y in 0..s.h {
                    let d = (y + top) * w + left;
                    dst[d..d + s.w].copy_from_slice(&src[y * s.w..(y + 1) * s.w]);
                }
            }
        }
        out
    }

    pub fn bilinear_resize(&self, out_h: usize, out_w: usize) -> Result<Self> {
        let s = self.shape;
        let out_shape = s.with_hw(out_h, out_w);
        out_shape.validate()?;
        if out_h == s.h && out_w == s.w {
            return Ok(self.clone());
        }
        let ys = align_corners_taps(s.h, out_h);
        let xs = align_corners_taps(s.w, out_w);
        let ys: Vec<Tap<T>> = ys.iter().map(Tap::cast).collect();
        let xs: Vec<Tap<T>> = xs.iter().map(Tap::cast).collect();
        let mut out = Self::zeros_unchecked(out_shape);
        for n in 0..s.n {
            for c in 0..s.c {
                let src = self.plane(n, c);
                let dst = out.plane_mut(n, c);
                for (oy, ty) in ys.iter().enumerate() {
                    let r0 = &src[ty.i0 * s.w..(ty.i0 + 1) * s.w];
                    let r1 = &src[ty.i1 * s.w..(ty.i1 + 1) * s.w];
                    for (ox, tx) in xs.iter().enumerate() {
                        let top = mix(r0[tx.i0], r0[tx.i1], tx);
                        let bot = mix(r1[tx.i0], r1[tx.i1], tx);
                        dst[oy * out_w + ox] = mix(top, bot, ty);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Adjoint of [`Tensor4::bilinear_resize`] from a `(n,c,in_h,in_w)` source.
    pub fn bilinear_resize_backward(&self, in_h: usize, in_w: usize) -> Result<Self> {
        let s = self.shape;
        let in_shape = s.with_hw(in_h, in_w);
        in_shape.validate()?;
        if in_h == s.h && in_w == s.w {
            return Ok(self.clone());
        }
        let ys: Vec<Tap<T>> = align_corners_taps(in_h, s.h).iter().map(Tap::cast).collect();
        let xs: Vec<Tap<T>> = align_corners_taps(in_w, s.w).iter().map(Tap::cast).collect();
        let mut dx = Self::zeros_unchecked(in_shape);
        for n in 0..s.n {
            for c in 0..s.c {
                let dy = self.plane(n, c);
                let dst = dx.plane_mut(n, c);
                for (oy, ty) in ys.iter().enumerate() {
                    for (ox, tx) in xs.iter().enumerate() {
                        let g = dy[oy * s.w + ox];
                        let top = g * ty.w0;
                        let bot = g * ty.w1;
                        dst[ty.i0 * in_w + tx.i0] += top * tx.w0;
                        dst[ty.i0 * in_w + tx.i1] += top * tx.w1;
                        dst[ty.i1 * in_w + tx.i0] += bot * tx.w0;
                        dst[ty.i1 * in_w + tx.i1] += bot * tx.w1;
                    }
                }
            }
        }
        Ok(dx)
    }
}

/// Concatenates along the channel axis, preserving part order.
pub fn concat_channels<T: Scalar>(parts: &[&Tensor4<T>]) -> Result<Tensor4<T>> {
    let first = parts.first().ok_or_else(|| SegError::Shape("concat of zero parts".into()))?;
    let s0 = first.shape();
    let mut c = 0;
    for p in parts {
        let s = p.shape();
        if s.n != s0.n || s.h != s0.h || s.w != s0.w {
            return shape_err(format!("concat mismatch: {s} vs {s0}"));
        }
        c += s.c;
    }
    let shape = s0.with_c(c);
    let mut data = Vec::with_capacity(shape.numel());
    for n in 0..s0.n {
        for p in parts {
            data.extend_from_slice(p.sample(n));
        }
    }
    Ok(Tensor4 { shape, data })
}

/// One output coordinate of an align-corners resampling: the two source
/// indices and their weights.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Tap<T> {
    pub i0: usize,
    pub i1: usize,
    pub w0: T,
    pub w1: T,
}

impl Tap<f64> {
    fn cast<T: Scalar>(&self) -> Tap<T> {
        Tap { i0: self.i0, i1: self.i1, w0: T::from_f64_lossy(self.w0), w1: T::from_f64_lossy(self.w1) }
    }
}

/// Source coordinate `d·(in−1)/(out−1)` evaluated in exact integer
/// arithmetic; both weights are single correctly-rounded quotients so the
/// mapping is mirror-symmetric bit for bit.
/// Two-tap blend that returns equal inputs unchanged, so constants survive
/// resizing exactly.
#[inline]
fn mix<T: Scalar>(a: T, b: T, t: &Tap<T>) -> T {
    if a == b {
        a
    } else {
        a * t.w0 + b * t.w1
    }
}

pub(crate) fn align_corners_taps(input: usize, output: usize) -> Vec<Tap<f64>> {
    if output == 1 || input == 1 {
        return vec![Tap { i0: 0, i1: 0, w0: 1.0, w1: 0.0 }; output];
    }
    let num = input - 1;
    let den = output - 1;
    (0..output)
        .map(|d| {
            let p = d * num;
            let i0 = p / den;
            let rem = p % den;
            if rem == 0 {
                Tap { i0, i1: i0, w0: 1.0, w1: 0.0 }
            } else {
                Tap { i0, i1: i0 + 1, w0: (den - rem) as f64 / den as f64, w1: rem as f64 / den as f64 }
            }
        })
        .collect()
}

/// Nearest source index under the align-corners mapping, ties rounding up.
pub(crate) fn align_corners_nearest(input: usize, output: usize) -> Vec<usize> {
    if output == 1 || input == 1 {
        return vec![0; output];
    }
    let num = input - 1;
    let den = output - 1;
    (0..output).map(|d| (2 * d * num + den) / (2 * den)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    type T = Tensor4<f64>;

    fn t(shape: Shape, v: &[f64]) -> T {
        T::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn zeros_shapes() {
        assert_eq!(T::zeros(Shape::new(1, 1, 2, 2)).unwrap().data(), &[0.0; 4]);
        let z = T::zeros(Shape::new(2, 3, 4, 4)).unwrap();
        assert_eq!(z.data().len(), 96);
        assert!(z.data().iter().all(|&v| v == 0.0));
        assert_eq!(T::zeros(Shape::new(1, 1, 1, 1)).unwrap().data(), &[0.0]);
    }

    #[test]
    fn zeros_rejects_bad_shapes() {
        assert!(matches!(T::zeros(Shape::new(0, 1, 1, 1)), Err(SegError::Shape(_))));
        let huge = Shape::new(usize::MAX / 2, 4, 1, 1);
        assert!(matches!(T::zeros(huge), Err(SegError::Size(_))));
    }

    #[test]
    fn elementwise_examples() {
        let s = Shape::new(1, 1, 1, 3);
        let x = t(s, &[-1.0, 0.0, 2.0]);
        assert_eq!(elementwise(Elementwise::Relu, &x, None).unwrap().data(), &[0.0, 0.0, 2.0]);
        let z = T::zeros(s).unwrap();
        assert_eq!(elementwise(Elementwise::Add, &x, Some(&z)).unwrap(), x);
        let y = t(Shape::new(1, 1, 1, 2), &[1.0, -3.0]);
        assert_eq!(elementwise(Elementwise::Scale(2.0), &y, None).unwrap().data(), &[2.0, -6.0]);
        assert!(matches!(x.add(&y), Err(SegError::Shape(_))));
        assert!(elementwise(Elementwise::Mul, &x, None).is_err());
    }

    #[test]
    fn concat_examples() {
        let a = T::zeros(Shape::new(1, 256, 16, 16)).unwrap();
        let b = T::zeros(Shape::new(1, 48, 16, 16)).unwrap();
        assert_eq!(concat_channels(&[&a, &b]).unwrap().shape(), Shape::new(1, 304, 16, 16));
        let single = t(Shape::new(1, 2, 1, 1), &[1.0, 2.0]);
        assert_eq!(concat_channels(&[&single]).unwrap(), single);
        let p1 = T::zeros(Shape::new(1, 2, 3, 3)).unwrap();
        let p2 = T::zeros(Shape::new(1, 5, 3, 3)).unwrap();
        let p3 = T::zeros(Shape::new(1, 1, 3, 3)).unwrap();
        assert_eq!(concat_channels(&[&p1, &p2, &p3]).unwrap().shape(), Shape::new(1, 8, 3, 3));
        let bad = T::zeros(Shape::new(1, 1, 2, 3)).unwrap();
        assert!(concat_channels(&[&p1, &bad]).is_err());
    }

    #[test]
    fn resize_examples() {
        let c = T::full(Shape::new(1, 2, 4, 4), 0.37).unwrap();
        let up = c.bilinear_resize(16, 16).unwrap();
        assert!(up.data().iter().all(|&v| v == 0.37));

        let x = t(Shape::new(1, 1, 2, 2), &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(x.bilinear_resize(2, 2).unwrap(), x);
        let y = x.bilinear_resize(3, 3).unwrap();
        assert_eq!(y.data(), &[0.0, 0.5, 1.0, 1.0, 1.5, 2.0, 2.0, 2.5, 3.0]);

        // out = 1 samples coordinate 0
        assert_eq!(x.bilinear_resize(1, 1).unwrap().data(), &[0.0]);
    }

    #[test]
    fn pad_examples() {
        let x = t(Shape::new(1, 1, 1, 1), &[5.0]);
        assert_eq!(x.pad_zero(0, 0, 0, 0), x);
        let p = x.pad_zero(1, 1, 1, 1);
        assert_eq!(p.shape(), Shape::new(1, 1, 3, 3));
        assert_eq!(p.data(), &[0.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn nearest_indices() {
        assert_eq!(align_corners_nearest(3, 5), vec![0, 1, 1, 2, 2]);
        assert_eq!(align_corners_nearest(4, 4), vec![0, 1, 2, 3]);
        assert_eq!(align_corners_nearest(4, 1), vec![0]);
    }

    fn arb_tensor(max: usize) -> impl Strategy<Value = T> {
        (1..3usize, 1..4usize, 1..max, 1..max).prop_flat_map(|(n, c, h, w)| {
            prop::collection::vec(-10.0f64..10.0, n * c * h * w)
                .prop_map(move |v| T::from_vec(Shape::new(n, c, h, w), v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn concat_then_slice_recovers_parts(a in arb_tensor(5), extra in 1..4usize) {
            let s = a.shape();
            let b = T::from_vec(s.with_c(extra), (0..s.n * extra * s.plane()).map(|i| i as f64).collect()).unwrap();
            let cat = concat_channels(&[&a, &b]).unwrap();
            prop_assert_eq!(cat.slice_channels(0, s.c).unwrap(), a.clone());
            prop_assert_eq!(cat.slice_channels(s.c, extra).unwrap(), b);
        }

        #[test]
        fn resize_of_constant_is_constant(v in -5.0f64..5.0, h in 1..7usize, w in 1..7usize, oh in 1..20usize, ow in 1..20usize) {
            let x = T::full(Shape::new(1, 2, h, w), v).unwrap();
            let y = x.bilinear_resize(oh, ow).unwrap();
            prop_assert!(y.data().iter().all(|&u| u == v));
        }

        #[test]
        fn pad_conserves_sum(x in arb_tensor(6), t in 0..3usize, b in 0..3usize, l in 0..3usize, r in 0..3usize) {
            let p = x.pad_zero(t, b, l, r);
            prop_assert_eq!(p.sum(), x.sum());
            prop_assert_eq!(p.shape().h, x.shape().h + t + b);
        }

        #[test]
        fn resize_backward_is_adjoint(x in arb_tensor(6), oh in 1..9usize, ow in 1..9usize) {
            let y = x.bilinear_resize(oh, ow).unwrap();
            let dy = y.map(|v| (v * 1.3).cos());
            let dx = dy.bilinear_resize_backward(x.shape().h, x.shape().w).unwrap();
            let lhs = y.dot(&dy).unwrap();
            let rhs = x.dot(&dx).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
        }
    }
}
