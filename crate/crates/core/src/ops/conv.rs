//! Atrous convolution and its depthwise / pointwise / separable relatives.
//!
//! For one spatial axis the output is `y[i] = Σ_k x[i·stride + k·rate − pad]·w[k]`;
//! `rate = 1` is the ordinary convolution. Kernels are stored
//! `(out_channels, in_channels, kh, kw)`; depthwise kernels use
//! `in_channels = 1` with one filter per input channel.

use crate::error::{shape_err, Result, SegError};
use crate::scalar::{matmul, Scalar, Trans};
use crate::tensor::{Shape, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Padding {
    /// Pads `(k−1)·rate/2` per side, so the output has `ceil(in/stride)` positions.
    Same,
    /// Only positions where the dilated kernel lies fully inside the input.
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvGeometry {
    pub stride: usize,
    pub rate: usize,
    pub padding: Padding,
}

impl ConvGeometry {
    pub fn new(stride: usize, rate: usize, padding: Padding) -> Result<Self> {
        let g = Self { stride, rate, padding };
        g.validate()?;
        Ok(g)
    }

    pub fn same(stride: usize, rate: usize) -> Self {
        Self { stride, rate, padding: Padding::Same }
    }

    pub fn valid(stride: usize, rate: usize) -> Self {
        Self { stride, rate, padding: Padding::Valid }
    }

    fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.rate == 0 {
            return shape_err(format!("stride and rate must be >= 1, got {self:?}"));
        }
        Ok(())
    }

    /// Spatial extent covered by a dilated kernel of size `k`.
    pub fn effective_extent(&self, k: usize) -> usize {
        (k - 1) * self.rate + 1
    }

    /// Output length and leading pad along one axis.
    pub fn output_len(&self, input: usize, k: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let ext = self.effective_extent(k);
        match self.padding {
            Padding::Same => Ok(((input - 1) / self.stride + 1, (ext - 1) / 2)),
            Padding::Valid => {
                if ext > input {
                    return Err(SegError::EmptyOutput(format!(
                        "effective kernel {ext} exceeds input {input}"
                    )));
                }
                Ok(((input - ext) / self.stride + 1, 0))
            }
        }
    }
}

fn check_kernel<T: Scalar>(k: &Tensor4<T>) -> Result<Shape> {
    let s = k.shape();
    if s.h % 2 == 0 || s.w % 2 == 0 {
        return shape_err(format!("kernel dims must be odd, got {}x{}", s.h, s.w));
    }
    Ok(s)
}

/// Output positions `o` in `[lo, hi)` for which `o·stride + offset` lies in `[0, input)`.
#[inline]
fn valid_range(out_len: usize, input: usize, stride: usize, offset: isize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { ((-offset) + s - 1) / s };
    let room = input as isize - offset;
    let hi = if room <= 0 { 0 } else { (room + s - 1) / s };
    let hi = (hi.max(0) as usize).min(out_len);
    let lo = (lo as usize).min(hi);
    (lo, hi)
}

#[derive(Clone, Copy)]
struct Plan {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    pad_h: usize,
    pad_w: usize,
    stride: usize,
    rate: usize,
}

impl Plan {
    fn new(x: Shape, kh: usize, kw: usize, g: &ConvGeometry) -> Result<Self> {
        let (oh, pad_h) = g.output_len(x.h, kh)?;
        let (ow, pad_w) = g.output_len(x.w, kw)?;
        Ok(Self {
            n: x.n,
            cin: x.c,
            h: x.h,
            w: x.w,
            kh,
            kw,
            oh,
            ow,
            pad_h,
            pad_w,
            stride: g.stride,
            rate: g.rate,
        })
    }

    fn is_identity_gather(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1
    }

    fn offsets(&self, ky: usize, kx: usize) -> (isize, isize) {
        (
            (ky * self.rate) as isize - self.pad_h as isize,
            (kx * self.rate) as isize - self.pad_w as isize,
        )
    }
}

/// Lays the receptive fields out as a `(cin·kh·kw) × (n·oh·ow)` matrix.
fn im2col<T: Scalar>(x: &Tensor4<T>, p: &Plan) -> Vec<T> {
    let hw = p.oh * p.ow;
    let cols_n = p.n * hw;
    let mut cols = vec![T::zero(); p.cin * p.kh * p.kw * cols_n];
    for ci in 0..p.cin {
        for ky in 0..p.kh {
            for kx in 0..p.kw {
                let row = (ci * p.kh + ky) * p.kw + kx;
                let (offy, offx) = p.offsets(ky, kx);
                let (ylo, yhi) = valid_range(p.oh, p.h, p.stride, offy);
                let (xlo, xhi) = valid_range(p.ow, p.w, p.stride, offx);
                for n in 0..p.n {
                    let src = x.plane(n, ci);
                    let dst = &mut cols[row * cols_n + n * hw..row * cols_n + (n + 1) * hw];
                    for oy in ylo..yhi {
                        let iy = (oy * p.stride) as isize + offy;
                        let srow = &src[iy as usize * p.w..(iy as usize + 1) * p.w];
                        let drow = &mut dst[oy * p.ow..(oy + 1) * p.ow];
                        for ox in xlo..xhi {
                            drow[ox] = srow[((ox * p.stride) as isize + offx) as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
fn col2im<T: Scalar>(cols: &[T], p: &Plan) -> Tensor4<T> {
    let hw = p.oh * p.ow;
    let cols_n = p.n * hw;
    let mut dx = Tensor4::zeros_unchecked(Shape::new(p.n, p.cin, p.h, p.w));
    for ci in 0..p.cin {
        for ky in 0..p.kh {
            for kx in 0..p.kw {
                let row = (ci * p.kh + ky) * p.kw + kx;
                let (offy, offx) = p.offsets(ky, kx);
                let (ylo, yhi) = valid_range(p.oh, p.h, p.stride, offy);
                let (xlo, xhi) = valid_range(p.ow, p.w, p.stride, offx);
                for n in 0..p.n {
                    let src = &cols[row * cols_n + n * hw..row * cols_n + (n + 1) * hw];
                    let dst = dx.plane_mut(n, ci);
                    for oy in ylo..yhi {
                        let iy = ((oy * p.stride) as isize + offy) as usize;
                        for ox in xlo..xhi {
                            let ix = ((ox * p.stride) as isize + offx) as usize;
                            dst[iy * p.w + ix] += src[oy * p.ow + ox];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// `(n, c, hw)` → `(c, n·hw)`.
fn to_channel_major<T: Scalar>(x: &Tensor4<T>) -> Vec<T> {
    let s = x.shape();
    if s.n == 1 {
        return x.data().to_vec();
    }
    let hw = s.plane();
    let mut out = vec![T::zero(); s.numel()];
    for n in 0..s.n {
        for c in 0..s.c {
            out[(c * s.n + n) * hw..(c * s.n + n + 1) * hw].copy_from_slice(x.plane(n, c));
        }
    }
    out
}

/// `(c, n·hw)` → `(n, c, hw)`.
fn from_channel_major<T: Scalar>(m: Vec<T>, shape: Shape) -> Tensor4<T> {
    if shape.n == 1 {
        return Tensor4::from_vec(shape, m).expect("channel-major buffer matches shape");
    }
    let hw = shape.plane();
    let mut out = Tensor4::zeros_unchecked(shape);
    for n in 0..shape.n {
        for c in 0..shape.c {
            out.plane_mut(n, c)
                .copy_from_slice(&m[(c * shape.n + n) * hw..(c * shape.n + n + 1) * hw]);
        }
    }
    out
}

fn conv_plan<T: Scalar>(x: &Tensor4<T>, k: &Tensor4<T>, g: &ConvGeometry) -> Result<Plan> {
    let ks = check_kernel(k)?;
    if ks.c != x.shape().c {
        return shape_err(format!(
            "input has {} channels, kernel expects {}",
            x.shape().c,
            ks.c
        ));
    }
    Plan::new(x.shape(), ks.h, ks.w, g)
}

fn gather<T: Scalar>(x: &Tensor4<T>, p: &Plan) -> Vec<T> {
    if p.is_identity_gather() {
        to_channel_major(x)
    } else {
        im2col(x, p)
    }
}

/// Dense (optionally atrous) convolution.
pub fn conv2d<T: Scalar>(x: &Tensor4<T>, k: &Tensor4<T>, g: &ConvGeometry) -> Result<Tensor4<T>> {
    let p = conv_plan(x, k, g)?;
    let cout = k.shape().n;
    let kdim = p.cin * p.kh * p.kw;
    let cols_n = p.n * p.oh * p.ow;
    let cols = gather(x, &p);
    let mut out = vec![T::zero(); cout * cols_n];
    matmul(Trans::No, Trans::No, cout, kdim, cols_n, k.data(), &cols, T::zero(), &mut out);
    Ok(from_channel_major(out, Shape::new(p.n, cout, p.oh, p.ow)))
}

/// Input and weight gradients of [`conv2d`].
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor4<T>,
    k: &Tensor4<T>,
    g: &ConvGeometry,
    dy: &Tensor4<T>,
) -> Result<(Tensor4<T>, Tensor4<T>)> {
    let p = conv_plan(x, k, g)?;
    let cout = k.shape().n;
    let want = Shape::new(p.n, cout, p.oh, p.ow);
    if dy.shape() != want {
        return shape_err(format!("output gradient {} does not match {want}", dy.shape()));
    }
    let kdim = p.cin * p.kh * p.kw;
    let cols_n = p.n * p.oh * p.ow;
    let cols = gather(x, &p);
    let dym = to_channel_major(dy);

    let mut dw = vec![T::zero(); cout * kdim];
    matmul(Trans::No, Trans::Yes, cout, cols_n, kdim, &dym, &cols, T::zero(), &mut dw);
    drop(cols);

    let mut dcols = vec![T::zero(); kdim * cols_n];
    matmul(Trans::Yes, Trans::No, kdim, cout, cols_n, k.data(), &dym, T::zero(), &mut dcols);
    let dx = if p.is_identity_gather() {
        from_channel_major(dcols, x.shape())
    } else {
        col2im(&dcols, &p)
    };
    Ok((dx, Tensor4::from_vec(k.shape(), dw)?))
}

fn depthwise_plan<T: Scalar>(x: &Tensor4<T>, k: &Tensor4<T>, g: &ConvGeometry) -> Result<Plan> {
    let ks = check_kernel(k)?;
    if ks.c != 1 || ks.n != x.shape().c {
        return shape_err(format!(
            "depthwise kernel {} does not provide one filter per channel of {}",
            ks,
            x.shape()
        ));
    }
    Plan::new(x.shape(), ks.h, ks.w, g)
}

/// Per-channel spatial convolution: output channel `c` only sees input channel `c`.
pub fn depthwise_conv2d<T: Scalar>(
    x: &Tensor4<T>,
    k: &Tensor4<T>,
    g: &ConvGeometry,
) -> Result<Tensor4<T>> {
    let p = depthwise_plan(x, k, g)?;
    let mut out = Tensor4::zeros_unchecked(Shape::new(p.n, p.cin, p.oh, p.ow));
    let kk = p.kh * p.kw;
    for n in 0..p.n {
        for c in 0..p.cin {
            let src = x.plane(n, c);
            let wts = &k.data()[c * kk..(c + 1) * kk];
            let dst = out.plane_mut(n, c);
            for ky in 0..p.kh {
                for kx in 0..p.kw {
                    let wv = wts[ky * p.kw + kx];
                    let (offy, offx) = p.offsets(ky, kx);
                    let (ylo, yhi) = valid_range(p.oh, p.h, p.stride, offy);
                    let (xlo, xhi) = valid_range(p.ow, p.w, p.stride, offx);
                    if xlo == xhi {
                        continue;
                    }
                    for oy in ylo..yhi {
                        let iy = ((oy * p.stride) as isize + offy) as usize;
                        let srow = &src[iy * p.w..(iy + 1) * p.w];
                        let drow = &mut dst[oy * p.ow..(oy + 1) * p.ow];
                        if p.stride == 1 {
                            let base = (xlo as isize + offx) as usize;
                            let n_x = xhi - xlo;
                            for (d, &s) in drow[xlo..xhi].iter_mut().zip(&srow[base..base + n_x]) {
                                *d += wv * s;
                            }
                        } else {
                            for ox in xlo..xhi {
                                drow[ox] += wv * srow[((ox * p.stride) as isize + offx) as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn depthwise_conv2d_backward<T: Scalar>(
    x: &Tensor4<T>,
    k: &Tensor4<T>,
    g: &ConvGeometry,
    dy: &Tensor4<T>,
) -> Result<(Tensor4<T>, Tensor4<T>)> {
    let p = depthwise_plan(x, k, g)?;
    let want = Shape::new(p.n, p.cin, p.oh, p.ow);
    if dy.shape() != want {
        return shape_err(format!("output gradient {} does not match {want}", dy.shape()));
    }
    let kk = p.kh * p.kw;
    let mut dx = Tensor4::zeros_unchecked(x.shape());
    let mut dw = Tensor4::zeros_unchecked(k.shape());
    for n in 0..p.n {
        for c in 0..p.cin {
            let src = x.plane(n, c);
            let g_out = dy.plane(n, c);
            let wts = &k.data()[c * kk..(c + 1) * kk];
            let mut acc = vec![T::zero(); kk];
            let dst = dx.plane_mut(n, c);
            for ky in 0..p.kh {
                for kx in 0..p.kw {
                    let wv = wts[ky * p.kw + kx];
                    let (offy, offx) = p.offsets(ky, kx);
                    let (ylo, yhi) = valid_range(p.oh, p.h, p.stride, offy);
                    let (xlo, xhi) = valid_range(p.ow, p.w, p.stride, offx);
                    let mut sum = T::zero();
                    for oy in ylo..yhi {
                        let iy = ((oy * p.stride) as isize + offy) as usize;
                        for ox in xlo..xhi {
                            let ix = ((ox * p.stride) as isize + offx) as usize;
                            let go = g_out[oy * p.ow + ox];
                            sum += go * src[iy * p.w + ix];
                            dst[iy * p.w + ix] += wv * go;
                        }
                    }
                    acc[ky * p.kw + kx] = sum;
                }
            }
            for (d, a) in dw.data_mut()[c * kk..(c + 1) * kk].iter_mut().zip(acc) {
                *d += a;
            }
        }
    }
    Ok((dx, dw))
}

/// 1×1 convolution: a per-pixel linear map across channels.
pub fn pointwise_conv2d<T: Scalar>(x: &Tensor4<T>, k: &Tensor4<T>) -> Result<Tensor4<T>> {
    let ks = k.shape();
    if ks.h != 1 || ks.w != 1 {
        return shape_err(format!("pointwise kernel must be 1x1, got {}x{}", ks.h, ks.w));
    }
    conv2d(x, k, &ConvGeometry::same(1, 1))
}

/// Depthwise convolution (atrous when `g.rate > 1`) followed by a pointwise convolution.
pub fn separable_conv2d<T: Scalar>(
    x: &Tensor4<T>,
    depth_k: &Tensor4<T>,
    point_k: &Tensor4<T>,
    g: &ConvGeometry,
) -> Result<Tensor4<T>> {
    let d = depthwise_conv2d(x, depth_k, g)?;
    pointwise_conv2d(&d, point_k)
}

#[cfg(test)]
mod tests {
    use super::*;

    type T = Tensor4<f64>;

    fn t(shape: Shape, v: &[f64]) -> T {
        T::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn atrous_valid_example() {
        let x = t(Shape::new(1, 1, 1, 5), &[1.0, 2.0, 3.0, 4.0, 5.0]);
        let w = t(Shape::new(1, 1, 1, 3), &[1.0, 0.0, -1.0]);
        let y = conv2d(&x, &w, &ConvGeometry::valid(1, 2)).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 1, 1));
        assert_eq!(y.data(), &[-4.0]);
    }

    #[test]
    fn effective_extent() {
        assert_eq!(ConvGeometry::same(1, 2).effective_extent(3), 5);
        assert_eq!(ConvGeometry::same(1, 1).effective_extent(3), 3);
        assert_eq!(ConvGeometry::same(1, 4).effective_extent(5), 17);
    }

    #[test]
    fn same_padding_output_sizes() {
        for rate in [1, 2, 4, 6] {
            assert_eq!(ConvGeometry::same(1, rate).output_len(9, 3).unwrap().0, 9);
            assert_eq!(ConvGeometry::same(2, rate).output_len(9, 3).unwrap().0, 5);
            assert_eq!(ConvGeometry::same(2, rate).output_len(8, 3).unwrap().0, 4);
        }
    }

    #[test]
    fn conv_errors() {
        let x = T::zeros(Shape::new(1, 2, 3, 3)).unwrap();
        let w = T::zeros(Shape::new(1, 3, 3, 3)).unwrap();
        assert!(matches!(conv2d(&x, &w, &ConvGeometry::same(1, 1)), Err(SegError::Shape(_))));
        let w = T::zeros(Shape::new(1, 2, 3, 3)).unwrap();
        assert!(matches!(conv2d(&x, &w, &ConvGeometry::valid(1, 2)), Err(SegError::EmptyOutput(_))));
        let even = T::zeros(Shape::new(1, 2, 2, 2)).unwrap();
        assert!(conv2d(&x, &even, &ConvGeometry::same(1, 1)).is_err());
        assert!(ConvGeometry::new(0, 1, Padding::Same).is_err());
        assert!(ConvGeometry::new(1, 0, Padding::Same).is_err());
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let x = T::from_vec(Shape::new(1, 2, 4, 4), (0..32).map(|i| i as f64).collect()).unwrap();
        let w = T::full(Shape::new(3, 2, 3, 3), 0.5).unwrap();
        let g = ConvGeometry::same(1, 2);
        let y = conv2d(&x, &w, &g).unwrap();
        let (dx, dw) = conv2d_backward(&x, &w, &g, &T::zeros(y.shape()).unwrap()).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        assert!(dw.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pointwise_weight_gradient_is_pixel_sum() {
        let x = T::from_vec(Shape::new(2, 2, 2, 3), (0..24).map(|i| (i as f64 * 0.7).sin()).collect())
            .unwrap();
        let w = T::from_vec(Shape::new(3, 2, 1, 1), vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6]).unwrap();
        let g = ConvGeometry::same(1, 1);
        let dy = T::from_vec(Shape::new(2, 3, 2, 3), (0..36).map(|i| (i as f64 * 0.3).cos()).collect())
            .unwrap();
        let (_, dw) = conv2d_backward(&x, &w, &g, &dy).unwrap();
        for o in 0..3 {
            for i in 0..2 {
                let mut want = 0.0;
                for n in 0..2 {
                    for (a, b) in dy.plane(n, o).iter().zip(x.plane(n, i)) {
                        want += a * b;
                    }
                }
                assert!((dw.at(o, i, 0, 0) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn depthwise_delta_and_zero_filters() {
        let x = T::from_vec(Shape::new(1, 2, 4, 4), (0..32).map(|i| i as f64 - 7.0).collect()).unwrap();
        let mut delta = T::zeros(Shape::new(2, 1, 3, 3)).unwrap();
        delta.set(0, 0, 1, 1, 1.0);
        delta.set(1, 0, 1, 1, 1.0);
        for rate in [1, 2] {
            assert_eq!(depthwise_conv2d(&x, &delta, &ConvGeometry::same(1, rate)).unwrap(), x);
        }
        let mut half = delta.clone();
        half.set(0, 0, 1, 1, 0.0);
        let y = depthwise_conv2d(&x, &half, &ConvGeometry::same(1, 1)).unwrap();
        assert!(y.plane(0, 0).iter().all(|&v| v == 0.0));
        assert_eq!(y.plane(0, 1), x.plane(0, 1));

        let bad = T::zeros(Shape::new(3, 1, 3, 3)).unwrap();
        assert!(depthwise_conv2d(&x, &bad, &ConvGeometry::same(1, 1)).is_err());
    }

    #[test]
    fn pointwise_identity_and_errors() {
        let x = T::from_vec(Shape::new(1, 3, 2, 2), (0..12).map(|i| i as f64).collect()).unwrap();
        let mut eye = T::zeros(Shape::new(3, 3, 1, 1)).unwrap();
        for c in 0..3 {
            eye.set(c, c, 0, 0, 1.0);
        }
        assert_eq!(pointwise_conv2d(&x, &eye).unwrap(), x);
        let k3 = T::zeros(Shape::new(3, 3, 3, 3)).unwrap();
        assert!(pointwise_conv2d(&x, &k3).is_err());
    }

    #[test]
    fn separable_identity() {
        let x = T::from_vec(Shape::new(1, 2, 3, 3), (0..18).map(|i| i as f64 * 0.5).collect()).unwrap();
        let mut delta = T::zeros(Shape::new(2, 1, 3, 3)).unwrap();
        delta.set(0, 0, 1, 1, 1.0);
        delta.set(1, 0, 1, 1, 1.0);
        let mut eye = T::zeros(Shape::new(2, 2, 1, 1)).unwrap();
        eye.set(0, 0, 0, 0, 1.0);
        eye.set(1, 1, 0, 0, 1.0);
        assert_eq!(separable_conv2d(&x, &delta, &eye, &ConvGeometry::same(1, 2)).unwrap(), x);
    }

    #[test]
    fn valid_range_bounds() {
        // ix = o*2 - 1 must be in [0, 5)
        assert_eq!(valid_range(4, 5, 2, -1), (1, 3));
        assert_eq!(valid_range(3, 3, 1, 0), (0, 3));
        assert_eq!(valid_range(3, 3, 1, 5), (0, 0));
    }
}
