//! Differentiable operators. Every forward has a matching backward that
//! returns input gradients and, where the op has weights, weight gradients.

mod conv;
mod loss;
mod norm;
mod pool;

pub use conv::{
    conv2d, conv2d_backward, depthwise_conv2d, depthwise_conv2d_backward, pointwise_conv2d,
    separable_conv2d, ConvGeometry, Padding,
};
pub use loss::{softmax_channels, softmax_cross_entropy};
pub use norm::{
    batch_norm, batch_norm_backward, batch_norm_forward, update_running_stats, BatchNormParams,
    BnCache, DEFAULT_EPS, DEFAULT_MOMENTUM,
};
pub use pool::{global_avg_pool, global_avg_pool_backward};

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Gradient of `relu` given its output: passes `dy` where the output is positive.
pub fn relu_backward<T: Scalar>(y: &Tensor4<T>, dy: &Tensor4<T>) -> Result<Tensor4<T>> {
    y.zip_map(dy, |o, g| if o > T::zero() { g } else { T::zero() })
}

/// Separable convolution with batch norm + ReLU between the depthwise and
/// pointwise stages, as used inside backbone blocks.
pub fn separable_conv2d_bn_relu<T: Scalar>(
    x: &Tensor4<T>,
    depth_k: &Tensor4<T>,
    bn: &mut BatchNormParams<T>,
    point_k: &Tensor4<T>,
    g: &ConvGeometry,
    training: bool,
) -> Result<Tensor4<T>> {
    let d = depthwise_conv2d(x, depth_k, g)?;
    let d = batch_norm(&d, bn, training)?.relu();
    pointwise_conv2d(&d, point_k)
}
