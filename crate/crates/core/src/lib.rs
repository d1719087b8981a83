//! Atrous-convolution encoder-decoder semantic segmentation.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`, which is what the rest of the workspace uses.

pub mod arch;
pub mod data;
pub mod error;
pub mod graph;
pub mod label;
pub mod metrics;
pub mod ops;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Result, SegError};
pub use label::{LabelMap, VOID};
pub use scalar::Scalar;
pub use tensor::{Shape, Tensor4};

pub type Tensor = tensor::Tensor4<f64>;
pub type Params = params::ParamStore<f64>;
pub type Sgd = optim::SgdState<f64>;
pub type BatchNorm = ops::BatchNormParams<f64>;
