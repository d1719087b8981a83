//! Image and label I/O, the synthetic shapes dataset, augmentation.

pub mod augment;
pub mod manifest;
pub mod netpbm;
pub mod shapes;

pub use augment::{augment, AugmentConfig};
pub use manifest::{gen_shapes_dataset, write_dataset, DatasetManifest};
pub use shapes::{generate_shapes, shape_sample};

use crate::error::{Result, SegError};
use crate::label::LabelMap;
use crate::tensor::Tensor4;
use crate::train::Batch;

/// One `(1,3,h,w)` image in `[0,1]` with its labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor4<f64>,
    pub label: LabelMap,
}

impl Sample {
    pub fn new(image: Tensor4<f64>, label: LabelMap) -> Result<Self> {
        let s = image.shape();
        if s.n != 1 || s.c != 3 || s.h != label.height() || s.w != label.width() {
            return Err(SegError::Shape(format!(
                "sample image {s} does not match {}x{} labels",
                label.height(),
                label.width()
            )));
        }
        Ok(Self { image, label })
    }
}

/// Stacks equally sized samples into one batch.
pub fn collate(samples: &[Sample]) -> Result<Batch<f64>> {
    let first = samples.first().ok_or_else(|| SegError::Data("empty batch".into()))?.image.shape();
    let mut data = Vec::with_capacity(samples.len() * first.numel());
    for s in samples {
        if s.image.shape() != first {
            return Err(SegError::Shape(format!("batch mixes {} and {}", first, s.image.shape())));
        }
        data.extend_from_slice(s.image.data());
    }
    let images = Tensor4::from_vec(first.with_n(samples.len()), data)?;
    Batch::new(images, samples.iter().map(|s| s.label.clone()).collect())
}
