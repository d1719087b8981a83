//! Segmentation quality, boundary quality and compute cost.

mod confusion;
pub mod flops;
pub mod trimap;

pub use confusion::{ConfusionMatrix, MiouReport};
pub use flops::{count_graph, count_multiply_adds, multiscale_cost, CostReport, LayerCost};
pub use trimap::{trimap_band, trimap_miou, void_distance_sq, TrimapAccumulator, TrimapScore};
