//! Network description, output-stride planning, model assembly and inference.

pub mod infer;
pub mod model;
pub mod plan;
pub mod spec;

pub use infer::{argmax_labels, predict_multiscale, predict_probs, scaled_size};
pub use model::{aspp_graph, build_aspp, build_backbone, build_decoder, build_graph, AsppConfig, Model};
pub use plan::{plan_blocks, plan_output_stride, scale_aspp_rates, PlannedArch, PlannedBlock, TapName, TapPoint};
pub use spec::{ArchSpec, BlockKind, BlockSpec, HeadConv, LowLevelTaps};
