//! Command implementations behind the `seg` binary.

pub mod ablate;
pub mod analyze;
pub mod checkpoint;
pub mod config;
pub mod evaluate;
pub mod train;

use atrous_seg::data::{generate_shapes, DatasetManifest, Sample};
pub use atrous_seg::{Result, SegError};

use crate::config::{DataSource, RunConfig};

/// Process exit code for a failed command.
pub fn exit_code(e: &SegError) -> i32 {
    match e {
        SegError::Config(_) | SegError::Plan(_) => 2,
        SegError::Parse { .. }
        | SegError::Data(_)
        | SegError::Io(_)
        | SegError::Shape(_)
        | SegError::Size(_)
        | SegError::EmptyOutput(_)
        | SegError::UndefinedMetric(_) => 3,
        SegError::NonFinite(_) | SegError::MissingGradient(_) => 4,
    }
}

fn load_manifest(cfg: &RunConfig, path: &str, what: &str) -> Result<Vec<Sample>> {
    if path.is_empty() {
        return Err(SegError::Config(format!("data.{what}_manifest is not set")));
    }
    let m = DatasetManifest::load(&cfg.resolve(path))?;
    if let Some(k) = m.num_classes {
        if k != cfg.arch.num_classes {
            return Err(SegError::Config(format!(
                "{what} manifest declares {k} classes but the model has {}",
                cfg.arch.num_classes
            )));
        }
    }
    let samples = m.load_all()?;
    for s in &samples {
        s.label.validate(cfg.arch.num_classes)?;
    }
    Ok(samples)
}

pub fn load_train(cfg: &RunConfig) -> Result<Vec<Sample>> {
    let d = &cfg.data;
    match d.source {
        DataSource::Shapes => generate_shapes(0, d.shapes_train, d.shapes_side, cfg.arch.num_classes, d.shapes_seed),
        DataSource::Manifest => load_manifest(cfg, &d.train_manifest, "train"),
    }
}

/// Held-out samples. Generated shape images continue after the training indices.
pub fn load_eval(cfg: &RunConfig) -> Result<Vec<Sample>> {
    let d = &cfg.data;
    match d.source {
        DataSource::Shapes => {
            generate_shapes(d.shapes_train as u64, d.shapes_eval, d.shapes_side, cfg.arch.num_classes, d.shapes_seed)
        }
        DataSource::Manifest => load_manifest(cfg, &d.eval_manifest, "eval"),
    }
}
