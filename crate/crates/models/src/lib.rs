//! Inverse models mapping a wall's scattered-field features to 32x32
//! dielectric or conductivity rasters, plus their evaluation.

pub mod arch;
pub mod data;
pub mod eval;
pub mod model;
pub mod train;

use thiserror::Error;

pub use arch::Architecture;
pub use model::TrainedModel;
pub use train::{GanEpoch, SupervisedEpoch, TrainConfig, TrainingRecord};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("training diverged at epoch {epoch}: {what} is not finite")]
    Diverged { epoch: usize, what: &'static str },
    #[error("{0}")]
    EmptySplit(String),
    #[error("input has {got} features, expected {expected}")]
    Input { got: usize, expected: usize },
    #[error("model manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Nn(#[from] wallnet_nn::NnError),
    #[error("{path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
}
