//! A deliberately small neural-network engine: dense and 1-D convolution
//! layers, pointwise activations, binary cross-entropy, reverse-mode
//! gradients and Adam.
//!
//! Everything is generic over [`Float`] so that gradient checks can run in
//! `f64` while training runs in `f32`. Matrix products go through
//! `matrixmultiply`.

mod float;
pub mod io;
pub mod layers;
pub mod loss;
pub mod network;
pub mod optim;
mod tensor;

use thiserror::Error;

pub use float::Float;
pub use layers::{Layer, LayerSpec};
pub use loss::{bce_loss, mse_loss, BCE_EPS};
pub use network::Network;
pub use optim::{Adam, AdamConfig};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Dimension { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("{0}")]
    State(String),
    #[error("non-finite value after layer {layer} ({kind})")]
    NonFinite { layer: usize, kind: &'static str },
    #[error("weight file: {0}")]
    Format(String),
    #[error("weight file checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("{path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
}
