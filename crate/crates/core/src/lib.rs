//! NALU and iNALU arithmetic cells on a small reverse-mode tape, with the
//! training loop and experiment harness used to compare them.

pub mod autodiff;
pub mod cells;
pub mod datagen;
mod error;
pub mod harness;
pub mod regularization;
mod tensor;
pub mod trainer;

pub use cells::{CellHyper, CellParams, CellVariant, LayerTrace, Network};
pub use datagen::{Dataset, DistributionSpec, Operation, Split, TaskKind, TaskSpec};
pub use error::{Error, Result};
pub use regularization::RegConfig;
pub use tensor::Tensor;
pub use trainer::{InitSpec, ModelSpec, TrainConfig, TrainReport};
