//! A small convolutional network written from scratch: NHWC tensors,
//! conv/pool/dense layers with exact gradients, Adam, inverted dropout,
//! a training loop, freeze-and-retrain, and a binary model format.

use std::path::PathBuf;

use thiserror::Error;

pub mod adam;
pub mod io;
pub mod layers;
pub mod model;
pub mod tensor;
pub mod train;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use io::{load_model, read_history_csv, save_model, write_history_csv, AnyModel};
pub use layers::{Mode, ParamGrads};
pub use model::{custom_architecture, standard_architecture, Layer, LayerSpec, Model, Params};
pub use tensor::{Precision, Scalar, Tensor};
pub use train::{
    evaluate, freeze_and_retrain, predict, train, BatchIterator, Dataset, EpochRecord, History,
    Prediction, TrainConfig,
};

#[derive(Debug, Error)]
pub enum CnnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid label: {0}")]
    Label(String),
    #[error("non-finite value in {context}{}", layer.map(|l| format!(" at layer {l}")).unwrap_or_default())]
    NonFinite { layer: Option<usize>, context: String },
    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Diverged { epoch: usize, step: usize, detail: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("model format version {found}, expected {expected}")]
    Version { found: u16, expected: u16 },
    #[error("model file truncated at byte {offset}")]
    Truncated { offset: usize },
    #[error("dimension overflow")]
    DimOverflow,
    #[error("malformed file: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {detail}")]
    Image { path: PathBuf, detail: String },
}
