//! Track defect inspection on a synthetic miniature railway.
//!
//! - [`labels`]: component labels, footage names, the fifteen defect cases.
//! - [`scene`]: procedural track renderer and dataset builders.
//! - [`inspect`]: reference-comparison pipeline (preprocess, register,
//!   difference, segment, localize, decide, report).
//! - [`cnn`]: a small convolutional classifier written from scratch.
//! - [`metrics`]: confusion matrices, ROC sweeps, Likert scoring, statistics.

pub mod cnn;
pub mod inspect;
pub mod labels;
pub mod metrics;
pub mod scene;

pub use labels::{ComponentId, ComponentKind, DefectSet, FootageId, PairingPolicy, RunManifest, TestCase};
pub use scene::{DatasetSpec, RenderedScene, SceneConfig, TrackGeometry};
