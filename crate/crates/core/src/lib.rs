//! Desk-scale WiFi CSI human-activity recognition.
//!
//! The crate is organised as a pipeline:
//!
//! - [`channel`]: multipath Doppler channel model and synthetic CSI stream generation
//! - [`dataset`]: sliding-window segmentation into clip volumes, splits, persistence
//! - [`nn`]: dense tensor kernels with hand-written adjoints and a finite-difference checker
//! - [`model`]: the C3D classifier, optional soft attention, training and checkpoints
//! - [`baseline`]: temporal-mean features, PCA and k-nearest-neighbour classification
//! - [`eval`]: confusion matrices, per-class metrics and report rendering
//! - [`verify`]: the gradient verification suite used by `csilab gradcheck`
//! - [`config`]: the human-editable lab manifest

pub mod baseline;
pub mod channel;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod model;
pub mod nn;
pub mod rng;
pub mod verify;

pub use channel::{ActivitySpec, ChannelConfig, CsiStream, PathComponent, SpeedProfile, StaticPath};
pub use dataset::{CsiClip, Dataset, NormStats, Split, WindowingParams};
pub use model::{C3DConfig, Model, TrainConfig, TrainHistory};
pub use nn::Tensor;
