//! Trainable CNN toolkit for skin-lesion classification with built-in
//! decision-support visualizations.
//!
//! The crate covers the full pipeline with no external ML framework:
//!
//! * [`network`] — an 8-conv-layer / 3-dense-block architecture with exact
//!   backpropagation, built on the hand-rolled kernels in [`ops`];
//! * [`data`] — manifest loading, image decoding, 300x300 preprocessing and
//!   the stochastic crop/rotate/flip/color augmentation pipeline;
//! * [`train`] / [`optim`] — deterministic Adam training with checkpointing;
//! * [`eval`] — ROC-AUC (exact, tie-aware) and confusion reports;
//! * [`viz`] — per-filter feature-map overlays, Fig-style grids, gradient
//!   saliency and occlusion sensitivity maps, rendered to PNG.
//!
//! Every stochastic step derives from one `u64` seed, so training runs,
//! checkpoints and rendered images are bit-reproducible for a fixed seed
//! and thread count.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod interp;
pub mod network;
pub mod ops;
pub mod optim;
mod rng;
pub mod tensor;
pub mod train;
pub mod viz;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use error::{Error, Result};
pub use eval::{evaluate, EvalReport};
pub use network::{build_model, forward, Model, NetworkConfig};
pub use tensor::Tensor;
pub use train::{train, TrainConfig};
