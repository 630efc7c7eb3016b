//! Temporal feature blending for video features.
//!
//! Enhances a frame's `C×H×W` feature map with its temporal neighbors using
//! per-pixel adaptive weights from a small convolution network, neighbor
//! pre-aggregation, and a similarity-gated blend. Everything is implemented
//! from scratch on a minimal tensor type, with a reverse-mode tape for
//! training the weight network on synthetic sequences.
//!
//! * [`tensor`]: `Tensor3`, convolution, softmax, cosine similarity
//! * [`autodiff`]: tape, finite-difference checking, SGD
//! * [`blender`]: relation features, adaptive weights, adjustment, blend, baselines
//! * [`synth`]: moving-blob feature sequences
//! * [`harness`]: training, evaluation, oracle comparison, cost-ratio sweeps

pub mod autodiff;
pub mod blender;
pub mod error;
pub mod graph;
pub mod harness;
pub mod io;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Precision, Real, Shape, Tensor3};
