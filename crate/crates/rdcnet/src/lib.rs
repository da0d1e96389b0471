//! RDCNet: recurrent dilated convolution network for instance segmentation.
//!
//! A self-contained implementation: minimal autodiff tensor engine, the
//! recurrent SSDC architecture, the embedding soft-Jaccard loss, a Hough
//! voting decoder, instance metrics, an augmentation pipeline and data /
//! checkpoint I/O. See the `examples/` directory for runnable entry points
//! and the `rdcnet` binary for the CLI.

pub mod augment;
pub mod cli;
pub mod config;
pub mod data;
pub mod decoder;
pub mod label;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use tensor::{Tensor, TensorError};
