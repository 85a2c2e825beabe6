//! Two-stage background reconstruction and foreground segmentation.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`], [`conv`], [`graph`], [`optim`]: a dense `f64` tensor type with a
//!   tape-based reverse-mode autodiff graph and momentum SGD.
//! - [`nn`]: layer descriptors, parameter registry and network forward passes.
//! - [`background`]: the convolutional encoder-decoder that reconstructs a clean
//!   background from a frame.
//! - [`segmentation`]: the multi-channel fully-convolutional segmenter that takes the
//!   frame stacked with its background.
//! - [`pipeline`], [`checkpoint`], [`config`]: the bilinear bridge, multi-task loss,
//!   three-step training schedule, binary checkpoints and run configuration.
//! - [`baselines`]: PCA, incremental robust PCA and threshold classifiers.
//! - [`data`]: CDNet-layout IO, synthetic scenes, augmentation and F-measure scoring.

pub mod background;
pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod conv;
pub mod data;
pub mod error;
pub mod graph;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod segmentation;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Graph, NodeId};
pub use tensor::Tensor;
