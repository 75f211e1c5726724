//! Multimodal semantic segmentation built around a latent cross-attention
//! encoder/decoder with swappable convolutional and volumetric preprocessors.
//!
//! The crate is self-contained: [`graph`] is a reverse-mode tape over dense
//! [`tensor`]s, [`kernels`] adds convolution and pooling, and the model,
//! objectives, data pipeline and training engine are built on top.

pub mod config;
pub mod data;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod gradcheck_suite;
pub mod graph;
pub mod kernels;
pub mod metrics;
pub mod model;
pub mod layers;
pub mod objectives;
pub mod ops;
pub mod optim;
pub mod params;
pub mod perceiver;
pub mod preprocess;
pub mod run;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Gradients, Graph, NodeId};
pub use params::{Bindings, ParamId, ParamStore};
pub use tensor::{Init, Scalar, Tensor};
