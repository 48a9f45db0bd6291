//! Volumetric segmentation engine: dense 64-bit tensors with reverse-mode
//! differentiation, a lightweight 3D encoder-decoder (separable convolution,
//! bucket-conditioned normalization, cross-slice attention and attention/gate
//! skip fusion), a synthetic multi-modal data pipeline, training and
//! evaluation metrics.

pub mod autodiff;
pub mod checks;
pub mod data;
pub mod error;
pub mod hash;
pub mod kernels;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod ops;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
