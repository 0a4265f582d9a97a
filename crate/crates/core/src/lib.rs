//! Trainable gray-scale mathematical morphology.
//!
//! Dilation and erosion layers with learnable structuring elements are stacked
//! into two complementary paths whose outputs are blended by learned sigmoid
//! weight maps. Training minimizes patchwise DSSIM plus MAE with Adam.

pub mod cli;
pub mod convnet;
pub mod data;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod morph;
pub mod network;
pub mod optim;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use network::{Network, NetworkSpec};
pub use tensor::Tensor;
