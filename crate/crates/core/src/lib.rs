pub mod attention;
pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod fault;
pub mod network;
pub mod nn;
pub mod tensor;
pub mod train;

pub use autodiff::{Graph, Var};
pub use error::{Error, Result};
pub use network::{build_model, ModelConfig, SegModel};
pub use tensor::Tensor;
