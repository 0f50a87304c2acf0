pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod model;
pub mod optim;
pub mod runtime;
pub mod tensor;
pub mod train;
pub mod voting;

pub use error::{Error, Result};
pub use tensor::Tensor;
