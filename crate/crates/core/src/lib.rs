pub mod cli;
pub mod decoder;
pub mod dla;
pub mod error;
pub mod flops;
pub mod harness;
pub mod model;
pub mod nn;
pub mod perceiver;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Graph, Tensor, Var};
