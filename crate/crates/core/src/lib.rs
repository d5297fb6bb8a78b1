pub mod autograd;
pub mod cli;
pub mod evaluation;
pub mod error;
pub mod image;
pub mod losses;
pub mod network;
pub mod nn;
pub mod renderer;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
