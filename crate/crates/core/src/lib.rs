pub mod dataset;
pub mod error;
pub mod eval;
pub mod loss;
pub mod model;
pub mod report;
pub mod simulator;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
