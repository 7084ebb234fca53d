pub mod approximator;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod neuralnet;
pub mod optimizer;
pub mod radio;
pub mod scenario;
pub mod simulator;

pub use error::{Error, Result};
