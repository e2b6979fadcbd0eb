pub mod error;
pub mod estimates;
pub mod harness;
pub mod inequality;
pub mod model;
pub mod solver;
pub mod spectral;

pub use error::{Error, Result};
