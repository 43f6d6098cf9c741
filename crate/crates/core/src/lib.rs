pub mod actor;
pub mod cli;
pub mod config;
pub mod critic;
pub mod encoder;
pub mod env;
pub mod error;
pub mod eval;
pub mod nn;
pub mod policy;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
