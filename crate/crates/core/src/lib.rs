pub mod cli;
pub mod error;
pub mod gradcore;
pub mod harness;
pub mod model;
pub mod rpmgen;

pub use error::{Error, Result};
