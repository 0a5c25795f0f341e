pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod geometry;
pub mod inference;
pub mod intensity;
pub mod io;
pub mod interactions;
pub mod moves;
pub mod points;
pub mod sampler;

pub use error::{Error, Result};
