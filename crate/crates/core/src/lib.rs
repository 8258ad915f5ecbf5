pub mod commands;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod loss;
pub mod poroi;
pub mod synth;

pub use error::{Error, Result};
