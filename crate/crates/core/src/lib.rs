pub mod cli;
pub mod dos;
pub mod error;
pub mod fibword;
pub mod fractal;
pub mod interval;
pub mod jacobi;
pub mod spectrum;
pub mod tracemap;
pub mod transfer;

pub use error::{Error, Result};
