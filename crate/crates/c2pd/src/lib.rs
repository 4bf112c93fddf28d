pub mod cli;
pub mod config;
pub mod error;
pub mod imageio;
pub mod selftest;
pub mod train;

pub use error::{Error, Result};
