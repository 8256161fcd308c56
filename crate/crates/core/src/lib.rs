pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod inference;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod trainer;
pub mod volume;

pub use error::{DicoError, Result};
