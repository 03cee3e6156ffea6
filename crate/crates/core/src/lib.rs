pub mod cli;
pub mod data;
pub mod diffcore;
pub mod metrics;
pub mod models;
pub mod trainer;
pub mod error;

pub use error::{Error, Result};
