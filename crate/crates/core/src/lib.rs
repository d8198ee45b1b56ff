pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod models;
pub mod objective;
pub mod rng;
pub mod synthesis;
pub mod trainer;

pub use error::{Error, Result};
