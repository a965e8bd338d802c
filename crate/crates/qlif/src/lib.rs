pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod fsutil;
pub mod idx;
pub mod trainer;

pub use error::{Error, Result};
