//! Heterophily-aware scene graph generation.

pub mod art;
pub mod cli;
pub mod config;
pub mod error;
pub mod evalmetrics;
pub mod hmp;
pub mod numcore;
pub mod rfp;
pub mod scenedata;
pub mod trainer;

pub use error::{Error, Result};
