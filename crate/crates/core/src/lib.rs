//! Sparse-input hierarchical networks and their ensembles.

pub mod cli;
pub mod data;
pub mod diagnostics;
pub mod ensemble;
pub mod error;
pub mod model_file;
pub mod network;
pub mod numerics;
pub mod optimizer;
pub mod tuning;

pub use error::{Error, Result};
