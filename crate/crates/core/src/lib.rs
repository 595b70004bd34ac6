//! Simulator for the dissipative quantum eigensolver: weak local
//! measurements with resampling on failure, stopped by rules over the
//! outcome stream.

pub mod agsp;
pub mod analytics;
pub mod circuits;
pub mod config;
pub mod error;
pub mod experiments;
pub mod instrument;
pub mod linalg;
pub mod noise;
pub mod pauli;
pub mod stopping;
pub mod trajectory;

pub use error::{DqeError, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
