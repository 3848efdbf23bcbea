//! Viewing-graph optimization.
//!
//! Recovers global camera rotations and positions from pairwise relative
//! rotations and translation directions.

pub mod accel;
pub mod cost;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod graph;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod pgo;
pub mod pipeline;
pub mod rotavg;
pub mod transolve;
pub mod types;

pub use error::{Error, Result};
