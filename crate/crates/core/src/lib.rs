//! Object-level approximate nearest-neighbour search over sets of feature vectors.

pub mod baselines;
pub mod bench;
pub mod buffer;
pub mod error;
pub mod gamma;
pub mod lsh;
pub mod model;
pub mod query;

pub use error::{Error, Result};
