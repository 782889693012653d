//! Numerical laboratory for maximal estimates of unions of regulus strips.

pub mod conditions;
pub mod duality;
pub mod error;
pub mod experiments;
pub mod family;
pub mod geom;
pub mod heisenberg;
pub mod measure;
pub mod rng;

pub use error::{Error, Result};
