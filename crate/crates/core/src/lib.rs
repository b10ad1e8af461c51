//! Tensor-train approximation of Koopman generators of stochastic
//! differential equations from sampled data.

pub mod amuse;
pub mod basis;
pub mod error;
pub mod generator_data;
pub mod io;
pub mod linalg;
pub mod presets;
pub mod rep_formula;
pub mod sde;
pub mod spectral;
pub mod tgedmd;
pub mod tt;

pub use error::{Error, Result};
