//! Sparse equation discovery from highly noisy time-series.
//!
//! The pipeline fits `ẋ_j = Σ_i ξ_ij f_i(x)` over a polynomial library by
//! weighted, FFT-augmented ensemble least squares and removes one functional
//! per iteration, scoring each intermediate model by evolving it and
//! comparing against the data. See the crate README for the module map.

pub mod assess;
pub mod cull;
pub mod dynsys;
pub mod error;
pub mod evolve_fom;
pub mod io;
pub mod library;
pub mod linalg;
pub mod model;
pub mod ode;
pub mod pipeline;
pub mod preprocess;
pub mod regress;
pub mod spectral;

pub use error::{Error, FailureKind, Result};
