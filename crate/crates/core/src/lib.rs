//! Stability certificates and Euler–Maruyama simulation for
//! regime-switching diffusions.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dirichlet;
pub mod em;
pub mod error;
pub mod generator;
pub mod measure;
pub mod ot;
pub mod partition;
pub mod rng;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
pub use generator::{GeneratorMatrix, StationaryDistribution, Tolerances};
pub use spectral::{RegimeBounds, SpectralCertificate, StepsizeBound};
