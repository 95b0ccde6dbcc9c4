//! Numerical toolkit for frequency functions, almost-symmetry and quantitative
//! stratification of solutions to divergence-form elliptic equations.

pub mod error;
pub mod field;
pub mod frequency;
pub mod polyharm;
pub mod operator;
pub mod quad;
pub mod solver;
pub mod stratify;
pub mod symmetry;
pub mod util;

pub use error::{Error, Result};

/// Library version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
