//! Numerical toolkit for m-subharmonic functions on Hermitian manifolds.

pub mod cones;
pub mod curvature;
pub mod error;
pub mod fm;
pub mod grid;
pub mod hermitian;
pub mod regularize;
pub mod solver;
pub mod subsets;
pub mod suites;

pub use error::{Error, Result};
