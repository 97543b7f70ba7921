//! Numerical laboratory for optimal transport regularity on the flat torus.
//!
//! The crate computes optimal couplings between Poisson point clouds and
//! the Lebesgue measure on `[-L/2, L/2)^d`, compares displacements with
//! solutions of the linearized (Poisson) equation, and measures the local
//! quantities used by harmonic approximation and Campanato iteration.

pub mod error;
pub mod eulerian;
pub mod experiment;
pub mod field;
pub mod harmonic;
pub mod matching;
pub mod measure;
pub mod regularity;
pub mod torus;
pub mod transport;

pub use error::{Error, Result};
