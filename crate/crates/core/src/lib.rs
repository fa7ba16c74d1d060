//! Numerical toolkit for the Hill operator, Floquet data and the partially
//! linearized Birkhoff map of KdV near one-gap potentials.

pub mod asympt;
pub mod curve;
pub mod error;
pub mod floquet;
pub mod fourier;
pub mod hill;
pub mod nfmap;
pub mod paracalc;
pub mod par;
pub mod potential;
pub mod verify;
pub mod quad;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
pub use potential::Potential;
