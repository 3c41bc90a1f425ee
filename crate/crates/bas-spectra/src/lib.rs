//! Numerical toolkit for the spectral analysis of linear advective PDEs on
//! the torus: integrates the bicharacteristic-amplitude system, estimates
//! dynamical-spectrum end-points of its cocycles, evaluates the closed-form
//! spectral predictions, and validates them against desk-scale
//! Fourier-Galerkin evolution of the underlying equations.

pub mod cocycle;
pub mod error;
pub mod flows;
pub mod linalg;
pub mod ode;
pub mod spectrum;
pub mod symbols;

pub use error::{Error, Result};
