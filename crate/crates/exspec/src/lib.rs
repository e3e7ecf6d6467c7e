//! Numerical study of the cubic nonlinear Schrodinger equation
//! `i dpsi/dt = (-Laplace + V) psi + lambda |psi|^2 psi` on radial
//! functions in three dimensions, around a two-bound-state potential well.
//!
//! The library continues the nonlinear excited-state family, decomposes the
//! spectrum of the (non-self-adjoint) linearization around it, computes the
//! resonance width of the embedded internal mode by a scalar fixed-point
//! equation and by direct eigensolves, scans weighted resolvent norms on
//! the continuous spectrum, propagates the linear and nonlinear flows, and
//! constructs initial data converging to the excited orbit by contraction
//! mapping. Everything runs on a uniform radial grid at desk scale; each
//! module carries the verification tests for its own claims.

pub mod error;
pub mod linalg;

pub mod grid;
pub mod linear_spectrum;
pub mod nonlinear_states;

pub mod linearized;

pub mod evolution;
pub mod resolvent;

pub mod stable_manifold;

pub mod cli;

pub use error::{Error, Result};
