//! Continuous-time Markov chain approximations of correlated diffusions.
//!
//! Diffusions are replaced by birth-death chains on uniform grids whose
//! local drift and variance match the SDE coefficients. Joint chains come
//! either from a Kronecker sum plus an explicit correlation operator or
//! from conditional generators nested along the variables. Transition
//! kernels are computed by uniformization, copulas are read off the joint
//! distribution function, and the approximation is checked against Fourier
//! symbols, closed-form laws and Monte Carlo samples.

pub mod conditional;
pub mod copula;
pub mod error;
pub mod export;
pub mod genlib;
pub mod grid;
pub mod kernel;
pub mod mc_oracle;
pub mod sparse;
pub mod spectral;
pub mod tensor_ops;

pub use error::{MimikError, Result};
pub use genlib::{Generator, ModelSpec1D};
pub use grid::StateGrid;
