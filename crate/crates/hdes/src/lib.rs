//! Variational spectral solver for systems of differential equations.
//!
//! Trial solutions are truncated Chebyshev expansions whose coefficients are
//! read off the measurement probabilities of a simulated parametrized
//! quantum circuit. Function and derivative values at collocation points are
//! expectation values of variable-dependent diagonal observables, so a
//! classical optimizer (BFGS) can drive a residual loss to zero without ever
//! approximating a derivative.
//!
//! The crate is organized around the stages of that loop:
//!
//! * [`cheb`] — Chebyshev polynomials of the first kind and their exact
//!   derivatives, univariate and multivariate.
//! * [`circuit`] — the hardware-efficient Ry/CNOT ansatz and a real-valued
//!   statevector simulator.
//! * [`encoding`] — qubit allocation, basis-index splitting and the
//!   probability-to-coefficient decoding.
//! * [`observable`] — diagonal observables for values and derivatives,
//!   Pauli I/Z decomposition, expectation values from probabilities or
//!   measurement counts.
//! * [`problem`] — a small textual language for equations, domains and
//!   boundary conditions, parsed to an AST with residual evaluation.
//! * [`loss`] — collocation sampling, residual and boundary losses, and the
//!   floating-shift / tangential boundary strategies.
//! * [`solver`] — parameter initialization, an in-repo BFGS with strong
//!   Wolfe line search, the hybrid solve loop and multi-start driver.
//! * [`validate`] — validation scores against reference solutions, an RK4
//!   reference integrator and solver performance profiles.
//! * [`cli`] — the `hdes` command-line front end.

pub mod cheb;
pub mod circuit;
pub mod cli;
pub mod encoding;
pub mod error;
pub mod loss;
pub mod observable;
pub mod problem;
pub mod solver;
pub mod validate;

pub use error::{Error, Result};
