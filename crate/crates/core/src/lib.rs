//! Recursive one-over-t SGD (ROOT-SGD) with burn-in and restarting, the
//! plain and Polyak–Ruppert–Juditsky averaged SGD baselines, and tools for
//! checking the limiting covariance of the estimator.
//!
//! Modules, bottom-up:
//!
//! - [`linalg`]: dense kernels (LU solve, Kronecker products, symmetric eigen).
//! - [`oracle`]: stochastic problems with known constants.
//! - [`rootsgd`]: the optimizer, its step-size ceilings and restart schedule.
//! - [`baselines`]: SGD and averaged SGD.
//! - [`analysis`]: Cramér–Rao covariance, the `Λ_η` equation, the auxiliary
//!   linear process, Monte Carlo covariance and rate fitting.

pub mod analysis;
pub mod baselines;
pub mod error;
pub mod linalg;
pub mod oracle;
pub mod rng;
pub mod rootsgd;

pub use error::{Error, Result};
pub use linalg::DenseMatrix;
pub use oracle::{ProblemConstants, StochasticProblem};
