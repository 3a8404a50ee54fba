//! Power-variation limit theorems for quadratic-mean integrals against
//! Gaussian processes with locally stationary increments.
//!
//! The crate is organized bottom-up: [`kernels`] provides covariance models,
//! [`pvar`] the p-variation seminorms of functions and covariance surfaces,
//! [`rs_integral`] double Riemann-Stieltjes sums and second moments of
//! quadratic-mean integrals, [`sampler`] Gaussian sampling of integral
//! increments, and [`gladyshev`] the power-variation statistic together with
//! the mean and almost-sure convergence experiments.

#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![cfg_attr(test, allow(clippy::excessive_precision))]

pub mod error;
pub mod exec;
pub mod gladyshev;
pub mod integrand;
pub mod kernels;
pub mod partition;
pub mod pvar;
pub mod rs_integral;
pub mod sampler;
pub mod special;

pub use error::{Error, Result};
pub use exec::Execution;
pub use integrand::{Integrand, Piece};
pub use kernels::{Family, Kernel, KernelConfig, LocalVariance, Rectangle, SignStructure};
pub use partition::Partition;
