//! Homogenization, fluctuation limits and exit laws for small-noise
//! diffusions with fast periodic coefficients.
//!
//! The crate covers the whole pipeline for one-dimensional problems:
//!
//! * [`torus`] and [`quad`]: periodic grids and quadrature;
//! * [`homogenize`]: cell problems, invariant densities, averaged
//!   coefficients, regime classification and the effective flow;
//! * [`sde`]: simulation of the multiscale SDE and of the conditioned
//!   rough-potential dynamics, plus scale/speed functions;
//! * [`limits`]: the limiting Ornstein–Uhlenbeck fluctuations, exit-time
//!   laws and the rough-potential conditional exit law;
//! * [`harness`]: reproducible Monte Carlo ensembles and reports.

pub mod error;
pub mod exit;
pub mod fields;
pub mod harness;
pub mod homogenize;
pub mod limits;
pub mod quad;
pub mod sde;
pub mod torus;

pub use error::{Error, Result};
