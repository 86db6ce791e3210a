//! Quantile-based multiple contrast testing.
//!
//! This crate tests families of linear contrasts of group quantiles
//! (medians, IQRs, or arbitrary quantile contrasts) for two-sided,
//! non-inferiority, and TOST equivalence hypotheses. Four decision
//! procedures are available - Bonferroni-adjusted asymptotic and
//! permutation tests plus asymptotic and groupwise-bootstrap multiple
//! contrast test procedures - each combined with one of three estimators
//! of the quantile covariance matrix.
//!
//! The [`simlab`] module reproduces family-wise error rate and power
//! studies over seeded scenario grids; the [`oracles`] module holds the
//! independent brute-force references behind the `selftest` command.

pub mod cli;
pub mod contrasts;
pub mod covest;
pub mod critvals;
pub mod error;
pub mod inference;
pub mod oracles;
pub mod quantiles;
pub mod simlab;
pub mod statdist;

pub use error::{Error, Result};
