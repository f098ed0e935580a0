//! Rank tests for an estimated matrix.
//!
//! Given `M̂` with `√n (M̂ − M₀) → N(0, Γ)` and an estimate `Γ̂`, the crate
//! tests `H₀: rank(M₀) = m` with three statistics, each the scaled distance
//! from `M̂` to the rank-`m` matrices in a different metric:
//!
//! * Λ₁ — Frobenius distance, weighted chi-squared limit;
//! * Λ₂ — distance whitened by the projected covariance, chi-squared limit;
//! * Λ₃ — `Γ̂⁻¹`-weighted distance (minimum discrepancy), chi-squared limit.
//!
//! Quantiles come either from the limit laws or from the constrained
//! bootstrap, which recentres resampled fluctuations at the constrained
//! estimate so replicates mimic the null even when it is false. A sliced
//! inverse regression front end and a Monte Carlo campaign runner sit on top.

pub mod asymptotics;
pub mod campaign;
pub mod discrepancy;
pub mod error;
pub mod linalg;
pub mod lsce;
pub mod rng;
pub mod sir;
pub mod stats;

pub use error::{Error, Result};
pub use linalg::EstimatedMatrix;
pub use rank_test::{
    estimate_rank, run_test, Lambda1Approx, RankEstimate, RankTestResult, RankTestSpec,
    TestMethod, TiePolicy,
};
pub use stats::{StatKind, StatValue};
