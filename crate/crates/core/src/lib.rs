//! Max-min rate optimization for a reflecting-surface-aided joint-transmission
//! downlink network.
//!
//! The library simulates a multicell MIMO downlink in which several base
//! stations jointly serve cell-edge users with the help of a passive
//! reflecting surface, and solves the max-min achievable-rate design problem
//! over the transmit beamformers and the surface phase shifts.
//!
//! Module map:
//!
//! - [`config`] / [`scenario`] — scenario constants, geometry, path loss,
//!   Rician/Rayleigh channel synthesis, phase quantization.
//! - [`metrics`] — effective channels, achievable rates, MSE matrices, and
//!   the closed-form receiver/weight updates that tie rate and MSE together.
//! - [`single_user`] — the `K = 1` solver: closed-form beamforming driven by
//!   a dual subgradient loop, and majorization-minimization for the phases.
//! - [`conic`] — a small dense interior-point solver for the second-order
//!   cone and semidefinite programs used by the multiuser path, plus a JSON
//!   adapter seam for an external solver.
//! - [`multi_user`] — the `K > 1` solver: SOCP beamforming, semidefinite
//!   relaxation of the phase problem with Gaussian randomization, and the
//!   guarded alternating loop.
//! - [`relay`] — the half-duplex amplify-and-forward baseline.
//! - [`bench`] — experiment harness: presets, Monte-Carlo sweeps, baselines,
//!   CSV emission.

// Index-parallel loops mirror the block structure of the math, and negated
// comparisons are the NaN-rejecting form of the domain checks.
#![allow(clippy::needless_range_loop)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod config;
pub mod conic;
pub mod linalg;
pub mod metrics;
pub mod multi_user;
pub mod relay;
pub mod rng;
pub mod scenario;
pub mod single_user;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid scenario or algorithm configuration.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    /// A mathematical precondition on an input value was violated.
    #[error("domain error: {0}")]
    Domain(String),
    /// Matrix dimensions are inconsistent with the scenario.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// A numeric operation failed (singular matrix, non-finite value, ...).
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// The block system of the dual beamforming update is singular.
    #[error("degenerate dual system: {0}")]
    DegenerateDual(String),
    /// The conic solver could not produce a usable solution.
    #[error("conic solver: {0}")]
    Conic(String),
    /// The external solver adapter failed.
    #[error("solver adapter: {0}")]
    Adapter(String),
    /// An iterative solver decreased an objective that must not decrease.
    #[error("monotonicity violated at iteration {iteration}: {details}")]
    Monotonicity {
        /// Outer iteration at which the decrease was detected.
        iteration: usize,
        /// Human-readable description of the violation.
        details: String,
    },
    /// Command-line or experiment-specification usage error.
    #[error("usage error: {0}")]
    Usage(String),
    /// I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
