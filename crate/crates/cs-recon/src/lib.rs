//! Sparse signal reconstruction from underdetermined linear measurements.
//!
//! The problem: recover an N-dimensional signal with K nonzero entries from
//! M < N linear measurements y = F x0. This crate provides
//!
//! * iterative thresholding solvers with an annealed threshold, from the
//!   plain per-coordinate iteration to its damped, rescaled, and
//!   Onsager-corrected variants ([`solvers`]),
//! * the theoretical success/failure phase boundary for l1 reconstruction,
//!   computed two independent ways ([`phase`]),
//! * exact small-instance l1 minimizers used as ground truth ([`oracle`]),
//! * deterministic seeded instance generation ([`gen`]), and
//! * experiment drivers that sweep the phase plane and compare solver
//!   convergence ([`harness`]).
//!
//! All randomness is derived from explicit 64-bit seeds through a counter
//! based generator, so every experiment is reproducible bit for bit, and
//! individual matrix entries can be regenerated in isolation.

pub mod gen;
pub mod harness;
pub mod model;
pub mod oracle;
pub mod phase;
pub mod shrinkage;
pub mod solvers;

use thiserror::Error;

/// Unified error type for the whole crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Vectors that must have equal length do not.
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    /// Matrix entry buffer does not match the declared dimensions.
    #[error("dimension mismatch: {rows}x{cols} matrix needs {} entries, got {got}", rows * cols)]
    DimensionMismatch { rows: usize, cols: usize, got: usize },

    /// A dimension that must be positive is zero.
    #[error("{what} must be positive")]
    EmptyDimension { what: &'static str },

    /// Threshold parameter k passed to the shrinkage function is negative.
    #[error("threshold k must be nonnegative, got {k}")]
    NegativeThreshold { k: f64 },

    /// Damping parameter gamma must be nonnegative.
    #[error("damping gamma must be nonnegative, got {gamma}")]
    NegativeGamma { gamma: f64 },

    /// Observations are inconsistent with the stored matrix and signal.
    #[error("observation vector deviates from F x0 by {max_dev:.3e} at entry {index}")]
    ObservationMismatch { index: usize, max_dev: f64 },

    /// A solver step would divide by a vanishing rescale factor.
    #[error("rescale factor 1 {op} gamma = {denom:.3e} too close to zero at step {step}")]
    RescaleDivergence { op: char, denom: f64, step: usize },

    /// Configuration field outside its valid range.
    #[error("invalid configuration: {what}")]
    InvalidConfig { what: String },

    /// Argument to a phase-boundary routine outside its supported range.
    #[error("{name} must lie strictly inside ({lo}, {hi}), got {value}")]
    DomainOut {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    /// The objective maximizer landed on the scan boundary, so the reported
    /// optimum would be an artifact of the scan range.
    #[error("maximizer for alpha = {alpha} hit the scan boundary at z = {z}")]
    BoundaryMaximizer { alpha: f64, z: f64 },

    /// No sign change found when bracketing a root.
    #[error("no root bracket found for rho = {rho} in [{lo}, {hi}]")]
    NoBracket { rho: f64, lo: f64, hi: f64 },

    /// A curve computation failed at one grid point.
    #[error("threshold curve failed at alpha = {alpha}: {source}")]
    CurvePoint {
        alpha: f64,
        #[source]
        source: Box<Error>,
    },

    /// Instance too large for an exact oracle.
    #[error("instance too large for {oracle} oracle: {what}")]
    OracleScale { oracle: &'static str, what: String },

    /// Measurement matrix does not have full row rank.
    #[error("matrix is rank deficient: row rank {rank} < {rows}")]
    RankDeficient { rank: usize, rows: usize },

    /// An iterative routine did not terminate within its iteration cap.
    #[error("exceeded iteration cap of {cap}")]
    IterationCap { cap: usize },

    /// Generator specification is inconsistent.
    #[error("invalid generator spec: {what}")]
    InvalidGenSpec { what: String },

    /// JSON (de)serialization failure.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
