//! Numerical stochastic calculus for Hilbert-space-valued processes driven by
//! truncated cylindrical Brownian motion.
//!
//! The crate emulates a quartet of embedded Hilbert spaces `V ↪ H ↪ U ↪ X` by
//! weighted inner products on a shared finite coordinate basis, generates
//! reproducible cylindrical noise, and provides:
//!
//! * Itô integrals of simple and general adapted integrands ([`integrate`]),
//!   with localization by first-passage stopping rules;
//! * quadratic- and cross-variation estimators over refining partitions and a
//!   Burkholder-Davis-Gundy ratio probe ([`variation`]);
//! * Stratonovich integrals and the `½ ΣG_i²` drift conversion
//!   ([`stratonovich`]);
//! * an Euler-Maruyama solver for finite-dimensional SPDEs with truncated
//!   noise, plus energy and Itô-formula residual checkers ([`spde`]);
//! * a Monte Carlo experiment harness with deterministic, schedule-independent
//!   statistics ([`harness`]).
//!
//! Everything is double precision; statistical assertions carry explicit
//! tolerances and seeded bootstrap confidence intervals.

pub mod harness;
pub mod integrate;
pub mod noise;
pub mod spaces;
pub mod spde;
pub mod stratonovich;
pub mod variation;

pub use spaces::{Space, SpaceScale, Vector};

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("weights must satisfy V ≥ H ≥ U ≥ X > 0 componentwise (violated at index {index})")]
    WeightOrder { index: usize },

    #[error("{from:?} does not embed into {to:?}; the chain is V ↪ H ↪ U ↪ X")]
    ChainOrder { from: Space, to: Space },

    #[error("time {t} is not a node of the grid (dt = {dt})")]
    OffGrid { t: f64, dt: f64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("partition needs at least two points")]
    EmptyPartition,

    #[error("partition must start at grid index 0 and be strictly increasing")]
    BadPartition,

    #[error("need at least {min} paths, got {got}")]
    TooFewPaths { got: usize, min: usize },

    #[error("operator carries {got} modes, driver carries {expected}")]
    ModeMismatch { expected: usize, got: usize },

    #[error("certification failed: {0}")]
    Certification(String),

    #[error("non-finite state at step {step}")]
    NonFinite { step: usize },

    #[error("integrand is only locally square-integrable; localize it first")]
    RequiresSquareIntegrable,

    #[error("derivative rule disagrees with finite differences: {0}")]
    DerivativeMismatch(String),

    #[error("refinement ladder needs at least {min} strictly decreasing rungs")]
    ShortLadder { min: usize },

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
