//! Error type shared by every module.

use thiserror::Error;

/// Failures reported by the numerical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// The first-layer frequency vanishes, where the Hamiltonian is not smooth.
    #[error("first-layer frequency is zero")]
    ZeroFrequency,
    /// The second-layer frequency lies outside the maximal-rank set.
    #[error("mu = {mu:?} lies outside the maximal-rank set (rank {rank} < {generic})")]
    OutsideOmega {
        mu: Vec<f64>,
        rank: usize,
        generic: usize,
    },
    /// `J_mu` has rank below the generic rank.
    #[error("rank of J_mu is {rank}, below the generic rank {generic}")]
    RankDrop { rank: usize, generic: usize },
    /// The Hamiltonian came too close to zero along an integrated trajectory.
    #[error("Hamiltonian dropped to {value:e} along the trajectory")]
    NearCharacteristic { value: f64 },
    /// A time-rescaling was requested at `t = 0`.
    #[error("time must be nonzero")]
    ZeroTime,
    /// Quadrature refinement changed the result by more than the requested tolerance.
    #[error("quadrature refinement changed the value by {change:e} (tolerance {tol:e})")]
    RefineFailure { change: f64, tol: f64 },
    /// A group definition failed validation.
    #[error("invalid group: {0}")]
    InvalidGroup(String),
    /// Any other malformed argument.
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
