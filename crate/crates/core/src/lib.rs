//! Exact and simulated error dynamics of mini-batch gradient descent with random
//! reshuffling for least squares.
//!
//! The crate is organized bottom-up:
//!
//! * [`kernels`]: dense linear algebra with explicit tolerances.
//! * [`problem`]: data generation, mini-batch partitions and the risk functional.
//! * [`reshuffle`]: the permutation-averaged modifiers `Pi_b`, the modified
//!   features `X~` and the cross-covariance `Z = X~^T X / n`.
//! * [`dynamics`]: simulated trajectories and exact mean-iterate recursions.
//! * [`risk`]: exact generalization error, its limit and two-batch bounds.
//! * [`asymptotics`]: large-`n` shrinkage polynomial and decoupled dynamics.
//! * [`spectrum`]: limiting spectra in the proportional regime via operator-valued
//!   subordination.
//! * [`export`]: CSV writers for trajectories, risk reports and densities.

pub mod asymptotics;
pub mod dynamics;
pub mod error;
pub mod export;
pub mod kernels;
pub mod problem;
pub mod reshuffle;
pub mod rng;
pub mod risk;
pub mod spectrum;

pub use error::{Error, Result};
pub use kernels::{Mat, SymmetricMatrix, Vector};
pub use problem::{generate_gaussian, partition, BatchPartition, BetaSpec, RegressionProblem};
pub use reshuffle::{assemble, ReshuffleOperators, Route};

