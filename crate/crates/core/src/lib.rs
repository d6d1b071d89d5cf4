//! Numerical laboratory for the parabolic Anderson model driven by Gaussian
//! noise that is colored in time and space.
//!
//! The crate provides covariance families and their spectral machinery
//! ([`covariance`]), seeded Brownian motion and bridge ensembles ([`paths`]),
//! Feynman-Kac Monte Carlo moment estimators ([`functional`]), Wiener chaos
//! moment series ([`chaos`]), the variational quantity governing moment
//! asymptotics ([`variational`]) and the Lyapunov and growth-index bounds
//! built on it ([`asymptotics`]).
//!
//! Monte Carlo work is cut into shards drawn from counter-based streams; see
//! [`exec`] for the scheduling contract.

pub mod asymptotics;
pub mod chaos;
pub mod covariance;
pub mod error;
pub mod exec;
pub mod functional;
pub mod paths;
pub mod quad;
pub mod variational;

pub use error::{PamError, Result};
pub use exec::Execution;
