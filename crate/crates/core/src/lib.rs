//! Researcher-behavior models and the critical values (ICCVs) that keep size under them.
//!
//! A researcher who is only rewarded for rejecting a null hypothesis keeps
//! running studies while the expected payoff of one more study exceeds its
//! cost. The reported statistic is then the running maximum over several
//! latent t-statistics, and a classical critical value such as 1.96 no longer
//! controls size. This crate simulates that behavior under several research
//! processes and searches for the smallest critical value whose induced
//! behavior keeps the rejection rate under the null at or below the nominal
//! level.
//!
//! Modules:
//! - [`dist`]: normal cdf/quantile, Cholesky factorization and reproducible random streams.
//! - [`priors`]: researcher beliefs, prior-integrated rejection probabilities and
//!   conjugate posterior updates.
//! - [`behavior`]: stopping rules and trajectory simulation.
//! - [`solver`]: size/power estimation and the critical-value search.
//! - [`calib`]: prior calibration from matched-pairs summaries and cost-ratio elicitation.

pub mod behavior;
pub mod calib;
pub mod dist;
mod error;
pub mod priors;
mod quad;
pub mod solver;

pub use error::{Error, Result};
