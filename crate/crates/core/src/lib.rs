//! Imprecise risk optimisation over collections of training domains.
//!
//! * [`risk`]: per-domain risks and their CVaR aggregation.
//! * [`models`]: λ-conditioned networks with exact gradients.
//! * [`lambda_dist`]: Beta distributions over risk levels.
//! * [`iro`]: the min-norm training loop and its baselines.
//! * [`data`]: synthetic, coloured-digit and bike-sharing domains.
//! * [`eval`]: risk curves, regret and reports.

pub mod data;
pub mod error;
pub mod eval;
pub mod iro;
pub mod lambda_dist;
pub mod models;
pub mod risk;
pub mod rng;

pub use error::{Error, ErrorKind, Result};
