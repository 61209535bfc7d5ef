//! Market completeness analysis for factor-diffusion models.
//!
//! Given a `d`-factor diffusion and `d` traded assets, the library decides
//! whether dynamic trading in those assets spans every square-integrable
//! claim. The machinery: asset pricing functions and their spatial
//! gradients (Monte Carlo, backward PDE, closed forms), the Jacobian matrix
//! `G` of price gradients, pathwise occupation of its singular set, a
//! single-point non-degeneracy test for real-analytic pricing functions,
//! an explicit orthogonal-claim construction when the market is incomplete,
//! hedging backtests, and variance-swap equivalences.

pub mod completeness;
pub mod error;
pub mod factor_models;
pub mod hedging;
pub mod path_engine;
pub mod pricing;
pub mod report;
pub mod rng;

pub use error::{Error, Result};
