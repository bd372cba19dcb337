//! Multilevel Monte Carlo estimation of option values, deltas and vegas under
//! geometric Brownian motion.

// `!(x > 0.0)` guards are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod estimators;
pub mod greeks;
pub mod mlmc;
pub mod normal;
pub mod oracle;
pub mod payoff;
pub mod rng;
pub mod sde;
pub mod stats;

pub use error::{Error, Result};
pub use estimators::{GridKind, LevelSample, LevelSampler, Method, MethodSpec, PayoffKind, SplitRule};
pub use greeks::{Grad, GreekTriple, Output};
pub use mlmc::{collect_level, run_mlmc, run_mlmc_with, LevelStats, MlmcConfig, MlmcReport};
pub use sde::MarketParams;
