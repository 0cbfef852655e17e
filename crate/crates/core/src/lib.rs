//! Monte-Carlo solver for backward stochastic differential equations driven by
//! a square-integrable jump-diffusion martingale, under full or delayed
//! information, with Föllmer-Schweizer decompositions and locally
//! risk-minimizing hedges built on top.
//!
//! Processes are stored as `Vec<Vec<f64>>` indexed `[step][path]`: values at
//! grid times have `N + 1` rows, increments over steps have `N`.

pub mod error;
pub mod information;
pub mod market;
pub mod regression;
pub mod stats;
pub mod bsde;
pub mod decomposition;
pub mod hedging;
pub mod scenario;
pub mod pipeline;

pub use error::{Error, Result};
pub use information::{
    cond_expect, dual_project, ConditionalEstimate, DualProjection, InfoKind, InfoLevel, InformationModel, Projector,
};
pub use market::{simulate_market, tradeoff_process, Grid, MarketConfig, PathEnsemble};
pub use pipeline::{run, RunReport, Subcommand};
pub use scenario::{Overrides, Scenario};

/// Per-step, per-path values, indexed `[step][path]`.
pub type Process = Vec<Vec<f64>>;
