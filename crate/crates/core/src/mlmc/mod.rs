//! Multilevel Monte Carlo estimation of look-ahead acquisition maximizers
//! and value functions.
//!
//! The estimator telescopes coupled coarse/fine maximizers across accuracy
//! levels: level `l` uses `M_l = 2^l` inner draws per outer sample, the
//! coarse side reuses a prefix (plain coupling) or averages the maxima over
//! the two halves (antithetic coupling) of the fine draws, and the final
//! design is the sum of per-level increments projected onto the box.

mod estimator;
mod increments;
mod matching;
mod rates;
mod schedule;

pub use estimator::{
    mlmc_maximizer, mlmc_maximizer_three_step, mlmc_value_function, AlphaMl, MlmcDiagnostics,
    MlmcDriver, MlmcValue, OuterOptPolicy,
};
pub use increments::{level_tree, level_tree_seed, LevelIncrement, LevelOutput};
pub use matching::{match_levels, Candidate, LevelCandidates, MatchedChain, MatchedLevel, Matching};
pub use rates::{fit_rate, vector_variance, PilotEstimate, RateEstimate};
pub use schedule::{
    lagrange_allocation, nominal_cost, practical_schedule, schedule_from_theorem,
    schedule_from_theorem_with, Coupling, MlmcSchedule,
};

use thiserror::Error;

use crate::acquisition::AcqError;
use crate::opt::OptError;

#[derive(Debug, Error)]
pub enum MlmcError {
    #[error("allocation requires positive variances and costs (entry {index}: v={v}, c={c})")]
    NonPositiveAllocation { index: usize, v: f64, c: f64 },
    #[error("eps must lie in (0, 1), got {0}")]
    BadEps(f64),
    #[error("V0 must be positive, got {0}")]
    BadV0(f64),
    #[error("schedule is inconsistent: {0}")]
    BadSchedule(String),
    #[error("level {level} estimation failed: {source}")]
    Level { level: usize, source: AcqError },
    #[error("rate fit needs at least 3 levels, got {0}")]
    TooFewLevels(usize),
    #[error("rate fit needs positive values (level {level} has {value})")]
    NonPositiveRateValue { level: usize, value: f64 },
    #[error("empty candidate set at level {0}")]
    EmptyCandidates(usize),
    #[error("optimizer failure: {0}")]
    Opt(#[from] OptError),
}
