//! Bayesian optimization with multilevel Monte Carlo estimation of
//! look-ahead acquisition-function maximizers.
//!
//! The crate is organized around the estimation pipeline:
//!
//! - [`gp`]: exact GP regression with reparameterized sampling and fantasy
//!   conditioning;
//! - [`acquisition`]: analytic EI, SAA qEI, and the nested two- and
//!   three-step look-ahead objectives built on frozen base samples;
//! - [`opt`]: deterministic multi-start bounded quasi-Newton maximization;
//! - [`mlmc`]: multilevel estimators of the acquisition maximizer and value
//!   function, level/sample allocation, coupling, and rate fitting;
//! - [`bo`]: the outer Bayesian-optimization loop and its metrics;
//! - [`bench`]: synthetic objective registry with known optima.

pub mod bench;
pub mod bo;
pub mod dataset;
pub mod domain;
pub mod gp;
pub mod kernel;
pub mod mle;
pub mod mlmc;
pub mod opt;
pub mod sampling;
pub mod stats;

pub mod acquisition;

pub use dataset::Dataset;
pub use domain::BoxDomain;
pub use gp::{FantasyView, GaussianPosterior, GpSurface};
pub use kernel::{KernelFamily, KernelSpec};
pub use sampling::BaseSampleTree;
