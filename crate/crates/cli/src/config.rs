//! Experiment configuration: a JSON file of nested key-value settings, with
//! CLI overrides for seed, replications, and the output path.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use mlmcbo_core::acquisition::{InnerMode, LookaheadSpec, Reward};
use mlmcbo_core::bench;
use mlmcbo_core::bo::{Designer, ScheduleMode};
use mlmcbo_core::mlmc::Coupling;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelCfg {
    /// "fixed" or "mle"
    pub mode: String,
    pub lengthscale: f64,
    pub output_scale: f64,
}

impl Default for KernelCfg {
    fn default() -> Self {
        Self {
            mode: "fixed".into(),
            lengthscale: 1.5,
            output_scale: 0.4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub benchmark: String,
    pub replications: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,

    /// Observations behind the rate-experiment posterior.
    pub n_observations: usize,
    /// Seed of the fixed observation set (the problem instance).
    pub obs_seed: u64,
    pub kernel: KernelCfg,

    /// Stage-1 reward: "ei" or "qei".
    pub stage1_reward: String,
    pub qei_q: usize,

    pub n_grid: Vec<usize>,
    pub m_grid: Vec<usize>,
    pub n_fixed: usize,
    pub levels: Vec<usize>,
    pub reference_n: usize,

    pub eps: f64,
    pub eps_grid: Vec<f64>,
    /// "plain" or "antithetic"
    pub coupling: String,
    pub v0: Option<f64>,
    pub l_override: Option<usize>,
    /// Half-width of the level-anchoring trust box as a fraction of each
    /// domain width.
    pub trust_frac: Option<f64>,
    /// Half-width of the mode-locking box for the outer/inner rate
    /// experiments (the theory assumes a unique optimizer; the box keeps the
    /// measured maximizer in the reference mode's basin).
    pub rate_trust_frac: f64,
    /// Inner-optimizer budget for rate experiments.
    pub inner_restarts: usize,
    pub inner_raw_per_dim: usize,
    pub proof_factor: bool,

    pub iterations: usize,
    pub n_init: Option<usize>,
    /// Designers compared by full-bo: "mc", "mlmc-plain", "mlmc-antithetic",
    /// "mlmc-value-function".
    pub designers: Vec<String>,
    /// "practical" or "theorem"
    pub schedule: String,
    /// Table-style protocol: single-point init and GAP reporting.
    pub gap_mode: bool,
    pub gap_budget: usize,

    /// Observation counts for the value-function timing sweep.
    pub obs_grid: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            benchmark: "toy1d".into(),
            replications: 100,
            seed: 2024,
            out: None,
            n_observations: 6,
            obs_seed: 1234,
            kernel: KernelCfg::default(),
            stage1_reward: "ei".into(),
            qei_q: 2,
            n_grid: vec![8, 16, 32, 64, 128, 256, 512],
            m_grid: vec![4, 8, 16, 32, 64, 128, 256],
            n_fixed: 32,
            levels: vec![1, 2, 3, 4, 5, 6],
            reference_n: 4096,
            eps: 0.2,
            eps_grid: vec![0.4, 0.3, 0.25, 0.2, 0.15, 0.1],
            coupling: "antithetic".into(),
            v0: None,
            l_override: None,
            trust_frac: Some(0.025),
            rate_trust_frac: 0.05,
            inner_restarts: 3,
            inner_raw_per_dim: 16,
            proof_factor: false,
            iterations: 30,
            n_init: None,
            designers: vec!["mc".into(), "mlmc-antithetic".into()],
            schedule: "practical".into(),
            gap_mode: false,
            gap_budget: 15,
            obs_grid: vec![4, 8, 12, 16, 20],
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {p:?}"))?;
                let cfg: Self =
                    serde_json::from_str(&text).with_context(|| format!("parsing {p:?}"))?;
                Ok(cfg)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications < 1 {
            bail!("replications must be >= 1");
        }
        bench::get(&self.benchmark).map_err(|e| anyhow::anyhow!(e.to_string()))?;
        if !matches!(self.kernel.mode.as_str(), "fixed" | "mle") {
            bail!("kernel.mode must be 'fixed' or 'mle'");
        }
        if !matches!(self.stage1_reward.as_str(), "ei" | "qei") {
            bail!("stage1_reward must be 'ei' or 'qei'");
        }
        if !matches!(self.coupling.as_str(), "plain" | "antithetic") {
            bail!("coupling must be 'plain' or 'antithetic'");
        }
        if !matches!(self.schedule.as_str(), "practical" | "theorem") {
            bail!("schedule must be 'practical' or 'theorem'");
        }
        for d in &self.designers {
            self.parse_designer(d)?;
        }
        Ok(())
    }

    pub fn coupling_enum(&self) -> Coupling {
        match self.coupling.as_str() {
            "plain" => Coupling::Plain,
            _ => Coupling::Antithetic,
        }
    }

    pub fn schedule_mode(&self) -> ScheduleMode {
        match self.schedule.as_str() {
            "theorem" => ScheduleMode::Theorem,
            _ => ScheduleMode::Practical,
        }
    }

    pub fn parse_designer(&self, name: &str) -> Result<Designer> {
        Ok(match name {
            "mc" => Designer::McNested,
            "mlmc-plain" => Designer::MlmcPlain,
            "mlmc-antithetic" => Designer::MlmcAntithetic,
            "mlmc-value-function" => Designer::MlmcValueFunction,
            other => bail!("unknown designer '{other}'"),
        })
    }

    /// Look-ahead structure for the estimators; sample counts are filled in
    /// by each experiment.
    pub fn lookahead_spec(&self) -> LookaheadSpec {
        let stage1 = match self.stage1_reward.as_str() {
            "qei" => Reward::Qei(self.qei_q),
            _ => Reward::Ei,
        };
        LookaheadSpec {
            steps: mlmcbo_core::acquisition::Steps::TwoStep,
            stage_rewards: vec![Reward::Ei, stage1],
            n_outer: 1,
            m_inner: 1,
            inner_mode: InnerMode::Saa,
            stage0_analytic: false,
        }
    }
}
