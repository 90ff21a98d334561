//! The outer Bayesian-optimization loop: fit, design, observe, augment.

use std::time::Instant;

use nalgebra::DVector;
use thiserror::Error;

use crate::acquisition::{AcqError, InnerDraws, InnerOptCtx, LookaheadObjective, LookaheadSpec};
use crate::dataset::Dataset;
use crate::domain::BoxDomain;
use crate::gp::GpError;
use crate::mle::{fit_gp, HyperMode};
use crate::mlmc::{
    practical_schedule, schedule_from_theorem_with, Coupling, Matching, MlmcDriver, MlmcError,
    MlmcSchedule, OuterOptPolicy,
};
use crate::opt::{maximize_with, raw_candidates, MaximizeOpts, OptError};
use crate::sampling::{seed_stream, BaseSampleTree};

#[derive(Debug, Error)]
pub enum BoError {
    #[error("gp fit failed at iteration {iteration}: {source}")]
    Fit { iteration: usize, source: GpError },
    #[error("designer failed: {source}")]
    Designer { source: MlmcError },
    #[error("acquisition failed: {source}")]
    Acquisition { source: AcqError },
    #[error("optimizer failed: {source}")]
    Opt { source: OptError },
    #[error("nmse undefined: {0}")]
    BadMetric(String),
    #[error("config invalid: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Designer {
    /// Nested MC with `N = M = ceil(1/eps^2)`.
    McNested,
    MlmcPlain,
    MlmcAntithetic,
    /// Maximizer of the multilevel value-function estimator.
    MlmcValueFunction,
}

/// How the MLMC designers build their level schedule each iteration.
#[derive(Debug, Clone)]
pub enum ScheduleMode {
    /// Pilot-calibrated Lagrange allocation with modeled level variances.
    Practical,
    /// Sample counts exactly as the parameter-choice formula prints them.
    Theorem,
    /// A fixed schedule, mainly for degenerate-MLMC equivalence tests.
    Fixed(MlmcSchedule),
}

#[derive(Debug, Clone)]
pub enum HyperParams {
    /// Refit by marginal-likelihood maximization each iteration.
    MlePerIteration,
    Fixed(crate::kernel::KernelSpec),
}

#[derive(Debug, Clone)]
pub struct BoConfig {
    pub objective_name: String,
    pub domain: BoxDomain,
    pub n_init: usize,
    pub iterations: usize,
    pub designer: Designer,
    pub eps: f64,
    pub spec: LookaheadSpec,
    pub seed: u64,
    pub hyper: HyperParams,
    pub schedule_mode: ScheduleMode,
    pub l_override: Option<usize>,
    /// Level-0 pilot size used once at the first iteration.
    pub pilot_replicates: usize,
    pub pilot_n_ref: usize,
    /// Override the nested-MC sample counts (tests only).
    pub mc_override: Option<(usize, usize)>,
    pub outer_budget: Option<OuterOptPolicy>,
}

impl BoConfig {
    pub fn new(
        objective_name: impl Into<String>,
        domain: BoxDomain,
        designer: Designer,
        eps: f64,
        spec: LookaheadSpec,
        seed: u64,
    ) -> Self {
        Self {
            objective_name: objective_name.into(),
            n_init: 2 * domain.dim(),
            iterations: 20,
            domain,
            designer,
            eps,
            spec,
            seed,
            hyper: HyperParams::MlePerIteration,
            schedule_mode: ScheduleMode::Practical,
            l_override: None,
            pilot_replicates: 32,
            pilot_n_ref: 4,
            mc_override: None,
            outer_budget: None,
        }
    }

    fn validate(&self) -> Result<(), BoError> {
        if self.n_init < 1 {
            return Err(BoError::BadConfig("n_init must be >= 1".into()));
        }
        if self.iterations < 1 {
            return Err(BoError::BadConfig("iterations must be >= 1".into()));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(BoError::BadConfig(format!(
                "eps must lie in (0,1), got {}",
                self.eps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iteration: usize,
    pub x_chosen: DVector<f64>,
    pub y: f64,
    pub incumbent: f64,
    pub cumulative_cost_evals: f64,
    pub cumulative_wall_seconds: f64,
    pub designer_cost_evals: f64,
    pub duplicate_retries: usize,
}

#[derive(Debug, Clone)]
pub struct BoTrace {
    pub init_points: Vec<DVector<f64>>,
    pub init_values: Vec<f64>,
    /// Incumbent of the initial design, the NMSE normalizer.
    pub initial_incumbent: f64,
    pub records: Vec<IterationRecord>,
    pub seed: u64,
    /// Set when a designer failure truncated the run.
    pub error: Option<String>,
}

impl BoTrace {
    /// Incumbent after `k` iterations (`k = 0` is the initial design).
    pub fn incumbent_at(&self, k: usize) -> f64 {
        if k == 0 || self.records.is_empty() {
            self.initial_incumbent
        } else {
            self.records[k.min(self.records.len()) - 1].incumbent
        }
    }

    /// Incumbent at the largest iteration whose cumulative wall time fits
    /// within `budget` seconds.
    pub fn incumbent_at_wall(&self, budget: f64) -> f64 {
        let mut inc = self.initial_incumbent;
        for r in &self.records {
            if r.cumulative_wall_seconds <= budget {
                inc = r.incumbent;
            } else {
                break;
            }
        }
        inc
    }

    pub fn final_wall(&self) -> f64 {
        self.records
            .last()
            .map(|r| r.cumulative_wall_seconds)
            .unwrap_or(0.0)
    }
}

/// Runs the BO loop: fit GP, compute a single design, observe, augment.
/// Deterministic in the decision sequence given `(config, seed)`.
pub fn run_bo(
    config: &BoConfig,
    objective: &dyn Fn(&DVector<f64>) -> f64,
) -> Result<BoTrace, BoError> {
    config.validate()?;
    let init_points = raw_candidates(
        &config.domain,
        config.n_init,
        seed_stream(config.seed, &[0x1217]),
    );
    let init_values: Vec<f64> = init_points.iter().map(|p| objective(p)).collect();
    let mut data = Dataset::new();
    for (p, &v) in init_points.iter().zip(&init_values) {
        if !data.contains_point(p) {
            data.push(p.clone(), v)
                .map_err(|e| BoError::BadConfig(e.to_string()))?;
        }
    }
    let initial_incumbent = data.incumbent().unwrap();

    let mut trace = BoTrace {
        init_points,
        init_values,
        initial_incumbent,
        records: Vec::with_capacity(config.iterations),
        seed: config.seed,
        error: None,
    };

    let started = Instant::now();
    let mut cumulative_cost = 0.0;
    let mut pilot_w0: Option<f64> = None;

    for t in 0..config.iterations {
        let gp = match fit_iteration_gp(config, &data, t) {
            Ok(gp) => gp,
            Err(e) => {
                trace.error = Some(format!("iteration {t}: {e}"));
                break;
            }
        };

        let mut retries = 0usize;
        let mut design_cost = 0.0;
        let chosen: Option<DVector<f64>>;
        loop {
            let design_seed = seed_stream(config.seed, &[0xde5, t as u64, retries as u64]);
            match single_design(config, &gp, design_seed, &mut pilot_w0) {
                Ok((x, cost)) => {
                    design_cost += cost;
                    if !data.contains_point(&x) {
                        chosen = Some(x);
                        break;
                    }
                    retries += 1;
                    if retries > 3 {
                        // Accept the nearest non-duplicate raw candidate.
                        let raws = raw_candidates(&config.domain, 64, design_seed);
                        chosen = raws
                            .into_iter()
                            .filter(|r| !data.contains_point(r))
                            .min_by(|a, b| {
                                (a - &x).norm().partial_cmp(&(b - &x).norm()).unwrap()
                            });
                        break;
                    }
                }
                Err(e) => {
                    trace.error = Some(format!("iteration {t}: {e}"));
                    return Ok(trace);
                }
            }
        }
        let Some(x_next) = chosen else {
            trace.error = Some(format!("iteration {t}: no non-duplicate candidate"));
            return Ok(trace);
        };

        let y = objective(&x_next);
        data.push(x_next.clone(), y)
            .map_err(|e| BoError::BadConfig(e.to_string()))?;
        cumulative_cost += design_cost;
        trace.records.push(IterationRecord {
            iteration: t + 1,
            x_chosen: x_next,
            y,
            incumbent: data.incumbent().unwrap(),
            cumulative_cost_evals: cumulative_cost,
            cumulative_wall_seconds: started.elapsed().as_secs_f64(),
            designer_cost_evals: design_cost,
            duplicate_retries: retries,
        });
    }
    Ok(trace)
}

fn fit_iteration_gp(
    config: &BoConfig,
    data: &Dataset,
    iteration: usize,
) -> Result<crate::gp::GaussianPosterior, BoError> {
    let mode = match &config.hyper {
        HyperParams::Fixed(kernel) => HyperMode::Fixed(kernel.clone()),
        HyperParams::MlePerIteration => HyperMode::Mle {
            family: crate::kernel::KernelFamily::Matern52,
            restarts: 8,
            seed: seed_stream(config.seed, &[0x31e, iteration as u64]),
        },
    };
    fit_gp(data, &mode).map_err(|source| BoError::Fit { iteration, source })
}

/// One acquisition maximization with the configured designer. Returns the
/// design and its nominal cost in inner-reward evaluations.
fn single_design(
    config: &BoConfig,
    gp: &crate::gp::GaussianPosterior,
    seed: u64,
    pilot_w0: &mut Option<f64>,
) -> Result<(DVector<f64>, f64), BoError> {
    let d = config.domain.dim();
    let inner = InnerOptCtx::new(config.domain.clone());
    let outer = config
        .outer_budget
        .clone()
        .unwrap_or_else(|| OuterOptPolicy::for_dim(d));

    match config.designer {
        Designer::McNested => {
            let (n, m) = config.mc_override.unwrap_or_else(|| {
                let k = (1.0 / (config.eps * config.eps)).ceil() as usize;
                (k, k)
            });
            let mut spec = config.spec.clone();
            spec.n_outer = n;
            spec.m_inner = m;
            let tree =
                BaseSampleTree::generate(seed_stream(seed, &[0xac]), n, m, spec.inner_q());
            let obj = LookaheadObjective::new(gp, &spec, &tree, &inner, InnerDraws::Fine(m))
                .map_err(|source| BoError::Acquisition { source })?;
            let opts = MaximizeOpts {
                restarts: outer.restarts,
                raw: outer.raw.max(outer.restarts),
                seed: seed_stream(seed, &[0xa1]),
                max_iters: outer.max_iters,
                pg_tol: 1e-8,
                first_step_frac: 0.02,
                newton_polish: false,
                extra_starts: Vec::new(),
            };
            let res = maximize_with(&obj, &config.domain, &opts)
                .map_err(|source| BoError::Opt { source })?;
            if let Some(e) = obj.take_error() {
                return Err(BoError::Acquisition { source: e });
            }
            Ok((res.x_star, (n * (m + 1)) as f64))
        }
        Designer::MlmcPlain | Designer::MlmcAntithetic | Designer::MlmcValueFunction => {
            let coupling = match config.designer {
                Designer::MlmcPlain => Coupling::Plain,
                _ => Coupling::Antithetic,
            };
            let mut driver = MlmcDriver::new(gp, config.spec.clone(), inner);
            driver.outer = outer;
            let mut pilot_cost = 0.0;
            let w0 = match pilot_w0 {
                Some(w) => *w,
                None => {
                    // One level-0 pilot calibrates the variance model for the
                    // whole run; its cost is charged to this design.
                    let pilot = driver
                        .variance_pilot(
                            &[0],
                            config.pilot_replicates,
                            config.pilot_n_ref,
                            coupling,
                            seed_stream(config.seed, &[0x9107]),
                        )
                        .map_err(|source| BoError::Designer { source })?;
                    let w = (pilot.variances[0] * config.pilot_n_ref as f64).max(1e-8);
                    pilot_cost = (config.pilot_replicates * config.pilot_n_ref * 2) as f64;
                    *pilot_w0 = Some(w);
                    w
                }
            };
            let beta = match coupling {
                Coupling::Plain => 1.0,
                Coupling::Antithetic => 1.5,
            };
            let schedule = match &config.schedule_mode {
                ScheduleMode::Practical => {
                    practical_schedule(config.eps, w0, beta, config.l_override, coupling)
                        .map_err(|source| BoError::Designer { source })?
                }
                ScheduleMode::Theorem => {
                    let proof_factor = config.designer == Designer::MlmcValueFunction;
                    schedule_from_theorem_with(config.eps, w0, config.l_override, proof_factor)
                        .map_err(|source| BoError::Designer { source })?
                        .with_coupling(coupling)
                }
                ScheduleMode::Fixed(s) => s.clone().with_coupling(coupling),
            };
            let cost = crate::mlmc::nominal_cost(&schedule) + pilot_cost;
            match config.designer {
                Designer::MlmcValueFunction => {
                    let value = driver
                        .value_function(&schedule, seed)
                        .map_err(|source| BoError::Designer { source })?;
                    Ok((value.x_tilde, cost))
                }
                _ => {
                    let (x, _diag) = driver
                        .maximizer(&schedule, seed, Matching::PointMatchLevel0)
                        .map_err(|source| BoError::Designer { source })?;
                    Ok((x, cost))
                }
            }
        }
    }
}

/// Normalized MSE of the incumbent after `k` iterations, averaged over
/// traces. Traces whose initial incumbent already equals `g_star` are
/// excluded; their count is returned alongside.
pub fn nmse(traces: &[BoTrace], g_star: f64, k: usize) -> Result<(f64, usize), BoError> {
    let mut acc = 0.0;
    let mut used = 0usize;
    let mut excluded = 0usize;
    for t in traces {
        let denom = (t.initial_incumbent - g_star).powi(2);
        if denom == 0.0 {
            excluded += 1;
            continue;
        }
        let num = (t.incumbent_at(k) - g_star).powi(2);
        acc += num / denom;
        used += 1;
    }
    if used == 0 {
        return Err(BoError::BadMetric(
            "all traces excluded: initial incumbent equals the optimum".into(),
        ));
    }
    Ok((acc / used as f64, excluded))
}

/// Fraction of the possible improvement achieved after `k` evaluations:
/// `(max_{D_k} g - g(x_0)) / (g_star - g(x_0))` in the maximization
/// convention, clamped to [0, 1].
pub fn gap(trace: &BoTrace, g_star: f64, x0_value: f64, k: usize) -> Result<f64, BoError> {
    if trace.records.len() < k {
        return Err(BoError::BadMetric(format!(
            "trace has {} iterations, need {k}",
            trace.records.len()
        )));
    }
    let denom = g_star - x0_value;
    if denom.abs() < 1e-14 {
        return Err(BoError::BadMetric(
            "degenerate GAP denominator: initial value equals the optimum".into(),
        ));
    }
    let g = (trace.incumbent_at(k) - x0_value) / denom;
    Ok(g.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::{InnerMode, Reward, Steps};
    use crate::kernel::KernelSpec;
    use nalgebra::dvector;

    fn quick_config(designer: Designer, seed: u64) -> BoConfig {
        let domain = BoxDomain::from_bounds(&[(-10.0, 10.0)]).unwrap();
        let spec = LookaheadSpec {
            steps: Steps::TwoStep,
            stage_rewards: vec![Reward::Ei, Reward::Ei],
            n_outer: 4,
            m_inner: 2,
            inner_mode: InnerMode::Saa,
            stage0_analytic: false,
        };
        let mut c = BoConfig::new("toy1d", domain, designer, 0.4, spec, seed);
        c.iterations = 2;
        c.n_init = 2;
        c.hyper = HyperParams::Fixed(KernelSpec::matern52(1, 1.5, 0.5));
        c.pilot_replicates = 4;
        c.pilot_n_ref = 2;
        c
    }

    #[test]
    fn constant_objective_keeps_incumbent() {
        let mut c = quick_config(Designer::McNested, 5);
        c.iterations = 1;
        c.mc_override = Some((2, 2));
        let trace = run_bo(&c, &|_x| 1.25).unwrap();
        assert!(trace.error.is_none(), "{:?}", trace.error);
        assert_eq!(trace.records.len(), 1);
        assert_eq!(trace.records[0].incumbent, 1.25);
        assert!(c.domain.contains(&trace.records[0].x_chosen));
    }

    #[test]
    fn dataset_grows_by_one_per_iteration() {
        let c = quick_config(Designer::MlmcAntithetic, 6);
        let trace = run_bo(&c, &|x| crate::bench::toy_1d(x[0])).unwrap();
        assert!(trace.error.is_none(), "{:?}", trace.error);
        assert_eq!(trace.records.len(), 2);
        let mut all = trace.init_points.clone();
        for r in &trace.records {
            assert!(all.iter().all(|p| (p - &r.x_chosen).norm() > 1e-10));
            all.push(r.x_chosen.clone());
        }
    }

    #[test]
    fn incumbent_is_monotone() {
        let c = quick_config(Designer::MlmcPlain, 7);
        let trace = run_bo(&c, &|x| crate::bench::toy_1d(x[0])).unwrap();
        let mut last = trace.initial_incumbent;
        for r in &trace.records {
            assert!(r.incumbent >= last);
            last = r.incumbent;
        }
    }

    #[test]
    fn traces_are_deterministic() {
        let c = quick_config(Designer::MlmcAntithetic, 11);
        let a = run_bo(&c, &|x| crate::bench::toy_1d(x[0])).unwrap();
        let b = run_bo(&c, &|x| crate::bench::toy_1d(x[0])).unwrap();
        assert_eq!(a.records.len(), b.records.len());
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.x_chosen, rb.x_chosen);
            assert_eq!(ra.y, rb.y);
        }
    }

    #[test]
    fn value_function_designer_runs() {
        let mut c = quick_config(Designer::MlmcValueFunction, 13);
        c.iterations = 1;
        c.l_override = Some(1);
        let trace = run_bo(&c, &|x| crate::bench::toy_1d(x[0])).unwrap();
        assert!(trace.error.is_none(), "{:?}", trace.error);
        assert_eq!(trace.records.len(), 1);
    }

    fn synthetic_trace(init: f64, incs: &[f64]) -> BoTrace {
        BoTrace {
            init_points: vec![dvector![0.0]],
            init_values: vec![init],
            initial_incumbent: init,
            records: incs
                .iter()
                .enumerate()
                .map(|(i, &v)| IterationRecord {
                    iteration: i + 1,
                    x_chosen: dvector![0.0],
                    y: v,
                    incumbent: v,
                    cumulative_cost_evals: 0.0,
                    cumulative_wall_seconds: 0.0,
                    designer_cost_evals: 0.0,
                    duplicate_retries: 0,
                })
                .collect(),
            seed: 0,
            error: None,
        }
    }

    #[test]
    fn nmse_edges() {
        let traces = vec![
            synthetic_trace(0.0, &[0.5, 1.0]),
            synthetic_trace(0.5, &[0.75, 1.0]),
        ];
        let (v0, _) = nmse(&traces, 1.0, 0).unwrap();
        assert_eq!(v0, 1.0);
        let (v2, _) = nmse(&traces, 1.0, 2).unwrap();
        assert_eq!(v2, 0.0);
        // Hand-computed ratio at k = 1.
        let (v1, _) = nmse(&traces, 1.0, 1).unwrap();
        assert!((v1 - (0.25 + 0.25) / 2.0).abs() < 1e-12);
        let traces2 = vec![synthetic_trace(1.0, &[1.0]), synthetic_trace(0.0, &[1.0])];
        let (_, excluded) = nmse(&traces2, 1.0, 1).unwrap();
        assert_eq!(excluded, 1);
        assert!(nmse(&[synthetic_trace(1.0, &[1.0])], 1.0, 1).is_err());
    }

    #[test]
    fn gap_edges() {
        let mut incs = vec![0.2; 15];
        incs[14] = 1.0;
        let trace = synthetic_trace(0.2, &incs);
        assert_eq!(gap(&trace, 1.0, 0.2, 15).unwrap(), 1.0);
        assert_eq!(gap(&trace, 1.0, 0.2, 14).unwrap(), 0.0);
        assert!(gap(&trace, 0.2, 0.2, 15).is_err());
        assert!(gap(&trace, 1.0, 0.2, 16).is_err());
    }
}
