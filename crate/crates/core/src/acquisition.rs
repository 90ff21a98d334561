//! Reward functions and acquisition estimators: analytic EI, SAA qEI, and
//! the nested two- and three-step look-ahead objectives.
//!
//! Every sample-average estimator here is a deterministic function of the GP,
//! the query point, and a frozen [`BaseSampleTree`]; the randomness lives in
//! the tree alone. Inner maximizations are delegated to the bounded
//! quasi-Newton engine, warm-started per outer sample so that repeated
//! evaluations during an outer optimization stay cheap. Warm starts only add
//! candidate starts and cannot change the estimator's limiting value.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use nalgebra::DVector;
use thiserror::Error;

use crate::domain::BoxDomain;
use crate::gp::{FantasyView, GaussianPosterior, GpSurface};
use crate::opt::{maximize_with, MaximizeOpts, Objective, OptError};
use crate::sampling::{seed_stream, BaseSampleTree, InnerSlice};
use crate::stats::{normal_cdf, normal_pdf};

/// Standard deviations below this floor use the degenerate EI limit.
pub const SIGMA_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum AcqError {
    #[error("posterior standard deviation below {SIGMA_FLOOR:e}: EI gradient undefined, fall back to a derivative-free step")]
    DegenerateSigma,
    #[error("look-ahead estimators need at least one observation (empty dataset has no incumbent)")]
    EmptyDataset,
    #[error("unsupported reward configuration: {0}")]
    UnsupportedReward(String),
    #[error("base sample tree too small: needs {needed} {what}, has {has}")]
    TreeTooSmall {
        what: &'static str,
        needed: usize,
        has: usize,
    },
    #[error("inner optimization failed for outer sample {outer}: {source}")]
    InnerOpt { outer: usize, source: OptError },
}

/// Stage-wise reward. `Zero` collapses a stage, which is how the estimators
/// of adjacent depths are compared in tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reward {
    Ei,
    Qei(usize),
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Steps {
    TwoStep,
    ThreeStep,
}

/// Whether the innermost expectation of the two-step estimator is computed
/// analytically (EI closed form) or by sample average over the tree draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerMode {
    Analytic,
    Saa,
}

#[derive(Debug, Clone)]
pub struct LookaheadSpec {
    pub steps: Steps,
    /// Rewards per stage: two entries for two-step, three for three-step.
    pub stage_rewards: Vec<Reward>,
    pub n_outer: usize,
    pub m_inner: usize,
    pub inner_mode: InnerMode,
    /// Replace the stage-0 sample average by its exact expectation (analytic
    /// EI). The rate experiments use this; the multilevel increments keep the
    /// sampled form.
    pub stage0_analytic: bool,
}

impl LookaheadSpec {
    pub fn two_step(r0: Reward, r1: Reward, n: usize, m: usize) -> Self {
        Self {
            steps: Steps::TwoStep,
            stage_rewards: vec![r0, r1],
            n_outer: n,
            m_inner: m,
            inner_mode: InnerMode::Saa,
            stage0_analytic: false,
        }
    }

    pub fn three_step(n: usize, m: usize) -> Self {
        Self {
            steps: Steps::ThreeStep,
            stage_rewards: vec![Reward::Ei, Reward::Ei, Reward::Ei],
            n_outer: n,
            m_inner: m,
            inner_mode: InnerMode::Saa,
            stage0_analytic: false,
        }
    }

    pub fn with_inner_mode(mut self, mode: InnerMode) -> Self {
        self.inner_mode = mode;
        self
    }

    pub fn with_analytic_stage0(mut self) -> Self {
        self.stage0_analytic = true;
        self
    }

    /// Width of inner draws required from the base sample tree.
    pub fn inner_q(&self) -> usize {
        match self.stage_rewards.get(1) {
            Some(Reward::Qei(q)) => *q,
            _ => 1,
        }
    }
}

/// Inner-optimization context: the feasible set plus the budget policy for
/// every nested maximization.
#[derive(Debug, Clone)]
pub struct InnerOptCtx {
    pub domain: BoxDomain,
    pub restarts: usize,
    pub raw: usize,
    pub max_iters: usize,
    /// Fan the outer-sample loop across threads. Reductions stay in index
    /// order, so results do not depend on the worker count.
    pub parallel: bool,
}

impl InnerOptCtx {
    pub fn new(domain: BoxDomain) -> Self {
        let d = domain.dim();
        Self {
            domain,
            restarts: 2,
            raw: 8 * d,
            max_iters: 40,
            parallel: false,
        }
    }

    pub fn with_budget(mut self, restarts: usize, raw: usize) -> Self {
        self.restarts = restarts;
        self.raw = raw;
        self
    }
}

/// Expected improvement from posterior moments.
pub fn ei_from_moments(mean: f64, var: f64, f_star: f64) -> f64 {
    let sigma = var.max(0.0).sqrt();
    if sigma < SIGMA_FLOOR {
        return (mean - f_star).max(0.0);
    }
    let z = (mean - f_star) / sigma;
    (sigma * (z * normal_cdf(z) + normal_pdf(z))).max(0.0)
}

/// Analytic EI over any Gaussian surface.
pub fn ei_value<S: GpSurface>(surface: &S, x: &DVector<f64>, f_star: f64) -> f64 {
    let (mean, var) = surface.mean_var(x);
    ei_from_moments(mean, var, f_star)
}

/// `EI(x | D)` in closed form.
pub fn analytic_ei(gp: &GaussianPosterior, x: &DVector<f64>, f_star: f64) -> f64 {
    ei_value(gp, x, f_star)
}

/// Gradient of analytic EI with respect to `x`.
pub fn analytic_ei_grad(
    gp: &GaussianPosterior,
    x: &DVector<f64>,
    f_star: f64,
) -> Result<DVector<f64>, AcqError> {
    ei_grad_surface(gp, x, f_star)
}

pub fn ei_grad_surface<S: GpSurface>(
    surface: &S,
    x: &DVector<f64>,
    f_star: f64,
) -> Result<DVector<f64>, AcqError> {
    let q = surface.query(x, &[], true);
    let sigma = q.var.max(0.0).sqrt();
    if sigma < SIGMA_FLOOR {
        return Err(AcqError::DegenerateSigma);
    }
    let z = (q.mean - f_star) / sigma;
    let grad_sigma = q.grad_var.as_ref().unwrap() / (2.0 * sigma);
    // dEI/dmu = Phi(z), dEI/dsigma = phi(z)
    Ok(q.grad_mean.as_ref().unwrap() * normal_cdf(z) + grad_sigma * normal_pdf(z))
}

/// SAA estimator of qEI: mean over the tree's outer rows of
/// `max_j (f^i(x_j) - f_star)_+` under joint posterior draws.
pub fn qei_saa(
    gp: &GaussianPosterior,
    xs: &[DVector<f64>],
    f_star: f64,
    tree: &BaseSampleTree,
) -> Result<f64, AcqError> {
    let q = xs.len();
    assert!(q >= 1);
    if tree.q() < q {
        return Err(AcqError::TreeTooSmall {
            what: "draw width",
            needed: q,
            has: tree.q(),
        });
    }
    let n = tree.n();
    let mut acc = 0.0;
    for i in 0..n {
        let xi = &tree.inner_slice(i, InnerSlice::Prefix(1))[..q];
        let draws = gp.sample_joint(xs, xi).map_err(|e| {
            AcqError::UnsupportedReward(format!("joint sampling failed: {e}"))
        })?;
        let best = draws
            .iter()
            .map(|f| (f - f_star).max(0.0))
            .fold(0.0f64, f64::max);
        acc += best;
    }
    Ok(acc / n as f64)
}

/// Which inner draws the estimator consumes, encoding the coarse/fine
/// coupling. `m` is the per-maximization sample count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerDraws {
    /// Fine estimator: the first `m` draws of each row.
    Fine(usize),
    /// Plain coarse estimator: the first `m` draws (a prefix of the fine set).
    PlainCoarse(usize),
    /// Antithetic coarse: average of the maxima over the two halves of `2m`
    /// draws.
    AntitheticCoarse(usize),
}

impl InnerDraws {
    pub fn max_index(&self) -> usize {
        match self {
            InnerDraws::Fine(m) | InnerDraws::PlainCoarse(m) => *m,
            InnerDraws::AntitheticCoarse(m) => 2 * m,
        }
    }
}

/// Deterministic nested SAA objective in the outer candidate `x`.
///
/// Every evaluation is a pure function of `x`: inner maximizations are
/// seeded per outer sample, and warm starts chain only within a single
/// evaluation (sample `i` reuses the inner maximizer of sample `i-1`), so
/// repeated evaluation is bit-identical and finite-difference gradients on
/// top of this objective stay clean.
pub struct LookaheadObjective<'a> {
    gp: &'a GaussianPosterior,
    spec: &'a LookaheadSpec,
    tree: &'a BaseSampleTree,
    inner: &'a InnerOptCtx,
    draws: InnerDraws,
    f_star: f64,
    error: Mutex<Option<AcqError>>,
    evals: AtomicUsize,
}

impl<'a> LookaheadObjective<'a> {
    pub fn new(
        gp: &'a GaussianPosterior,
        spec: &'a LookaheadSpec,
        tree: &'a BaseSampleTree,
        inner: &'a InnerOptCtx,
        draws: InnerDraws,
    ) -> Result<Self, AcqError> {
        let f_star = gp.data().incumbent().ok_or(AcqError::EmptyDataset)?;
        validate_spec(spec)?;
        if tree.n() < spec.n_outer {
            return Err(AcqError::TreeTooSmall {
                what: "outer rows",
                needed: spec.n_outer,
                has: tree.n(),
            });
        }
        let need_m = if spec.inner_mode == InnerMode::Saa || spec.steps == Steps::ThreeStep {
            draws.max_index()
        } else {
            0
        };
        if tree.m_max() < need_m {
            return Err(AcqError::TreeTooSmall {
                what: "inner draws",
                needed: need_m,
                has: tree.m_max(),
            });
        }
        if tree.q() < spec.inner_q() {
            return Err(AcqError::TreeTooSmall {
                what: "draw width",
                needed: spec.inner_q(),
                has: tree.q(),
            });
        }
        Ok(Self {
            gp,
            spec,
            tree,
            inner,
            draws,
            f_star,
            error: Mutex::new(None),
            evals: AtomicUsize::new(0),
        })
    }

    pub fn take_error(&self) -> Option<AcqError> {
        self.error.lock().unwrap().take()
    }

    pub fn evals(&self) -> usize {
        self.evals.load(Ordering::Relaxed)
    }

    /// Evaluates the estimator at `x`, propagating inner failures.
    pub fn try_value(&self, x: &DVector<f64>) -> Result<f64, AcqError> {
        self.evals.fetch_add(1, Ordering::Relaxed);
        let n = self.spec.n_outer;
        let (mu_x, var_x) = self.gp.mean_var(x);
        let sigma_x = var_x.max(0.0).sqrt();

        // One warm chain per antithetic half, threaded through the outer
        // loop of this evaluation only.
        type Warm = [Option<DVector<f64>>; 2];
        let term = |i: usize, warm: &mut Warm| -> Result<f64, AcqError> {
            let y_i = mu_x + sigma_x * self.tree.outer(i);
            let stage0 = if self.spec.stage0_analytic {
                // Added once outside the loop.
                0.0
            } else {
                match self.spec.stage_rewards[0] {
                    Reward::Ei => (y_i - self.f_star).max(0.0),
                    Reward::Zero => 0.0,
                    Reward::Qei(_) => unreachable!("validated"),
                }
            };
            let view = FantasyView::new(self.gp, x, y_i);
            let f1 = self.f_star.max(y_i);
            let inner_value = match self.draws {
                InnerDraws::Fine(m) | InnerDraws::PlainCoarse(m) => {
                    let (v, xm) =
                        self.inner_max(&view, i, 0, InnerSlice::Prefix(m), f1, &warm[0])?;
                    warm[0] = Some(xm);
                    v
                }
                InnerDraws::AntitheticCoarse(m) => {
                    // The antithetic gain needs the two half-sample maxima to
                    // be coupled responses of one mode: locate the mode with
                    // the full draw set, then polish each half locally from
                    // that maximizer.
                    let (_, x_full) =
                        self.inner_max(&view, i, 0, InnerSlice::Prefix(2 * m), f1, &warm[0])?;
                    let a =
                        self.half_max_local(&view, i, InnerSlice::Prefix(m), f1, &x_full)?;
                    let b =
                        self.half_max_local(&view, i, InnerSlice::SecondHalf(m), f1, &x_full)?;
                    warm[0] = Some(x_full);
                    0.5 * (a + b)
                }
            };
            Ok(stage0 + inner_value)
        };

        let total: f64 = if self.inner.parallel {
            use rayon::prelude::*;
            // Parallel fan-out drops the warm chain so results stay
            // independent of the worker count.
            let terms: Vec<Result<f64, AcqError>> = (0..n)
                .into_par_iter()
                .map(|i| term(i, &mut [None, None]))
                .collect();
            let mut acc = 0.0;
            for t in terms {
                acc += t?;
            }
            acc
        } else {
            // Visit outer samples in increasing draw order: consecutive
            // fantasies are then close, so the warm chain converges in a few
            // steps. The summation order is fixed by the sort, independent
            // of everything but the tree.
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                self.tree
                    .outer(a)
                    .partial_cmp(&self.tree.outer(b))
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            let mut warm: Warm = [None, None];
            let mut acc = 0.0;
            for &i in &order {
                acc += term(i, &mut warm)?;
            }
            acc
        };

        let mut value = total / n as f64;
        if self.spec.stage0_analytic {
            value += match self.spec.stage_rewards[0] {
                Reward::Ei => ei_from_moments(mu_x, var_x, self.f_star),
                Reward::Zero => 0.0,
                Reward::Qei(_) => unreachable!("validated"),
            };
        }
        Ok(value)
    }

    /// Maximizes the stage-1 objective for outer sample `i`, returning the
    /// value and the maximizer (which seeds the next sample's warm start).
    fn inner_max(
        &self,
        view: &FantasyView<'_, GaussianPosterior>,
        i: usize,
        half: usize,
        slice: InnerSlice,
        f1: f64,
        warm: &Option<DVector<f64>>,
    ) -> Result<(f64, DVector<f64>), AcqError> {
        match self.spec.steps {
            Steps::TwoStep => match (self.spec.stage_rewards[1], self.spec.inner_mode) {
                (Reward::Zero, _) => Ok((0.0, self.inner.domain.center())),
                (Reward::Ei, InnerMode::Analytic) => {
                    let obj = EiOnSurface { view, f_star: f1 };
                    self.run_inner(&obj, i, half, &self.inner.domain, warm)
                }
                (Reward::Ei, InnerMode::Saa) => {
                    let draws = self.tree.inner_slice(i, slice);
                    let obj = EiSaaOnSurface {
                        view,
                        f_star: f1,
                        draws,
                    };
                    self.run_inner(&obj, i, half, &self.inner.domain, warm)
                }
                (Reward::Qei(q), InnerMode::Saa) => {
                    let draws = self.tree.inner_slice(i, slice);
                    let obj = QeiSaaOnSurface {
                        view,
                        f_star: f1,
                        draws,
                        q,
                        jitter: self.gp.jitter_eff(),
                    };
                    self.run_inner(&obj, i, half, &self.inner.domain.stacked(q), warm)
                }
                (Reward::Qei(_), InnerMode::Analytic) => Err(AcqError::UnsupportedReward(
                    "qEI has no closed form; use the SAA inner mode".into(),
                )),
            },
            Steps::ThreeStep => {
                let draws = self.tree.inner_slice(i, slice);
                let obj = ThreeStepInner {
                    parent: self,
                    outer: i,
                    view,
                    f1,
                    draws,
                };
                self.run_inner(&obj, i, half, &self.inner.domain, warm)
            }
        }
    }

    /// Local polish of one antithetic half-objective from the full-sample
    /// maximizer.
    fn half_max_local(
        &self,
        view: &FantasyView<'_, GaussianPosterior>,
        i: usize,
        slice: InnerSlice,
        f1: f64,
        start: &DVector<f64>,
    ) -> Result<f64, AcqError> {
        let value_at = |obj: &dyn Objective, domain: &BoxDomain| -> Result<f64, AcqError> {
            let opts = MaximizeOpts {
                restarts: 0,
                raw: 0,
                seed: seed_stream(self.tree.seed(), &[0xa117, i as u64]),
                max_iters: self.inner.max_iters.min(40),
                pg_tol: 1e-8,
                first_step_frac: 0.002,
                newton_polish: false,
                extra_starts: vec![start.clone()],
            };
            let res = maximize_with(obj, domain, &opts)
                .map_err(|source| AcqError::InnerOpt { outer: i, source })?;
            Ok(res.value)
        };
        match self.spec.steps {
            Steps::TwoStep => match (self.spec.stage_rewards[1], self.spec.inner_mode) {
                (Reward::Zero, _) => Ok(0.0),
                (Reward::Ei, InnerMode::Analytic) => {
                    // No draws to split: the halves coincide with the full
                    // analytic maximization.
                    value_at(&EiOnSurface { view, f_star: f1 }, &self.inner.domain)
                }
                (Reward::Ei, InnerMode::Saa) => {
                    let draws = self.tree.inner_slice(i, slice);
                    value_at(
                        &EiSaaOnSurface {
                            view,
                            f_star: f1,
                            draws,
                        },
                        &self.inner.domain,
                    )
                }
                (Reward::Qei(q), InnerMode::Saa) => {
                    let draws = self.tree.inner_slice(i, slice);
                    value_at(
                        &QeiSaaOnSurface {
                            view,
                            f_star: f1,
                            draws,
                            q,
                            jitter: self.gp.jitter_eff(),
                        },
                        &self.inner.domain.stacked(q),
                    )
                }
                (Reward::Qei(_), InnerMode::Analytic) => Err(AcqError::UnsupportedReward(
                    "qEI has no closed form; use the SAA inner mode".into(),
                )),
            },
            Steps::ThreeStep => {
                let draws = self.tree.inner_slice(i, slice);
                value_at(
                    &ThreeStepInner {
                        parent: self,
                        outer: i,
                        view,
                        f1,
                        draws,
                    },
                    &self.inner.domain,
                )
            }
        }
    }

    fn run_inner(
        &self,
        obj: &dyn Objective,
        i: usize,
        half: usize,
        domain: &BoxDomain,
        warm: &Option<DVector<f64>>,
    ) -> Result<(f64, DVector<f64>), AcqError> {
        let mut extra = Vec::new();
        if let Some(w) = warm {
            if w.len() == domain.dim() {
                extra.push(w.clone());
            }
        }
        let opts = MaximizeOpts {
            restarts: self.inner.restarts,
            raw: self.inner.raw,
            seed: seed_stream(self.tree.seed(), &[0x577a6e, i as u64, half as u64]),
            max_iters: self.inner.max_iters,
            pg_tol: 1e-8,
            first_step_frac: 0.02,
            newton_polish: false,
            extra_starts: extra,
        };
        let res = maximize_with(obj, domain, &opts)
            .map_err(|source| AcqError::InnerOpt { outer: i, source })?;
        Ok((res.value, res.x_star))
    }

    /// Innermost maximization of the three-step estimator: analytic EI under
    /// the twice-fantasized posterior.
    fn innermost_max(
        &self,
        outer: usize,
        j: usize,
        view2: &FantasyView<'_, FantasyView<'_, GaussianPosterior>>,
        f2: f64,
        warm: &Option<DVector<f64>>,
    ) -> Result<(f64, DVector<f64>), AcqError> {
        let obj = EiOnSurface {
            view: view2,
            f_star: f2,
        };
        let mut extra = Vec::new();
        if let Some(w) = warm {
            extra.push(w.clone());
        }
        let opts = MaximizeOpts {
            restarts: (self.inner.restarts / 2).max(2),
            raw: (self.inner.raw / 2).max(8 * self.inner.domain.dim()),
            seed: seed_stream(self.tree.seed(), &[0x1a57, outer as u64, j as u64]),
            max_iters: self.inner.max_iters.min(40),
            pg_tol: 1e-8,
            first_step_frac: 0.02,
            newton_polish: false,
            extra_starts: extra,
        };
        let res = maximize_with(&obj, &self.inner.domain, &opts)
            .map_err(|source| AcqError::InnerOpt { outer, source })?;
        Ok((res.value, res.x_star))
    }
}

impl<'a> Objective for LookaheadObjective<'a> {
    fn value(&self, x: &DVector<f64>) -> f64 {
        match self.try_value(x) {
            Ok(v) => v,
            Err(e) => {
                self.error.lock().unwrap().get_or_insert(e);
                f64::NEG_INFINITY
            }
        }
    }
}

fn validate_spec(spec: &LookaheadSpec) -> Result<(), AcqError> {
    let expected = match spec.steps {
        Steps::TwoStep => 2,
        Steps::ThreeStep => 3,
    };
    if spec.stage_rewards.len() != expected {
        return Err(AcqError::UnsupportedReward(format!(
            "{:?} needs {} stage rewards, got {}",
            spec.steps,
            expected,
            spec.stage_rewards.len()
        )));
    }
    if spec.n_outer < 1 || spec.m_inner < 1 {
        return Err(AcqError::UnsupportedReward(
            "sample counts must be at least 1".into(),
        ));
    }
    match spec.stage_rewards[0] {
        Reward::Qei(_) => {
            return Err(AcqError::UnsupportedReward(
                "stage-0 qEI batches are not supported by the look-ahead estimators; \
                 use qei_saa for batch acquisition at stage 0"
                    .into(),
            ))
        }
        Reward::Ei | Reward::Zero => {}
    }
    if let Some(Reward::Qei(q)) = spec.stage_rewards.get(1) {
        if *q < 1 {
            return Err(AcqError::UnsupportedReward("qEI needs q >= 1".into()));
        }
    }
    if spec.steps == Steps::ThreeStep {
        match spec.stage_rewards[2] {
            Reward::Ei | Reward::Zero => {}
            Reward::Qei(_) => {
                return Err(AcqError::UnsupportedReward(
                    "the innermost three-step expectation is analytic EI only".into(),
                ))
            }
        }
        if let Reward::Qei(_) = spec.stage_rewards[1] {
            return Err(AcqError::UnsupportedReward(
                "three-step with a qEI middle stage is not supported".into(),
            ));
        }
    }
    Ok(())
}

/// Analytic EI on a fantasy surface, with gradient.
struct EiOnSurface<'v, S: GpSurface> {
    view: &'v S,
    f_star: f64,
}

impl<'v, S: GpSurface> Objective for EiOnSurface<'v, S> {
    fn value(&self, x: &DVector<f64>) -> f64 {
        ei_value(self.view, x, self.f_star)
    }
    fn gradient(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        ei_grad_surface(self.view, x, self.f_star).ok()
    }
}

/// Sample-average EI on a fantasy surface: mean over draws of
/// `(mu + sigma xi_j - f_star)_+`, with subgradient.
struct EiSaaOnSurface<'v, 's, S: GpSurface> {
    view: &'v S,
    f_star: f64,
    draws: &'s [f64],
}

impl<'v, 's, S: GpSurface> Objective for EiSaaOnSurface<'v, 's, S> {
    fn value(&self, x: &DVector<f64>) -> f64 {
        let (mu, var) = self.view.mean_var(x);
        let sigma = var.max(0.0).sqrt();
        let mut acc = 0.0;
        for &xi in self.draws {
            acc += (mu + sigma * xi - self.f_star).max(0.0);
        }
        acc / self.draws.len() as f64
    }

    fn gradient(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        let q = self.view.query(x, &[], true);
        let sigma = q.var.max(0.0).sqrt();
        if sigma < SIGMA_FLOOR {
            return None;
        }
        let gmu = q.grad_mean.as_ref()?;
        let gsigma = q.grad_var.as_ref()? / (2.0 * sigma);
        let mut g = DVector::zeros(x.len());
        for &xi in self.draws {
            if q.mean + sigma * xi - self.f_star > 0.0 {
                g += gmu + &gsigma * xi;
            }
        }
        Some(g / self.draws.len() as f64)
    }
}

/// Sample-average qEI on a fantasy surface over a stacked batch variable.
struct QeiSaaOnSurface<'v, 's, S: GpSurface> {
    view: &'v S,
    f_star: f64,
    /// `m * q` draws, row-major per inner sample.
    draws: &'s [f64],
    q: usize,
    jitter: f64,
}

impl<'v, 's, S: GpSurface> QeiSaaOnSurface<'v, 's, S> {
    /// Joint posterior moments at the batch points encoded in `x`.
    fn joint_moments(&self, x: &DVector<f64>) -> Option<(DVector<f64>, nalgebra::DMatrix<f64>)> {
        let q = self.q;
        let d = x.len() / q;
        let pts: Vec<DVector<f64>> = (0..q)
            .map(|k| DVector::from_iterator(d, (0..d).map(|i| x[k * d + i])))
            .collect();
        let mut mu = DVector::zeros(q);
        let mut cov = nalgebra::DMatrix::zeros(q, q);
        let anchors: Vec<S::Anchor> = pts.iter().map(|p| self.view.make_anchor(p)).collect();
        for a in 0..q {
            let refs: Vec<&S::Anchor> = anchors[..a].iter().collect();
            let qr = self.view.query(&pts[a], &refs, false);
            mu[a] = qr.mean;
            cov[(a, a)] = qr.var;
            for b in 0..a {
                cov[(a, b)] = qr.cov[b];
                cov[(b, a)] = qr.cov[b];
            }
        }
        // Factor with escalation; duplicated batch points are legitimate
        // optimizer iterates.
        let mut j = self.jitter;
        for _ in 0..8 {
            let mut c = cov.clone();
            for a in 0..q {
                c[(a, a)] += j;
            }
            if let Some(ch) = nalgebra::Cholesky::new(c) {
                return Some((mu, ch.l()));
            }
            j *= 10.0;
        }
        None
    }
}

impl<'v, 's, S: GpSurface> Objective for QeiSaaOnSurface<'v, 's, S> {
    fn value(&self, x: &DVector<f64>) -> f64 {
        let Some((mu, l)) = self.joint_moments(x) else {
            return f64::NEG_INFINITY;
        };
        let q = self.q;
        let m = self.draws.len() / q;
        let mut acc = 0.0;
        for jdx in 0..m {
            let xi = &self.draws[jdx * q..(jdx + 1) * q];
            let mut best = 0.0f64;
            for k in 0..q {
                let mut f = mu[k];
                for b in 0..=k {
                    f += l[(k, b)] * xi[b];
                }
                best = best.max(f - self.f_star);
            }
            acc += best;
        }
        acc / m as f64
    }
}

/// The stage-1 objective of the three-step estimator for one outer sample:
/// analytic EI at `x1` plus the sample average over inner draws of the
/// innermost maximized EI under the twice-fantasized model.
struct ThreeStepInner<'p, 'a, 'v> {
    parent: &'p LookaheadObjective<'a>,
    outer: usize,
    view: &'v FantasyView<'a, GaussianPosterior>,
    f1: f64,
    draws: &'v [f64],
}

impl<'p, 'a, 'v> Objective for ThreeStepInner<'p, 'a, 'v> {
    fn value(&self, x1: &DVector<f64>) -> f64 {
        let middle = match self.parent.spec.stage_rewards[1] {
            Reward::Ei => ei_value(self.view, x1, self.f1),
            Reward::Zero => 0.0,
            Reward::Qei(_) => unreachable!("validated"),
        };
        if self.parent.spec.stage_rewards[2] == Reward::Zero {
            return middle;
        }
        let (mu1, var1) = self.view.mean_var(x1);
        let sigma1 = var1.max(0.0).sqrt();
        let m = self.draws.len();
        let mut acc = 0.0;
        let mut warm2: Option<DVector<f64>> = None;
        for (j, &xi) in self.draws.iter().enumerate() {
            let f_ij = mu1 + sigma1 * xi;
            let view2 = FantasyView::new(self.view, x1, f_ij);
            let f2 = self.f1.max(f_ij);
            match self.parent.innermost_max(self.outer, j, &view2, f2, &warm2) {
                Ok((v, xm)) => {
                    acc += v;
                    warm2 = Some(xm);
                }
                Err(e) => {
                    self.parent.error.lock().unwrap().get_or_insert(e);
                    return f64::NEG_INFINITY;
                }
            }
        }
        middle + acc / m as f64
    }
}

/// Two-step look-ahead SAA value at `x` (fine draws, one-shot evaluation).
pub fn two_step_saa(
    gp: &GaussianPosterior,
    x: &DVector<f64>,
    spec: &LookaheadSpec,
    tree: &BaseSampleTree,
    inner: &InnerOptCtx,
) -> Result<f64, AcqError> {
    assert_eq!(spec.steps, Steps::TwoStep);
    let obj = LookaheadObjective::new(gp, spec, tree, inner, InnerDraws::Fine(spec.m_inner))?;
    obj.try_value(x)
}

/// Three-step look-ahead SAA value at `x`.
pub fn three_step_saa(
    gp: &GaussianPosterior,
    x: &DVector<f64>,
    spec: &LookaheadSpec,
    tree: &BaseSampleTree,
    inner: &InnerOptCtx,
) -> Result<f64, AcqError> {
    assert_eq!(spec.steps, Steps::ThreeStep);
    let obj = LookaheadObjective::new(gp, spec, tree, inner, InnerDraws::Fine(spec.m_inner))?;
    obj.try_value(x)
}
