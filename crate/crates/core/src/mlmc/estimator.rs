//! Multilevel estimators of the acquisition maximizer and value function.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::acquisition::{InnerDraws, InnerOptCtx, LookaheadObjective, LookaheadSpec};
use crate::gp::GaussianPosterior;
use crate::opt::{maximize_with, MaximizeOpts};
use crate::sampling::{seed_stream, BaseSampleTree};

use super::increments::{level_tree, LevelIncrement, LevelOutput};
use super::matching::{match_levels, Candidate, LevelCandidates, MatchedChain, Matching};
use super::rates::{vector_variance, PilotEstimate};
use super::schedule::{nominal_cost, Coupling, MlmcSchedule};
use super::MlmcError;

/// Budgets for the per-level outer maximizations. Anchored levels start at
/// the level-0 anchor and only polish locally, which is what keeps the
/// higher levels cheap.
#[derive(Debug, Clone)]
pub struct OuterOptPolicy {
    pub restarts: usize,
    pub raw: usize,
    pub max_iters: usize,
    pub anchored_restarts: usize,
    pub anchored_raw: usize,
    pub anchored_max_iters: usize,
    /// Half-width of the trust box around the anchor, as a fraction of each
    /// domain width. Keeps anchored levels from drifting to another mode.
    pub anchor_trust_frac: f64,
    /// Run levels 1..=L concurrently.
    pub parallel_levels: bool,
}

impl OuterOptPolicy {
    pub fn for_dim(d: usize) -> Self {
        Self {
            restarts: 4,
            raw: 48 * d,
            max_iters: 80,
            // Anchored levels screen inside the trust box and take its best
            // maximizer; the box keeps every level on the anchor's mode.
            anchored_restarts: 1,
            anchored_raw: 24 * d,
            anchored_max_iters: 60,
            anchor_trust_frac: 0.025,
            parallel_levels: false,
        }
    }
}

/// Everything an estimation run needs besides the schedule: the posterior,
/// the look-ahead structure, and the optimization budgets.
pub struct MlmcDriver<'a> {
    pub gp: &'a GaussianPosterior,
    pub spec: LookaheadSpec,
    pub inner: InnerOptCtx,
    pub outer: OuterOptPolicy,
}

#[derive(Debug, Clone)]
pub struct MlmcDiagnostics {
    pub increments: Vec<LevelIncrement>,
    pub delta_norms: Vec<f64>,
    pub nominal_cost: f64,
    /// Number of matched chains the strategy produced (1 for point matching).
    pub chains: usize,
}

impl<'a> MlmcDriver<'a> {
    pub fn new(gp: &'a GaussianPosterior, spec: LookaheadSpec, inner: InnerOptCtx) -> Self {
        let d = inner.domain.dim();
        Self {
            gp,
            spec,
            inner,
            outer: OuterOptPolicy::for_dim(d),
        }
    }

    fn spec_for(&self, n: usize, m: usize) -> LookaheadSpec {
        let mut s = self.spec.clone();
        s.n_outer = n;
        s.m_inner = m;
        s
    }

    fn trust_box(&self, center: &DVector<f64>) -> crate::domain::BoxDomain {
        let d = self.inner.domain.dim();
        let lo = DVector::from_iterator(
            d,
            (0..d).map(|i| {
                let r = self.outer.anchor_trust_frac * self.inner.domain.width(i);
                (center[i] - r).max(self.inner.domain.lower()[i])
            }),
        );
        let hi = DVector::from_iterator(
            d,
            (0..d).map(|i| {
                let r = self.outer.anchor_trust_frac * self.inner.domain.width(i);
                (center[i] + r).min(self.inner.domain.upper()[i])
            }),
        );
        crate::domain::BoxDomain::new(lo, hi).expect("trust box inside the domain")
    }

    fn outer_opts(&self, anchored: bool, seed: u64) -> MaximizeOpts {
        if anchored {
            MaximizeOpts {
                restarts: self.outer.anchored_restarts,
                raw: self.outer.anchored_raw.max(self.outer.anchored_restarts),
                seed,
                max_iters: self.outer.anchored_max_iters,
                pg_tol: 1e-8,
                // Local polish: stay in the anchor's basin.
                first_step_frac: 0.001,
                newton_polish: true,
                extra_starts: Vec::new(),
            }
        } else {
            MaximizeOpts {
                restarts: self.outer.restarts,
                raw: self.outer.raw.max(self.outer.restarts),
                seed,
                max_iters: self.outer.max_iters,
                pg_tol: 1e-8,
                first_step_frac: 0.02,
                newton_polish: false,
                extra_starts: Vec::new(),
            }
        }
    }

    /// One coupled coarse/fine maximizer pair. The fine side maximizes the
    /// `(N_l, M_l)` estimator; the coarse side reuses the first `M_{l-1}`
    /// draws of the same rows (plain) or averages the maxima over the two
    /// halves (antithetic). With an anchor, both optimizations start at the
    /// anchor and the candidate nearest it is selected.
    pub fn increment_pair(
        &self,
        level: usize,
        n_l: usize,
        m_l: usize,
        tree: &BaseSampleTree,
        coupling: Coupling,
        anchor: Option<&DVector<f64>>,
    ) -> Result<LevelOutput, MlmcError> {
        let lvl_err = |source| MlmcError::Level { level, source };
        let d = self.inner.domain.dim();
        // Anchored maximizations are confined to a trust box around the
        // anchor so the pair cannot hop modes.
        let outer_domain = match anchor {
            Some(a) => self.trust_box(a),
            None => self.inner.domain.clone(),
        };
        let fine_spec = self.spec_for(n_l, m_l);
        let fine_obj =
            LookaheadObjective::new(self.gp, &fine_spec, tree, &self.inner, InnerDraws::Fine(m_l))
                .map_err(lvl_err)?;
        let mut fine_opts = self.outer_opts(anchor.is_some(), seed_stream(tree.seed(), &[0xf1, level as u64]));
        if let Some(a) = anchor {
            fine_opts.extra_starts.push(a.clone());
        }
        let fine_res = maximize_with(&fine_obj, &outer_domain, &fine_opts)?;
        if let Some(e) = fine_obj.take_error() {
            return Err(lvl_err(e));
        }
        let fine_cands: Vec<Candidate> = fine_res
            .candidates
            .iter()
            .map(|(x, v)| Candidate {
                x: x.clone(),
                value: *v,
            })
            .collect();
        // Anchored mode: every candidate already lies in the trust box, so
        // the best value is the matched choice.
        let fine = Candidate {
            x: fine_res.x_star.clone(),
            value: fine_res.value,
        };

        if level == 0 {
            let increment = LevelIncrement {
                level,
                coarse_x: DVector::zeros(d),
                delta: fine.x.clone(),
                fine_x: fine.x.clone(),
                fine_value: fine.value,
                coarse_value: 0.0,
            };
            return Ok(LevelOutput {
                increment,
                candidates: LevelCandidates {
                    level,
                    fine: fine_cands,
                    coarse: Vec::new(),
                },
            });
        }

        let m_coarse = m_l / 2;
        let coarse_draws = match coupling {
            Coupling::Plain => InnerDraws::PlainCoarse(m_coarse),
            Coupling::Antithetic => InnerDraws::AntitheticCoarse(m_coarse),
        };
        let coarse_obj =
            LookaheadObjective::new(self.gp, &fine_spec, tree, &self.inner, coarse_draws)
                .map_err(lvl_err)?;
        // The coarse search shares the fine side's screening candidates
        // (same seed) and additionally starts from the fine maximizer, so
        // the pair reacts to the same landscape.
        let mut coarse_opts = self.outer_opts(
            anchor.is_some(),
            seed_stream(tree.seed(), &[0xf1, level as u64]),
        );
        coarse_opts.extra_starts.push(fine.x.clone());
        if anchor.is_none() {
            coarse_opts.restarts = 2;
            coarse_opts.raw = coarse_opts.raw.max(coarse_opts.restarts);
        }
        let coarse_res = maximize_with(&coarse_obj, &outer_domain, &coarse_opts)?;
        if let Some(e) = coarse_obj.take_error() {
            return Err(lvl_err(e));
        }
        let coarse_cands: Vec<Candidate> = coarse_res
            .candidates
            .iter()
            .map(|(x, v)| Candidate {
                x: x.clone(),
                value: *v,
            })
            .collect();
        let coarse = if anchor.is_some() {
            // Trust-box-global, like the fine side.
            Candidate {
                x: coarse_res.x_star.clone(),
                value: coarse_res.value,
            }
        } else {
            nearest_candidate(&coarse_cands, &fine.x)
        };

        let increment = LevelIncrement {
            level,
            delta: &fine.x - &coarse.x,
            fine_x: fine.x.clone(),
            coarse_x: coarse.x.clone(),
            fine_value: fine.value,
            coarse_value: coarse.value,
        };
        Ok(LevelOutput {
            increment,
            candidates: LevelCandidates {
                level,
                fine: fine_cands,
                coarse: coarse_cands,
            },
        })
    }

    /// The multilevel maximizer estimate: per-level increments summed and
    /// projected onto the box.
    pub fn maximizer(
        &self,
        schedule: &MlmcSchedule,
        seed: u64,
        matching: Matching,
    ) -> Result<(DVector<f64>, MlmcDiagnostics), MlmcError> {
        schedule.validate()?;
        let q = self.spec.inner_q();
        let trees: Vec<BaseSampleTree> = (0..=schedule.levels)
            .map(|l| level_tree(seed, l, schedule.n[l], schedule.m[l], q))
            .collect();

        let outputs: Vec<LevelOutput> = match matching {
            Matching::PointMatchLevel0 => {
                let out0 =
                    self.increment_pair(0, schedule.n[0], 1, &trees[0], schedule.coupling, None)?;
                let anchor = out0.increment.fine_x.clone();
                let rest: Result<Vec<LevelOutput>, MlmcError> = if self.outer.parallel_levels {
                    (1..=schedule.levels)
                        .into_par_iter()
                        .map(|l| {
                            self.increment_pair(
                                l,
                                schedule.n[l],
                                schedule.m[l],
                                &trees[l],
                                schedule.coupling,
                                Some(&anchor),
                            )
                        })
                        .collect()
                } else {
                    (1..=schedule.levels)
                        .map(|l| {
                            self.increment_pair(
                                l,
                                schedule.n[l],
                                schedule.m[l],
                                &trees[l],
                                schedule.coupling,
                                Some(&anchor),
                            )
                        })
                        .collect()
                };
                let mut outputs = vec![out0];
                outputs.extend(rest?);
                outputs
            }
            Matching::Backward => {
                let run = |l: usize| {
                    self.increment_pair(
                        l,
                        schedule.n[l],
                        schedule.m[l],
                        &trees[l],
                        schedule.coupling,
                        None,
                    )
                };
                if self.outer.parallel_levels {
                    (0..=schedule.levels)
                        .into_par_iter()
                        .map(run)
                        .collect::<Result<Vec<_>, _>>()?
                } else {
                    (0..=schedule.levels)
                        .map(run)
                        .collect::<Result<Vec<_>, _>>()?
                }
            }
        };

        let cands: Vec<LevelCandidates> =
            outputs.iter().map(|o| o.candidates.clone()).collect();
        let chains = match_levels(&cands, matching)?;
        let chain = chains
            .iter()
            .max_by(|a, b| a.head_value.partial_cmp(&b.head_value).unwrap())
            .ok_or(MlmcError::EmptyCandidates(0))?;
        let increments = chain_increments(chain);

        let d = self.inner.domain.dim();
        let mut x = DVector::zeros(d);
        for inc in &increments {
            x += &inc.delta;
        }
        let x_star = self.inner.domain.clamp(&x);
        let diagnostics = MlmcDiagnostics {
            delta_norms: increments.iter().map(|i| i.delta.norm()).collect(),
            increments,
            nominal_cost: nominal_cost(schedule),
            chains: chains.len(),
        };
        Ok((x_star, diagnostics))
    }

    /// Multilevel value-function estimator: the telescoped objective itself,
    /// its maximum, and the maximizer of the joint objective.
    pub fn value_function(
        &self,
        schedule: &MlmcSchedule,
        seed: u64,
    ) -> Result<MlmcValue<'a>, MlmcError> {
        schedule.validate()?;
        let q = self.spec.inner_q();
        let trees: Vec<BaseSampleTree> = (0..=schedule.levels)
            .map(|l| level_tree(seed, l, schedule.n[l], schedule.m[l], q))
            .collect();

        // Persistent per-level objectives keep warm starts across the joint
        // maximization.
        let specs: Vec<LookaheadSpec> = (0..=schedule.levels)
            .map(|l| self.spec_for(schedule.n[l], schedule.m[l]))
            .collect();
        let mut fine = Vec::new();
        let mut coarse = Vec::new();
        for l in 0..=schedule.levels {
            let f = LookaheadObjective::new(
                self.gp,
                &specs[l],
                &trees[l],
                &self.inner,
                InnerDraws::Fine(schedule.m[l]),
            )
            .map_err(|source| MlmcError::Level { level: l, source })?;
            fine.push(f);
            if l > 0 {
                let draws = match schedule.coupling {
                    Coupling::Plain => InnerDraws::PlainCoarse(schedule.m[l] / 2),
                    Coupling::Antithetic => InnerDraws::AntitheticCoarse(schedule.m[l] / 2),
                };
                let c = LookaheadObjective::new(
                    self.gp,
                    &specs[l],
                    &trees[l],
                    &self.inner,
                    draws,
                )
                .map_err(|source| MlmcError::Level { level: l, source })?;
                coarse.push(Some(c));
            } else {
                coarse.push(None);
            }
        }
        struct Telescoped<'o, 'a> {
            fine: &'o [LookaheadObjective<'a>],
            coarse: &'o [Option<LookaheadObjective<'a>>],
        }
        impl crate::opt::Objective for Telescoped<'_, '_> {
            fn value(&self, x: &DVector<f64>) -> f64 {
                let mut acc = 0.0;
                for (f, c) in self.fine.iter().zip(self.coarse) {
                    acc += f.value(x);
                    if let Some(c) = c {
                        acc -= c.value(x);
                    }
                }
                acc
            }
        }
        let objective = Telescoped {
            fine: &fine,
            coarse: &coarse,
        };
        let opts = self.outer_opts(false, seed_stream(seed, &[0x5f]));
        let res = maximize_with(&objective, &self.inner.domain, &opts)?;
        for (l, f) in fine.iter().enumerate() {
            if let Some(e) = f.take_error() {
                return Err(MlmcError::Level { level: l, source: e });
            }
        }
        for (l, c) in coarse.iter().enumerate() {
            if let Some(e) = c.as_ref().and_then(|c| c.take_error()) {
                return Err(MlmcError::Level { level: l, source: e });
            }
        }
        drop(objective);

        let alpha = AlphaMl {
            gp: self.gp,
            spec: self.spec.clone(),
            inner: self.inner.clone(),
            levels: (0..=schedule.levels)
                .map(|l| (schedule.n[l], schedule.m[l]))
                .collect(),
            coupling: schedule.coupling,
            trees,
        };
        Ok(MlmcValue {
            v_ml: res.value,
            x_tilde: res.x_star,
            nominal_cost: nominal_cost(schedule),
            alpha,
        })
    }

    /// Sample variances of the per-level increments from `replicates`
    /// independent runs with `n_ref` outer samples, plus the fitted
    /// `C 2^{-beta l}` model for schedules built without pilots.
    pub fn variance_pilot(
        &self,
        levels: &[usize],
        replicates: usize,
        n_ref: usize,
        coupling: Coupling,
        seed: u64,
    ) -> Result<PilotEstimate, MlmcError> {
        assert!(replicates >= 2, "pilot needs at least two replicates");
        let q = self.spec.inner_q();
        let mut variances = Vec::with_capacity(levels.len());
        for &l in levels {
            let m_l = 1usize << l;
            let deltas: Result<Vec<DVector<f64>>, MlmcError> = (0..replicates)
                .into_par_iter()
                .map(|r| {
                    let tree = BaseSampleTree::generate(
                        seed_stream(seed, &[0x9107, l as u64, r as u64]),
                        n_ref,
                        m_l,
                        q,
                    );
                    let out = self.increment_pair(l, n_ref, m_l, &tree, coupling, None)?;
                    Ok(out.increment.delta)
                })
                .collect();
            variances.push(vector_variance(&deltas?));
        }
        Ok(PilotEstimate::finish(
            levels.to_vec(),
            variances,
            n_ref,
            replicates,
            match coupling {
                Coupling::Plain => 1.0,
                Coupling::Antithetic => 1.5,
            },
        ))
    }
}

fn nearest_candidate(cands: &[Candidate], to: &DVector<f64>) -> Candidate {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in cands.iter().enumerate() {
        let d = (&c.x - to).norm();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    cands[best].clone()
}

fn chain_increments(chain: &MatchedChain) -> Vec<LevelIncrement> {
    chain
        .levels
        .iter()
        .map(|ml| {
            let d = ml.fine.x.len();
            let coarse_x = ml
                .coarse
                .as_ref()
                .map(|c| c.x.clone())
                .unwrap_or_else(|| DVector::zeros(d));
            LevelIncrement {
                level: ml.level,
                delta: &ml.fine.x - &coarse_x,
                fine_x: ml.fine.x.clone(),
                coarse_x,
                fine_value: ml.fine.value,
                coarse_value: ml.coarse.as_ref().map(|c| c.value).unwrap_or(0.0),
            }
        })
        .collect()
}

/// The telescoped acquisition estimator as a reusable callable: evaluating
/// at `x` rebuilds the per-level objectives over the frozen trees, so every
/// call is a pure function of `x`.
pub struct AlphaMl<'a> {
    gp: &'a GaussianPosterior,
    spec: LookaheadSpec,
    inner: InnerOptCtx,
    levels: Vec<(usize, usize)>,
    coupling: Coupling,
    trees: Vec<BaseSampleTree>,
}

impl<'a> AlphaMl<'a> {
    /// Builds the estimator with freshly generated level trees (no
    /// maximization).
    pub fn build(
        driver: &MlmcDriver<'a>,
        schedule: &MlmcSchedule,
        seed: u64,
    ) -> Result<AlphaMl<'a>, MlmcError> {
        schedule.validate()?;
        let q = driver.spec.inner_q();
        let trees: Vec<BaseSampleTree> = (0..=schedule.levels)
            .map(|l| level_tree(seed, l, schedule.n[l], schedule.m[l], q))
            .collect();
        Ok(Self {
            gp: driver.gp,
            spec: driver.spec.clone(),
            inner: driver.inner.clone(),
            levels: (0..=schedule.levels)
                .map(|l| (schedule.n[l], schedule.m[l]))
                .collect(),
            coupling: schedule.coupling,
            trees,
        })
    }

    pub fn value(&self, x: &DVector<f64>) -> Result<f64, MlmcError> {
        let mut acc = 0.0;
        for (l, &(n, m)) in self.levels.iter().enumerate() {
            let mut spec = self.spec.clone();
            spec.n_outer = n;
            spec.m_inner = m;
            let fine = LookaheadObjective::new(
                self.gp,
                &spec,
                &self.trees[l],
                &self.inner,
                InnerDraws::Fine(m),
            )
            .map_err(|source| MlmcError::Level { level: l, source })?;
            acc += fine
                .try_value(x)
                .map_err(|source| MlmcError::Level { level: l, source })?;
            if l > 0 {
                let draws = match self.coupling {
                    Coupling::Plain => InnerDraws::PlainCoarse(m / 2),
                    Coupling::Antithetic => InnerDraws::AntitheticCoarse(m / 2),
                };
                let coarse = LookaheadObjective::new(
                    self.gp,
                    &spec,
                    &self.trees[l],
                    &self.inner,
                    draws,
                )
                .map_err(|source| MlmcError::Level { level: l, source })?;
                acc -= coarse
                    .try_value(x)
                    .map_err(|source| MlmcError::Level { level: l, source })?;
            }
        }
        Ok(acc)
    }
}

pub struct MlmcValue<'a> {
    pub v_ml: f64,
    pub x_tilde: DVector<f64>,
    pub nominal_cost: f64,
    pub alpha: AlphaMl<'a>,
}

/// Free-function forms of the driver methods.
pub fn mlmc_maximizer(
    driver: &MlmcDriver<'_>,
    schedule: &MlmcSchedule,
    seed: u64,
    matching: Matching,
) -> Result<(DVector<f64>, MlmcDiagnostics), MlmcError> {
    driver.maximizer(schedule, seed, matching)
}

/// Three-step variant: same telescoping over the three-step SAA objectives
/// with the innermost expectation analytic.
pub fn mlmc_maximizer_three_step(
    driver: &MlmcDriver<'_>,
    schedule: &MlmcSchedule,
    seed: u64,
    matching: Matching,
) -> Result<(DVector<f64>, MlmcDiagnostics), MlmcError> {
    assert_eq!(
        driver.spec.steps,
        crate::acquisition::Steps::ThreeStep,
        "driver spec must be three-step"
    );
    driver.maximizer(schedule, seed, matching)
}

pub fn mlmc_value_function<'a>(
    driver: &MlmcDriver<'a>,
    schedule: &MlmcSchedule,
    seed: u64,
) -> Result<MlmcValue<'a>, MlmcError> {
    driver.value_function(schedule, seed)
}
