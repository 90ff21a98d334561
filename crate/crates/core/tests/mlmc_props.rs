//! Structural and statistical properties of the multilevel estimators.

use mlmcbo_core::acquisition::{
    InnerDraws, InnerMode, InnerOptCtx, LookaheadObjective, LookaheadSpec, Reward, Steps,
};
use mlmcbo_core::bench::toy_1d;
use mlmcbo_core::mlmc::{
    level_tree, mlmc_maximizer_three_step, nominal_cost, schedule_from_theorem, AlphaMl,
    Coupling, Matching, MlmcDriver, MlmcSchedule,
};
use mlmcbo_core::opt::{maximize_with, raw_candidates, MaximizeOpts, Objective};
use mlmcbo_core::sampling::{seed_stream, BaseSampleTree, InnerSlice};
use mlmcbo_core::stats;
use mlmcbo_core::{BoxDomain, Dataset, GaussianPosterior, KernelSpec};
use nalgebra::{dvector, DVector};

fn toy_domain() -> BoxDomain {
    BoxDomain::from_bounds(&[(-10.0, 10.0)]).unwrap()
}

fn toy_gp() -> GaussianPosterior {
    let domain = toy_domain();
    let pts = raw_candidates(&domain, 6, 1234);
    let mut data = Dataset::new();
    for p in &pts {
        data.push(p.clone(), toy_1d(p[0])).unwrap();
    }
    GaussianPosterior::fit(data, KernelSpec::matern52(1, 1.5, 0.4)).unwrap()
}

fn toy_driver(gp: &GaussianPosterior) -> MlmcDriver<'_> {
    let spec = LookaheadSpec::two_step(Reward::Ei, Reward::Ei, 8, 1);
    MlmcDriver::new(gp, spec, InnerOptCtx::new(toy_domain()))
}

#[test]
fn telescoping_collapse_is_bit_exact() {
    let gp = toy_gp();
    let driver = toy_driver(&gp);
    let schedule = MlmcSchedule::single_level(0.5, 8);
    let seed = 2024;
    let (x_mlmc, diag) = driver.maximizer(&schedule, seed, Matching::PointMatchLevel0).unwrap();

    // Reproduce the engine's level-0 computation by hand: same tree, same
    // optimizer options, same seed stream.
    let tree = level_tree(seed, 0, 8, 1, 1);
    let mut spec = driver.spec.clone();
    spec.n_outer = 8;
    spec.m_inner = 1;
    let obj =
        LookaheadObjective::new(&gp, &spec, &tree, &driver.inner, InnerDraws::Fine(1)).unwrap();
    let opts = MaximizeOpts {
        restarts: driver.outer.restarts,
        raw: driver.outer.raw.max(driver.outer.restarts),
        seed: seed_stream(tree.seed(), &[0xf1, 0]),
        max_iters: driver.outer.max_iters,
        pg_tol: 1e-8,
        first_step_frac: 0.02,
        newton_polish: false,
        extra_starts: Vec::new(),
    };
    let direct = maximize_with(&obj, &toy_domain(), &opts).unwrap();
    assert_eq!(x_mlmc[0].to_bits(), direct.x_star[0].to_bits());
    assert_eq!(diag.increments.len(), 1);
    assert_eq!(diag.increments[0].coarse_x, dvector![0.0]);
    assert_eq!(diag.increments[0].delta, diag.increments[0].fine_x);
}

#[test]
fn plain_coarse_consumes_a_prefix_of_fine_draws() {
    let gp = toy_gp();
    let driver = toy_driver(&gp);
    let level = 2;
    let m_l = 4;
    let tree = BaseSampleTree::generate(7, 6, m_l, 1).with_access_log();
    driver
        .increment_pair(level, 6, m_l, &tree, Coupling::Plain, None)
        .unwrap();
    let log = tree.access_log().unwrap().take();
    assert!(!log.is_empty());
    for (_, range) in &log {
        assert!(
            *range == (0..4) || *range == (0..2),
            "unexpected slice {range:?}"
        );
    }
    // Both the fine set and its prefix must actually be read.
    assert!(log.iter().any(|(_, r)| *r == (0..4)));
    assert!(log.iter().any(|(_, r)| *r == (0..2)));
}

#[test]
fn antithetic_coarse_consumes_both_halves() {
    let gp = toy_gp();
    let driver = toy_driver(&gp);
    let level = 2;
    let m_l = 4;
    let tree = BaseSampleTree::generate(7, 6, m_l, 1).with_access_log();
    driver
        .increment_pair(level, 6, m_l, &tree, Coupling::Antithetic, None)
        .unwrap();
    let log = tree.access_log().unwrap().take();
    for (_, range) in &log {
        assert!(
            *range == (0..4) || *range == (0..2) || *range == (2..4),
            "unexpected slice {range:?}"
        );
    }
    assert!(log.iter().any(|(_, r)| *r == (0..2)));
    assert!(log.iter().any(|(_, r)| *r == (2..4)));
}

#[test]
fn coarse_uses_first_inner_draw_at_m2() {
    // M_l = 2: the plain coarse side must read exactly draw index 0.
    let gp = toy_gp();
    let driver = toy_driver(&gp);
    let tree = BaseSampleTree::generate(9, 4, 2, 1).with_access_log();
    driver
        .increment_pair(1, 4, 2, &tree, Coupling::Plain, None)
        .unwrap();
    let log = tree.access_log().unwrap().take();
    let coarse_reads: Vec<_> = log.iter().filter(|(_, r)| *r == (0..1)).collect();
    assert!(!coarse_reads.is_empty());
    assert!(log.iter().all(|(_, r)| *r == (0..2) || *r == (0..1)));
}

#[test]
fn maximizer_is_deterministic_and_sums_increments() {
    let gp = toy_gp();
    let driver = toy_driver(&gp);
    let schedule = schedule_from_theorem(0.45, 0.25, Some(2)).unwrap();
    let (xa, diag_a) = driver.maximizer(&schedule, 99, Matching::PointMatchLevel0).unwrap();
    let (xb, _) = driver.maximizer(&schedule, 99, Matching::PointMatchLevel0).unwrap();
    assert_eq!(xa[0].to_bits(), xb[0].to_bits());

    let mut sum = DVector::zeros(1);
    for inc in &diag_a.increments {
        sum += &inc.delta;
    }
    let clamped = toy_domain().clamp(&sum);
    assert_eq!(clamped[0].to_bits(), xa[0].to_bits());
    assert_eq!(diag_a.nominal_cost, nominal_cost(&schedule));
}

#[test]
fn backward_matching_runs_and_projects() {
    let gp = toy_gp();
    let driver = toy_driver(&gp);
    let schedule = schedule_from_theorem(0.45, 0.25, Some(2)).unwrap();
    let (x, diag) = driver.maximizer(&schedule, 5, Matching::Backward).unwrap();
    assert!(toy_domain().contains(&x));
    assert!(diag.chains >= 1);
}

#[test]
fn three_step_l0_equals_single_level_three_step() {
    let gp = toy_gp();
    let spec = LookaheadSpec::three_step(4, 1);
    let driver = MlmcDriver::new(&gp, spec, InnerOptCtx::new(toy_domain()));
    let schedule = MlmcSchedule::single_level(0.5, 4);
    let seed = 31;
    let (x_ml, _) =
        mlmc_maximizer_three_step(&driver, &schedule, seed, Matching::PointMatchLevel0).unwrap();

    let tree = level_tree(seed, 0, 4, 1, 1);
    let mut spec1 = driver.spec.clone();
    spec1.n_outer = 4;
    spec1.m_inner = 1;
    let obj =
        LookaheadObjective::new(&gp, &spec1, &tree, &driver.inner, InnerDraws::Fine(1)).unwrap();
    let opts = MaximizeOpts {
        restarts: driver.outer.restarts,
        raw: driver.outer.raw.max(driver.outer.restarts),
        seed: seed_stream(tree.seed(), &[0xf1, 0]),
        max_iters: driver.outer.max_iters,
        pg_tol: 1e-8,
        first_step_frac: 0.02,
        newton_polish: false,
        extra_starts: Vec::new(),
    };
    let direct = maximize_with(&obj, &toy_domain(), &opts).unwrap();
    assert_eq!(x_ml[0].to_bits(), direct.x_star[0].to_bits());
}

#[test]
fn three_step_with_zero_last_stage_matches_two_step_engine() {
    // Zeroing the innermost reward collapses the three-step telescoping onto
    // the two-step analytic-inner one on shared samples.
    let gp = toy_gp();
    let mut spec3 = LookaheadSpec::three_step(4, 2);
    spec3.stage_rewards[2] = Reward::Zero;
    let driver3 = MlmcDriver::new(&gp, spec3, InnerOptCtx::new(toy_domain()));
    let spec2 = LookaheadSpec::two_step(Reward::Ei, Reward::Ei, 4, 2)
        .with_inner_mode(InnerMode::Analytic);
    let driver2 = MlmcDriver::new(&gp, spec2, InnerOptCtx::new(toy_domain()));
    let schedule = schedule_from_theorem(0.5, 0.25, Some(1)).unwrap();
    let (x3, _) = driver3.maximizer(&schedule, 17, Matching::PointMatchLevel0).unwrap();
    let (x2, _) = driver2.maximizer(&schedule, 17, Matching::PointMatchLevel0).unwrap();
    assert!(
        (x3[0] - x2[0]).abs() < 5e-2,
        "three-step collapsed {x3:?} vs two-step {x2:?}"
    );
}

#[test]
fn coarse_mean_identity_plain() {
    // E[alpha_{N_l, M_{l-1}}(x)] = E[alpha_{N_{l-1}, M_{l-1}}(x)]: the plain
    // coarse estimator and the next-coarser fine estimator share a mean.
    let gp = toy_gp();
    let inner = InnerOptCtx::new(toy_domain());
    let replicates = 1200usize;
    let xs = [dvector![0.0], dvector![1.8], dvector![5.5]];
    for x in &xs {
        let mut coarse_vals = Vec::with_capacity(replicates);
        let mut fine_vals = Vec::with_capacity(replicates);
        use rayon::prelude::*;
        let pairs: Vec<(f64, f64)> = (0..replicates)
            .into_par_iter()
            .map(|r| {
                let mut spec = LookaheadSpec::two_step(Reward::Ei, Reward::Ei, 4, 2);
                let tree_l =
                    BaseSampleTree::generate(seed_stream(1000, &[r as u64]), 4, 2, 1);
                let coarse = LookaheadObjective::new(
                    &gp,
                    &spec,
                    &tree_l,
                    &inner,
                    InnerDraws::PlainCoarse(1),
                )
                .unwrap()
                .try_value(x)
                .unwrap();
                spec.n_outer = 8;
                spec.m_inner = 1;
                let tree_lm1 =
                    BaseSampleTree::generate(seed_stream(2000, &[r as u64]), 8, 1, 1);
                let fine = LookaheadObjective::new(
                    &gp,
                    &spec,
                    &tree_lm1,
                    &inner,
                    InnerDraws::Fine(1),
                )
                .unwrap()
                .try_value(x)
                .unwrap();
                (coarse, fine)
            })
            .collect();
        for (c, f) in pairs {
            coarse_vals.push(c);
            fine_vals.push(f);
        }
        let mc = stats::mean(&coarse_vals);
        let mf = stats::mean(&fine_vals);
        let se = (stats::variance(&coarse_vals) / replicates as f64
            + stats::variance(&fine_vals) / replicates as f64)
            .sqrt();
        assert!(
            (mc - mf).abs() <= 4.0 * se,
            "x = {x:?}: coarse mean {mc} vs fine mean {mf} (se {se})"
        );
    }
}

#[test]
fn antithetic_variance_dominates_plain_at_high_levels() {
    let gp = toy_gp();
    let driver = toy_driver(&gp);
    // Reference anchor from the analytic-inner objective.
    let ref_spec = LookaheadSpec::two_step(Reward::Ei, Reward::Ei, 64, 1)
        .with_inner_mode(InnerMode::Analytic)
        .with_analytic_stage0();
    let ref_tree = BaseSampleTree::generate(777, 64, 1, 1);
    let ref_obj = LookaheadObjective::new(
        &gp,
        &ref_spec,
        &ref_tree,
        &driver.inner,
        InnerDraws::Fine(1),
    )
    .unwrap();
    let anchor = mlmcbo_core::opt::maximize(&ref_obj, &toy_domain(), 4, 48, 3)
        .unwrap()
        .x_star;

    use rayon::prelude::*;
    for level in [2usize, 3] {
        let m_l = 1usize << level;
        let reps = 32;
        let deltas = |coupling: Coupling| -> Vec<DVector<f64>> {
            (0..reps)
                .into_par_iter()
                .map(|r| {
                    let tree = BaseSampleTree::generate(
                        seed_stream(50, &[level as u64, r as u64]),
                        8,
                        m_l,
                        1,
                    );
                    driver
                        .increment_pair(level, 8, m_l, &tree, coupling, Some(&anchor))
                        .unwrap()
                        .increment
                        .delta
                })
                .collect()
        };
        let var_plain = mlmcbo_core::mlmc::vector_variance(&deltas(Coupling::Plain));
        let var_anti = mlmcbo_core::mlmc::vector_variance(&deltas(Coupling::Antithetic));
        // CI slack: variance ratios at 32 replicates are noisy.
        assert!(
            var_anti <= 1.5 * var_plain,
            "level {level}: anti {var_anti} vs plain {var_plain}"
        );
    }
}

#[test]
fn value_function_l0_is_single_level_objective() {
    let gp = toy_gp();
    let driver = toy_driver(&gp);
    let schedule = MlmcSchedule::single_level(0.5, 6);
    let alpha = AlphaMl::build(&driver, &schedule, 13).unwrap();

    let tree = level_tree(13, 0, 6, 1, 1);
    let mut spec = driver.spec.clone();
    spec.n_outer = 6;
    spec.m_inner = 1;
    let obj =
        LookaheadObjective::new(&gp, &spec, &tree, &driver.inner, InnerDraws::Fine(1)).unwrap();
    for q in [-4.0, 0.3, 2.1, 6.0] {
        let x = dvector![q];
        let a = alpha.value(&x).unwrap();
        let b = obj.try_value(&x).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn value_function_maximum_is_consistent() {
    let gp = toy_gp();
    let driver = toy_driver(&gp);
    let schedule = schedule_from_theorem(0.5, 0.25, Some(2)).unwrap();
    let value = driver.value_function(&schedule, 23).unwrap();
    // The returned callable reproduces the reported maximum at x_tilde.
    let at_xtilde = value.alpha.value(&value.x_tilde).unwrap();
    assert!(
        (at_xtilde - value.v_ml).abs() <= 1e-9 * (1.0 + value.v_ml.abs()),
        "alpha(x_tilde) {at_xtilde} vs v_ml {}",
        value.v_ml
    );
    assert!(toy_domain().contains(&value.x_tilde));
}

#[test]
fn value_function_estimator_is_unbiased_for_finest_level() {
    // E[alpha_ML(x)] equals E[alpha_{N_L, M_L}(x)]: replicate-mean
    // comparison at fixed points with a 4-sigma band.
    let gp = toy_gp();
    let driver = toy_driver(&gp);
    let schedule = MlmcSchedule {
        eps: 0.5,
        levels: 2,
        m: vec![1, 2, 4],
        n: vec![6, 3, 2],
        v0: 0.25,
        coupling: Coupling::Plain,
        beta_hint: 1.0,
    };
    use rayon::prelude::*;
    let replicates = 4000usize;
    for xq in [1.8, 4.9, -2.0] {
        let x = dvector![xq];
        let pairs: Vec<(f64, f64)> = (0..replicates)
            .into_par_iter()
            .map(|r| {
                let alpha = AlphaMl::build(&driver, &schedule, seed_stream(60, &[r as u64]))
                    .unwrap();
                let ml = alpha.value(&x).unwrap();

                let tree = BaseSampleTree::generate(
                    seed_stream(61, &[r as u64]),
                    schedule.n[2],
                    schedule.m[2],
                    1,
                );
                let mut spec = driver.spec.clone();
                spec.n_outer = schedule.n[2];
                spec.m_inner = schedule.m[2];
                let fine = LookaheadObjective::new(
                    &gp,
                    &spec,
                    &tree,
                    &driver.inner,
                    InnerDraws::Fine(schedule.m[2]),
                )
                .unwrap()
                .try_value(&x)
                .unwrap();
                (ml, fine)
            })
            .collect();
        let ml: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let fine: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let (m1, m2) = (stats::mean(&ml), stats::mean(&fine));
        let se = (stats::variance(&ml) / replicates as f64
            + stats::variance(&fine) / replicates as f64)
            .sqrt();
        assert!(
            (m1 - m2).abs() <= 4.0 * se,
            "x = {xq}: ML mean {m1} vs fine mean {m2} (se {se})"
        );
    }
}

#[test]
fn level_failure_names_the_level() {
    // An empty dataset cannot support look-ahead estimation; the error
    // carries the failing level.
    let gp = GaussianPosterior::fit(Dataset::new(), KernelSpec::matern52(1, 1.0, 1.0)).unwrap();
    let spec = LookaheadSpec::two_step(Reward::Ei, Reward::Ei, 2, 1);
    let driver = MlmcDriver::new(&gp, spec, InnerOptCtx::new(toy_domain()));
    let schedule = MlmcSchedule::single_level(0.5, 2);
    let err = driver.maximizer(&schedule, 1, Matching::PointMatchLevel0);
    match err {
        Err(mlmcbo_core::mlmc::MlmcError::Level { level, .. }) => assert_eq!(level, 0),
        other => panic!("expected level error, got {other:?}"),
    }
}

#[test]
fn pilot_smoke_and_scale() {
    let gp = toy_gp();
    let driver = toy_driver(&gp);
    let pilot = driver
        .variance_pilot(&[0, 1], 6, 4, Coupling::Antithetic, 44)
        .unwrap();
    assert_eq!(pilot.variances.len(), 2);
    assert!(pilot.variances.iter().all(|v| v.is_finite() && *v >= 0.0));
}
