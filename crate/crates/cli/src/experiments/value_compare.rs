//! Multilevel value-function estimator against the multilevel maximizer:
//! accuracy-versus-cost for both, and wall-time comparisons.

use std::time::Instant;

use anyhow::{anyhow, Result};
use rayon::prelude::*;
use serde_json::json;

use mlmcbo_core::acquisition::{InnerDraws, InnerMode, InnerOptCtx, LookaheadObjective};
use mlmcbo_core::bench;
use mlmcbo_core::dataset::Dataset;
use mlmcbo_core::mle::fit_mle;
use mlmcbo_core::mlmc::{
    nominal_cost, schedule_from_theorem_with, Coupling, Matching, MlmcDriver,
};
use mlmcbo_core::opt::{maximize_with, raw_candidates, MaximizeOpts};
use mlmcbo_core::sampling::{seed_stream, BaseSampleTree};
use mlmcbo_core::{BoxDomain, GaussianPosterior, KernelFamily, KernelSpec};

use super::{loglog_slope, rate_posterior};
use crate::config::ExperimentConfig;
use crate::output::{fmt, Table};

/// Reference value and maximizer of the analytic-inner objective.
fn reference_value(
    cfg: &ExperimentConfig,
    gp: &GaussianPosterior,
    domain: &BoxDomain,
) -> Result<(f64, nalgebra::DVector<f64>)> {
    let mut spec = cfg.lookahead_spec();
    spec.inner_mode = InnerMode::Analytic;
    spec.stage0_analytic = true;
    spec.stage_rewards[1] = mlmcbo_core::acquisition::Reward::Ei;
    spec.n_outer = cfg.reference_n;
    spec.m_inner = 1;
    let tree = BaseSampleTree::generate(seed_stream(cfg.obs_seed, &[0x4ef]), cfg.reference_n, 1, 1);
    let inner = InnerOptCtx::new(domain.clone());
    let obj = LookaheadObjective::new(gp, &spec, &tree, &inner, InnerDraws::Fine(1))
        .map_err(|e| anyhow!(e.to_string()))?;
    let opts = MaximizeOpts {
        restarts: 4,
        raw: 48 * domain.dim(),
        seed: seed_stream(cfg.seed, &[0x4ef, 1]),
        max_iters: 100,
        pg_tol: 1e-9,
        first_step_frac: 0.02,
        newton_polish: true,
        extra_starts: Vec::new(),
    };
    let res = maximize_with(&obj, domain, &opts).map_err(|e| anyhow!(e.to_string()))?;
    Ok((res.value, res.x_star))
}

pub fn run_value_function_compare(cfg: &ExperimentConfig) -> Result<(Table, serde_json::Value)> {
    let (gp, domain) = rate_posterior(cfg)?;
    let (v_ref, x_ref) = reference_value(cfg, &gp, &domain)?;
    let spec = cfg.lookahead_spec();
    let driver = MlmcDriver::new(&gp, spec, InnerOptCtx::new(domain.clone()));
    // The value-function route keeps the plain coupling of its increment
    // definition; its schedule carries the proof's (L+1) factor.
    let v0 = cfg.v0.unwrap_or(0.25);

    let mut table = Table::new(&[
        "estimator", "eps", "cost", "err_sq", "wall_seconds",
    ]);
    let mut value_points = Vec::new();
    let mut argmax_points = Vec::new();
    let mut wall_rows = Vec::new();
    for &eps in &cfg.eps_grid {
        let schedule = schedule_from_theorem_with(eps, v0, cfg.l_override, true)
            .map_err(|e| anyhow!(e.to_string()))?
            .with_coupling(Coupling::Plain);
        let cost = nominal_cost(&schedule);
        let results: Vec<(f64, f64, f64, f64, f64)> = (0..cfg.replications)
            .into_par_iter()
            .map(|rep| {
                let seed = seed_stream(cfg.seed, &[0x5f, (eps * 1e4) as u64, rep as u64]);
                let t0 = Instant::now();
                let value = driver.value_function(&schedule, seed).expect("value fn");
                let wall_value = t0.elapsed().as_secs_f64();
                let t1 = Instant::now();
                let (x_ml, _) = driver
                    .maximizer(&schedule, seed, Matching::PointMatchLevel0)
                    .expect("maximizer");
                let wall_max = t1.elapsed().as_secs_f64();
                (
                    (value.v_ml - v_ref).powi(2),
                    (&value.x_tilde - &x_ref).norm_squared(),
                    wall_value,
                    wall_max,
                    (&x_ml - &x_ref).norm_squared(),
                )
            })
            .collect();
        let mean =
            |f: &dyn Fn(&(f64, f64, f64, f64, f64)) -> f64| -> f64 {
                results.iter().map(f).sum::<f64>() / results.len() as f64
            };
        let value_mse = mean(&|r| r.0);
        let argmax_mse = mean(&|r| r.1);
        let wall_value = mean(&|r| r.2);
        let wall_max = mean(&|r| r.3);
        for (rep, r) in results.iter().enumerate() {
            table.push(
                cfg.seed,
                rep,
                &[
                    "value".into(),
                    fmt(eps),
                    fmt(cost),
                    fmt(r.0),
                    fmt(r.2),
                ],
            );
            table.push(
                cfg.seed,
                rep,
                &[
                    "argmax-of-value".into(),
                    fmt(eps),
                    fmt(cost),
                    fmt(r.1),
                    fmt(r.2),
                ],
            );
            table.push(
                cfg.seed,
                rep,
                &[
                    "maximizer".into(),
                    fmt(eps),
                    fmt(cost),
                    fmt(r.4),
                    fmt(r.3),
                ],
            );
        }
        value_points.push((cost, value_mse));
        argmax_points.push((cost, argmax_mse));
        wall_rows.push(json!({
            "eps": eps,
            "wall_value_function": wall_value,
            "wall_maximizer": wall_max,
        }));
    }

    let (value_slope, value_r2) = loglog_slope(
        &value_points.iter().map(|p| p.0).collect::<Vec<_>>(),
        &value_points.iter().map(|p| p.1).collect::<Vec<_>>(),
    );
    let (argmax_slope, argmax_r2) = loglog_slope(
        &argmax_points.iter().map(|p| p.0).collect::<Vec<_>>(),
        &argmax_points.iter().map(|p| p.1).collect::<Vec<_>>(),
    );

    // Wall time against observation count (a BO-like sweep at fixed eps).
    let benchmark = bench::get(&cfg.benchmark).map_err(|e| anyhow!(e.to_string()))?;
    let mut obs_rows = Vec::new();
    for &n_obs in &cfg.obs_grid {
        let pts = raw_candidates(&domain, n_obs, seed_stream(cfg.obs_seed, &[0x0b5, n_obs as u64]));
        let mut data = Dataset::new();
        for p in &pts {
            data.push(p.clone(), benchmark.evaluate_unchecked(p))
                .map_err(|e| anyhow!(e.to_string()))?;
        }
        let gp_n = match cfg.kernel.mode.as_str() {
            "mle" => fit_mle(&data, KernelFamily::Matern52, 8, cfg.obs_seed)
                .map_err(|e| anyhow!(e.to_string()))?,
            _ => GaussianPosterior::fit(
                data,
                KernelSpec::new(
                    KernelFamily::Matern52,
                    nalgebra::DVector::from_element(domain.dim(), cfg.kernel.lengthscale),
                    cfg.kernel.output_scale,
                    1e-6 * cfg.kernel.output_scale,
                )
                .map_err(|e| anyhow!(e.to_string()))?,
            )
            .map_err(|e| anyhow!(e.to_string()))?,
        };
        let driver_n = MlmcDriver::new(&gp_n, cfg.lookahead_spec(), InnerOptCtx::new(domain.clone()));
        let schedule = schedule_from_theorem_with(cfg.eps, v0, cfg.l_override, true)
            .map_err(|e| anyhow!(e.to_string()))?
            .with_coupling(Coupling::Plain);
        let reps = cfg.replications.min(10).max(2);
        let t0 = Instant::now();
        for rep in 0..reps {
            driver_n
                .value_function(&schedule, seed_stream(cfg.seed, &[0x5f1, n_obs as u64, rep as u64]))
                .map_err(|e| anyhow!(e.to_string()))?;
        }
        let wall_value = t0.elapsed().as_secs_f64() / reps as f64;
        let t1 = Instant::now();
        for rep in 0..reps {
            driver_n
                .maximizer(
                    &schedule,
                    seed_stream(cfg.seed, &[0x5f2, n_obs as u64, rep as u64]),
                    Matching::PointMatchLevel0,
                )
                .map_err(|e| anyhow!(e.to_string()))?;
        }
        let wall_max = t1.elapsed().as_secs_f64() / reps as f64;
        obs_rows.push(json!({
            "observations": n_obs,
            "wall_value_function": wall_value,
            "wall_maximizer": wall_max,
        }));
    }

    let summary = json!({
        "v_ref": v_ref,
        "x_ref": x_ref.as_slice(),
        "eps_grid": cfg.eps_grid,
        "replications": cfg.replications,
        "value": {"points": value_points, "slope": value_slope, "r2": value_r2},
        "argmax_of_value": {"points": argmax_points, "slope": argmax_slope, "r2": argmax_r2},
        "wall_by_eps": wall_rows,
        "wall_by_observations": obs_rows,
    });
    Ok((table, summary))
}
