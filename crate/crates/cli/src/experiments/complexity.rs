//! MSE-versus-cost complexity comparison: nested MC against the multilevel
//! maximizer over a grid of target accuracies.

use anyhow::{anyhow, Result};
use rayon::prelude::*;
use serde_json::json;

use mlmcbo_core::acquisition::{InnerDraws, InnerOptCtx, LookaheadObjective};
use mlmcbo_core::mlmc::{nominal_cost, schedule_from_theorem, Matching, MlmcDriver};
use mlmcbo_core::opt::{maximize_with, MaximizeOpts};
use mlmcbo_core::sampling::{seed_stream, BaseSampleTree};

use super::{loglog_slope, rate_posterior, reference_maximizer};
use crate::config::ExperimentConfig;
use crate::output::{fmt, Table};

pub fn run_complexity(cfg: &ExperimentConfig) -> Result<(Table, serde_json::Value)> {
    let (gp, domain) = rate_posterior(cfg)?;
    let x_ref = reference_maximizer(cfg, &gp, &domain)?;
    let spec = cfg.lookahead_spec();
    let mut driver = MlmcDriver::new(&gp, spec.clone(), InnerOptCtx::new(domain.clone()));
    if let Some(f) = cfg.trust_frac {
        driver.outer.anchor_trust_frac = f;
    }
    let coupling = cfg.coupling_enum();

    // One pilot calibrates V0 for every schedule in the sweep.
    let v0 = match cfg.v0 {
        Some(v) => v,
        None => {
            let pilot = driver
                .variance_pilot(&[0], 32, 8, coupling, seed_stream(cfg.seed, &[0x9107]))
                .map_err(|e| anyhow!(e.to_string()))?;
            (pilot.variances[0] * 8.0).max(1e-6)
        }
    };

    let mut table = Table::new(&["method", "eps", "cost", "err_sq"]);
    let mut mc_points = Vec::new();
    let mut ml_points = Vec::new();
    for &eps in &cfg.eps_grid {
        // Nested MC: N = M = ceil(1/eps^2).
        let k = (1.0 / (eps * eps)).ceil() as usize;
        let mc_cost = (k * (k + 1)) as f64;
        let mc_sq: Vec<f64> = (0..cfg.replications)
            .into_par_iter()
            .map(|rep| {
                let mut s = spec.clone();
                s.n_outer = k;
                s.m_inner = k;
                let tree = BaseSampleTree::generate(
                    seed_stream(cfg.seed, &[0xac, (eps * 1e4) as u64, rep as u64]),
                    k,
                    k,
                    s.inner_q(),
                );
                let obj = LookaheadObjective::new(
                    &gp,
                    &s,
                    &tree,
                    &driver.inner,
                    InnerDraws::Fine(k),
                )
                .unwrap();
                let opts = MaximizeOpts {
                    restarts: 4,
                    raw: 32 * domain.dim(),
                    seed: seed_stream(cfg.seed, &[0xad, (eps * 1e4) as u64, rep as u64]),
                    max_iters: 80,
                    pg_tol: 1e-8,
                    first_step_frac: 0.02,
                    newton_polish: true,
                    extra_starts: Vec::new(),
                };
                let res = maximize_with(&obj, &domain, &opts).unwrap();
                (&res.x_star - &x_ref).norm_squared()
            })
            .collect();
        let mc_mse = mc_sq.iter().sum::<f64>() / mc_sq.len() as f64;
        for (rep, d2) in mc_sq.iter().enumerate() {
            table.push(
                cfg.seed,
                rep,
                &["mc".into(), fmt(eps), fmt(mc_cost), fmt(*d2)],
            );
        }
        mc_points.push((mc_cost, mc_mse));

        // MLMC with the printed parameter choice.
        let schedule = schedule_from_theorem(eps, v0, cfg.l_override)
            .map_err(|e| anyhow!(e.to_string()))?
            .with_coupling(coupling);
        let ml_cost = nominal_cost(&schedule);
        let ml_sq: Vec<f64> = (0..cfg.replications)
            .into_par_iter()
            .map(|rep| {
                let (x, _) = driver
                    .maximizer(
                        &schedule,
                        seed_stream(cfg.seed, &[0xae, (eps * 1e4) as u64, rep as u64]),
                        Matching::PointMatchLevel0,
                    )
                    .expect("mlmc maximizer");
                (&x - &x_ref).norm_squared()
            })
            .collect();
        let ml_mse = ml_sq.iter().sum::<f64>() / ml_sq.len() as f64;
        for (rep, d2) in ml_sq.iter().enumerate() {
            table.push(
                cfg.seed,
                rep,
                &["mlmc".into(), fmt(eps), fmt(ml_cost), fmt(*d2)],
            );
        }
        ml_points.push((ml_cost, ml_mse));
    }

    let (mc_slope, mc_r2) = loglog_slope(
        &mc_points.iter().map(|p| p.0).collect::<Vec<_>>(),
        &mc_points.iter().map(|p| p.1).collect::<Vec<_>>(),
    );
    let (ml_slope, ml_r2) = loglog_slope(
        &ml_points.iter().map(|p| p.0).collect::<Vec<_>>(),
        &ml_points.iter().map(|p| p.1).collect::<Vec<_>>(),
    );

    // Cost comparison at the smallest MSE both methods reach: log-log
    // interpolation of each cost-vs-mse curve.
    let target_mse = mc_points
        .iter()
        .map(|p| p.1)
        .fold(f64::INFINITY, f64::min)
        .max(ml_points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min));
    let cost_at = |points: &[(f64, f64)], mse: f64| -> f64 {
        // Fit cost as a log-log line in mse and evaluate.
        let lx: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
        let ly: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
        let (slope, intercept, _) = mlmcbo_core::stats::linear_fit(&lx, &ly);
        (intercept + slope * mse.ln()).exp()
    };
    let mc_cost_at_target = cost_at(&mc_points, target_mse);
    let ml_cost_at_target = cost_at(&ml_points, target_mse);

    let summary = json!({
        "x_ref": x_ref.as_slice(),
        "v0": v0,
        "eps_grid": cfg.eps_grid,
        "replications": cfg.replications,
        "mc": {"points": mc_points, "slope": mc_slope, "r2": mc_r2},
        "mlmc": {"points": ml_points, "slope": ml_slope, "r2": ml_r2},
        "target_mse": target_mse,
        "mc_cost_at_target": mc_cost_at_target,
        "mlmc_cost_at_target": ml_cost_at_target,
    });
    Ok((table, summary))
}
