//! SAA convergence-rate experiments: outer (N), inner (M), and per-level
//! increment rates.

use anyhow::{anyhow, Result};
use rayon::prelude::*;
use serde_json::json;

use mlmcbo_core::acquisition::{InnerDraws, InnerMode, InnerOptCtx, LookaheadObjective};
use mlmcbo_core::mlmc::{fit_rate, Coupling, MlmcDriver};
use mlmcbo_core::opt::{maximize_with, MaximizeOpts};
use mlmcbo_core::sampling::{rng_from, seed_stream, BaseSampleTree};
use mlmcbo_core::{BoxDomain, GaussianPosterior};
use rand_distr::{Distribution, StandardNormal};

use super::{loglog_slope, rate_posterior, reference_maximizer};
use crate::config::ExperimentConfig;
use crate::output::{fmt, Table};

fn outer_opts(domain: &BoxDomain, seed: u64) -> MaximizeOpts {
    MaximizeOpts {
        restarts: 3,
        raw: 24 * domain.dim(),
        seed,
        max_iters: 50,
        pg_tol: 1e-8,
        first_step_frac: 0.02,
        newton_polish: true,
        extra_starts: Vec::new(),
    }
}

/// Maximizer convergence in the outer sample count N, against a high-accuracy
/// reference; the inner expectation is analytic so only outer noise remains.
pub fn run_outer_rate(cfg: &ExperimentConfig) -> Result<(Table, serde_json::Value)> {
    let (gp, domain) = rate_posterior(cfg)?;
    if domain.dim() != 1 {
        return Err(anyhow!("outer-rate expects a 1D benchmark"));
    }
    let x_ref = reference_maximizer(cfg, &gp, &domain)?;
    // The SAA theory assumes a unique optimizer; measurements stay in the
    // reference mode's basin.
    let search = super::mode_box(&domain, &x_ref, cfg.rate_trust_frac);

    let mut table = Table::new(&["n", "x_n", "err", "err_sq"]);
    let mut mean_sq = Vec::new();
    for &n in &cfg.n_grid {
        let errs: Vec<(f64, f64)> = (0..cfg.replications)
            .into_par_iter()
            .map(|rep| {
                let x = saa_maximizer_analytic_inner(
                    cfg,
                    &gp,
                    &domain,
                    &search,
                    &x_ref,
                    n,
                    seed_stream(cfg.seed, &[0x0a, n as u64, rep as u64]),
                );
                let e = (&x - &x_ref).norm();
                (x[0], e)
            })
            .collect();
        for (rep, (x, e)) in errs.iter().enumerate() {
            table.push(
                cfg.seed,
                rep,
                &[n.to_string(), fmt(*x), fmt(*e), fmt(e * e)],
            );
        }
        mean_sq.push(errs.iter().map(|(_, e)| e * e).sum::<f64>() / errs.len() as f64);
    }
    let ns: Vec<f64> = cfg.n_grid.iter().map(|&n| n as f64).collect();
    let (slope, r2) = loglog_slope(&ns, &mean_sq);
    let summary = json!({
        "x_ref": x_ref[0],
        "n_grid": cfg.n_grid,
        "mean_sq_err": mean_sq,
        "slope": slope,
        "r2": r2,
        "points": cfg.n_grid.len(),
        "replications": cfg.replications,
    });
    Ok((table, summary))
}

fn saa_maximizer_analytic_inner(
    cfg: &ExperimentConfig,
    gp: &GaussianPosterior,
    domain: &BoxDomain,
    search: &BoxDomain,
    x_ref: &nalgebra::DVector<f64>,
    n: usize,
    seed: u64,
) -> nalgebra::DVector<f64> {
    let mut spec = cfg.lookahead_spec();
    spec.inner_mode = InnerMode::Analytic;
    spec.stage0_analytic = true;
    spec.stage_rewards[1] = mlmcbo_core::acquisition::Reward::Ei;
    spec.n_outer = n;
    spec.m_inner = 1;
    let tree = BaseSampleTree::generate(seed, n, 1, 1);
    let inner = super::rate_inner_ctx(cfg, domain);
    let obj = LookaheadObjective::new(gp, &spec, &tree, &inner, InnerDraws::Fine(1)).unwrap();
    let mut opts = outer_opts(search, seed_stream(seed, &[1]));
    opts.extra_starts.push(x_ref.clone());
    let res = maximize_with(&obj, search, &opts).unwrap();
    res.x_star
}

/// Maximizer convergence in the inner sample count M with the outer base
/// samples frozen, so only inner-MC noise remains.
pub fn run_inner_rate(cfg: &ExperimentConfig) -> Result<(Table, serde_json::Value)> {
    let (gp, domain) = rate_posterior(cfg)?;
    if domain.dim() != 1 {
        return Err(anyhow!("inner-rate expects a 1D benchmark"));
    }
    let n = cfg.n_fixed;
    // Frozen outer draws shared by every replication and every M.
    let outer: Vec<f64> = {
        let mut rng = rng_from(cfg.seed, &[0x0f0]);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    };
    let m_max = *cfg.m_grid.iter().max().unwrap();

    // Reference: analytic inner with the same frozen outer draws.
    let mut ref_spec = cfg.lookahead_spec();
    ref_spec.inner_mode = InnerMode::Analytic;
    ref_spec.stage0_analytic = true;
    ref_spec.stage_rewards[1] = mlmcbo_core::acquisition::Reward::Ei;
    ref_spec.n_outer = n;
    ref_spec.m_inner = 1;
    let ref_tree = BaseSampleTree::from_parts(
        seed_stream(cfg.seed, &[0x0f1]),
        outer.clone(),
        vec![vec![0.0]; n],
        1,
        1,
    );
    let inner_ctx = super::rate_inner_ctx(cfg, &domain);
    let ref_obj =
        LookaheadObjective::new(&gp, &ref_spec, &ref_tree, &inner_ctx, InnerDraws::Fine(1))
            .map_err(|e| anyhow!(e.to_string()))?;
    // Anchor the whole experiment at the analytic reference's mode.
    let x_anchor = reference_maximizer(cfg, &gp, &domain)?;
    let search = super::mode_box(&domain, &x_anchor, cfg.rate_trust_frac);
    let mut ref_opts = outer_opts(&search, seed_stream(cfg.seed, &[0x0f2]));
    ref_opts.extra_starts.push(x_anchor.clone());
    let x_ref = maximize_with(&ref_obj, &search, &ref_opts)
        .map_err(|e| anyhow!(e.to_string()))?
        .x_star;

    let mut table = Table::new(&["m", "x_nm", "err", "err_sq"]);
    let mut mean_sq = Vec::new();
    for &m in &cfg.m_grid {
        let errs: Vec<(f64, f64)> = (0..cfg.replications)
            .into_par_iter()
            .map(|rep| {
                // Fresh inner draws per replication; outer frozen.
                let mut spec = cfg.lookahead_spec();
                spec.stage0_analytic = true;
                spec.stage_rewards[1] = mlmcbo_core::acquisition::Reward::Ei;
                spec.n_outer = n;
                spec.m_inner = m;
                let inner_rows: Vec<Vec<f64>> = (0..n)
                    .map(|i| {
                        let mut rng = rng_from(
                            cfg.seed,
                            &[0x0f3, rep as u64, i as u64],
                        );
                        (0..m_max).map(|_| StandardNormal.sample(&mut rng)).collect()
                    })
                    .collect();
                let tree = BaseSampleTree::from_parts(
                    seed_stream(cfg.seed, &[0x0f4, rep as u64]),
                    outer.clone(),
                    inner_rows,
                    m_max,
                    1,
                );
                let obj = LookaheadObjective::new(
                    &gp,
                    &spec,
                    &tree,
                    &inner_ctx,
                    InnerDraws::Fine(m),
                )
                .unwrap();
                let mut opts =
                    outer_opts(&search, seed_stream(cfg.seed, &[0x0f5, rep as u64]));
                opts.extra_starts.push(x_ref.clone());
                let res = maximize_with(&obj, &search, &opts).unwrap();
                let e = (&res.x_star - &x_ref).norm();
                (res.x_star[0], e)
            })
            .collect();
        for (rep, (x, e)) in errs.iter().enumerate() {
            table.push(
                cfg.seed,
                rep,
                &[m.to_string(), fmt(*x), fmt(*e), fmt(e * e)],
            );
        }
        mean_sq.push(errs.iter().map(|(_, e)| e * e).sum::<f64>() / errs.len() as f64);
    }
    let ms: Vec<f64> = cfg.m_grid.iter().map(|&m| m as f64).collect();
    let (slope, r2) = loglog_slope(&ms, &mean_sq);
    let summary = json!({
        "x_ref": x_ref[0],
        "n_fixed": n,
        "m_grid": cfg.m_grid,
        "mean_sq_err": mean_sq,
        "slope": slope,
        "r2": r2,
        "points": cfg.m_grid.len(),
        "replications": cfg.replications,
    });
    Ok((table, summary))
}

/// Per-level second moments of the coupled maximizer increments for both
/// couplings, with fitted decay rates.
pub fn run_increment_rate(cfg: &ExperimentConfig) -> Result<(Table, serde_json::Value)> {
    let (gp, domain) = rate_posterior(cfg)?;
    let anchor = reference_maximizer(cfg, &gp, &domain)?;
    let spec = cfg.lookahead_spec();
    let mut driver = MlmcDriver::new(&gp, spec, super::rate_inner_ctx(cfg, &domain));
    if let Some(f) = cfg.trust_frac {
        driver.outer.anchor_trust_frac = f;
    }
    let q = driver.spec.inner_q();

    let mut table = Table::new(&["coupling", "level", "delta", "delta_sq"]);
    let mut summary_per_coupling = serde_json::Map::new();
    for coupling in [Coupling::Plain, Coupling::Antithetic] {
        let name = match coupling {
            Coupling::Plain => "plain",
            Coupling::Antithetic => "antithetic",
        };
        let mut second_moments = Vec::new();
        for &level in &cfg.levels {
            let m_l = 1usize << level;
            let sq: Vec<f64> = (0..cfg.replications)
                .into_par_iter()
                .map(|rep| {
                    let tree = BaseSampleTree::generate(
                        seed_stream(cfg.seed, &[0x1c, level as u64, rep as u64]),
                        cfg.n_fixed,
                        m_l,
                        q,
                    );
                    let out = driver
                        .increment_pair(level, cfg.n_fixed, m_l, &tree, coupling, Some(&anchor))
                        .expect("increment");
                    out.increment.delta.norm_squared()
                })
                .collect();
            for (rep, d2) in sq.iter().enumerate() {
                table.push(
                    cfg.seed,
                    rep,
                    &[
                        name.to_string(),
                        level.to_string(),
                        fmt(d2.sqrt()),
                        fmt(*d2),
                    ],
                );
            }
            second_moments.push(sq.iter().sum::<f64>() / sq.len() as f64);
        }
        let rate = fit_rate(&cfg.levels, &second_moments).map_err(|e| anyhow!(e.to_string()))?;
        summary_per_coupling.insert(
            name.to_string(),
            json!({
                "levels": cfg.levels,
                "second_moments": second_moments,
                "slope": rate.slope,
                "beta_hat": -rate.slope,
                "r2": rate.r2,
            }),
        );
    }
    let summary = json!({
        "n_fixed": cfg.n_fixed,
        "anchor": anchor.as_slice(),
        "replications": cfg.replications,
        "couplings": summary_per_coupling,
    });
    Ok((table, summary))
}
