//! Full Bayesian-optimization comparison: NMSE against cumulative wall time
//! for the configured designers, plus the GAP protocol.

use anyhow::{anyhow, Result};
use rayon::prelude::*;
use serde_json::json;

use mlmcbo_core::bench;
use mlmcbo_core::bo::{gap, run_bo, BoConfig, BoTrace, Designer, HyperParams};
use mlmcbo_core::sampling::seed_stream;
use mlmcbo_core::stats;

use crate::config::ExperimentConfig;
use crate::output::{fmt, Table};

fn bo_config(cfg: &ExperimentConfig, designer: Designer, seed: u64) -> Result<BoConfig> {
    let benchmark = bench::get(&cfg.benchmark).map_err(|e| anyhow!(e.to_string()))?;
    let mut spec = cfg.lookahead_spec();
    spec.n_outer = 4;
    spec.m_inner = 2;
    let mut c = BoConfig::new(
        benchmark.name,
        benchmark.domain.clone(),
        designer,
        cfg.eps,
        spec,
        seed,
    );
    c.iterations = cfg.iterations;
    c.n_init = cfg
        .n_init
        .unwrap_or(if cfg.gap_mode { 1 } else { 2 * benchmark.dim });
    c.hyper = HyperParams::MlePerIteration;
    c.schedule_mode = cfg.schedule_mode();
    c.l_override = cfg.l_override;
    Ok(c)
}

pub fn run_full_bo(cfg: &ExperimentConfig) -> Result<(Table, serde_json::Value)> {
    let benchmark = bench::get(&cfg.benchmark).map_err(|e| anyhow!(e.to_string()))?;
    let g_star = benchmark.global_max_value;

    let mut table = Table::new(&[
        "designer",
        "iteration",
        "x0_value",
        "incumbent",
        "suboptimality_sq",
        "cumulative_cost",
        "cumulative_wall_seconds",
    ]);
    let mut per_designer = serde_json::Map::new();
    let mut traces_by_designer: Vec<(String, Vec<BoTrace>)> = Vec::new();

    for name in &cfg.designers {
        let designer = cfg.parse_designer(name)?;
        let traces: Vec<BoTrace> = (0..cfg.replications)
            .into_par_iter()
            .map(|rep| {
                let c = bo_config(cfg, designer, seed_stream(cfg.seed, &[rep as u64]))
                    .expect("config");
                let b = benchmark.clone();
                run_bo(&c, &move |x| b.evaluate_unchecked(x)).expect("bo run")
            })
            .collect();
        for (rep, t) in traces.iter().enumerate() {
            let x0_value = t.init_values.first().copied().unwrap_or(f64::NAN);
            for r in &t.records {
                table.push(
                    cfg.seed,
                    rep,
                    &[
                        name.clone(),
                        r.iteration.to_string(),
                        fmt(x0_value),
                        fmt(r.incumbent),
                        fmt((r.incumbent - g_star).powi(2)),
                        fmt(r.cumulative_cost_evals),
                        fmt(r.cumulative_wall_seconds),
                    ],
                );
            }
        }
        let errors: Vec<&String> = traces.iter().filter_map(|t| t.error.as_ref()).collect();
        if !errors.is_empty() {
            return Err(anyhow!("designer {name}: {} runs failed: {}", errors.len(), errors[0]));
        }
        traces_by_designer.push((name.clone(), traces));
    }

    // NMSE trajectories and the equal-wall-budget comparison.
    for (name, traces) in &traces_by_designer {
        let mut curve = Vec::new();
        for k in 0..=cfg.iterations {
            if let Ok((v, _)) = mlmcbo_core::bo::nmse(traces, g_star, k) {
                curve.push(v);
            }
        }
        let mean_wall = stats::mean(
            &traces.iter().map(|t| t.final_wall()).collect::<Vec<_>>(),
        );
        per_designer.insert(
            name.clone(),
            json!({"nmse_by_iteration": curve, "mean_final_wall_seconds": mean_wall}),
        );
    }

    let mut comparison = json!(null);
    if cfg.gap_mode {
        // Table-style protocol: GAP statistics per designer.
        let mut gaps_per = serde_json::Map::new();
        for (name, traces) in &traces_by_designer {
            let mut gaps = Vec::new();
            for t in traces {
                let x0_value = t.init_values[0];
                match gap(t, g_star, x0_value, cfg.gap_budget) {
                    Ok(g) => gaps.push(g),
                    Err(_) => continue,
                }
            }
            let mut sorted = gaps.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let median = if sorted.is_empty() {
                f64::NAN
            } else {
                let mid = sorted.len() / 2;
                if sorted.len() % 2 == 0 {
                    0.5 * (sorted[mid - 1] + sorted[mid])
                } else {
                    sorted[mid]
                }
            };
            gaps_per.insert(
                name.clone(),
                json!({
                    "gaps": gaps,
                    "mean": stats::mean(&gaps),
                    "median": median,
                    "budget": cfg.gap_budget,
                }),
            );
        }
        comparison = json!({"gap": gaps_per});
    } else if traces_by_designer.len() == 2 {
        // Paired equal-wall-budget NMSE comparison between the two designers.
        let (name_a, traces_a) = &traces_by_designer[0];
        let (name_b, traces_b) = &traces_by_designer[1];
        let mut nmse_a = Vec::new();
        let mut nmse_b = Vec::new();
        for (ta, tb) in traces_a.iter().zip(traces_b) {
            let budget = ta.final_wall().min(tb.final_wall());
            let da = ta.initial_incumbent - g_star;
            let db = tb.initial_incumbent - g_star;
            if da == 0.0 || db == 0.0 {
                continue;
            }
            nmse_a.push(((ta.incumbent_at_wall(budget) - g_star) / da).powi(2));
            nmse_b.push(((tb.incumbent_at_wall(budget) - g_star) / db).powi(2));
        }
        let (t_stat, p_less_ab) = stats::paired_t_less(&nmse_b, &nmse_a);
        comparison = json!({
            "designer_a": name_a,
            "designer_b": name_b,
            "mean_nmse_a_at_equal_wall": stats::mean(&nmse_a),
            "mean_nmse_b_at_equal_wall": stats::mean(&nmse_b),
            "paired_t_b_less_a": t_stat,
            "p_b_less_a": p_less_ab,
            "pairs": nmse_a.len(),
        });
    }

    let summary = json!({
        "benchmark": cfg.benchmark,
        "g_star": g_star,
        "eps": cfg.eps,
        "iterations": cfg.iterations,
        "replications": cfg.replications,
        "designers": per_designer,
        "comparison": comparison,
    });
    Ok((table, summary))
}
