//! Prints the level schedule for a given accuracy target.

use anyhow::{anyhow, Result};
use serde_json::json;

use mlmcbo_core::mlmc::{nominal_cost, schedule_from_theorem_with};

use crate::config::ExperimentConfig;
use crate::output::{fmt, Table};

pub fn run_allocate(cfg: &ExperimentConfig) -> Result<(Table, serde_json::Value)> {
    let v0 = cfg.v0.unwrap_or(1.0);
    let schedule = schedule_from_theorem_with(cfg.eps, v0, cfg.l_override, cfg.proof_factor)
        .map_err(|e| anyhow!(e.to_string()))?;
    let cost = nominal_cost(&schedule);

    println!(
        "eps = {}, V0 = {v0}, L = {}, predicted cost = {cost}",
        cfg.eps, schedule.levels
    );
    println!("{:>5} {:>8} {:>10}", "level", "M_l", "N_l");
    let mut table = Table::new(&["level", "m_l", "n_l", "eps", "v0", "cost"]);
    for l in 0..=schedule.levels {
        println!("{:>5} {:>8} {:>10}", l, schedule.m[l], schedule.n[l]);
        table.push(
            cfg.seed,
            0,
            &[
                l.to_string(),
                schedule.m[l].to_string(),
                schedule.n[l].to_string(),
                fmt(cfg.eps),
                fmt(v0),
                fmt(cost),
            ],
        );
    }
    let summary = json!({
        "eps": cfg.eps,
        "v0": v0,
        "levels": schedule.levels,
        "m": schedule.m,
        "n": schedule.n,
        "proof_factor": cfg.proof_factor,
        "predicted_cost": cost,
    });
    Ok((table, summary))
}
