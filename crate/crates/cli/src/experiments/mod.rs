//! Experiment implementations behind the CLI subcommands.

pub mod allocate;
pub mod complexity;
pub mod full_bo;
pub mod rates;
pub mod value_compare;

use anyhow::{anyhow, Result};
use nalgebra::DVector;

use mlmcbo_core::acquisition::{InnerDraws, InnerMode, InnerOptCtx, LookaheadObjective};
use mlmcbo_core::bench;
use mlmcbo_core::mle::fit_mle;
use mlmcbo_core::opt::{maximize_with, raw_candidates, MaximizeOpts};
use mlmcbo_core::sampling::{seed_stream, BaseSampleTree};
use mlmcbo_core::{BoxDomain, Dataset, GaussianPosterior, KernelFamily, KernelSpec};

use crate::config::ExperimentConfig;

/// The fixed posterior behind the rate and complexity experiments: a handful
/// of quasi-random observations of the benchmark under a fixed or MLE-fitted
/// kernel. Deterministic given the config.
pub fn rate_posterior(cfg: &ExperimentConfig) -> Result<(GaussianPosterior, BoxDomain)> {
    let bench = bench::get(&cfg.benchmark).map_err(|e| anyhow!(e.to_string()))?;
    let domain = bench.domain.clone();
    let pts = raw_candidates(&domain, cfg.n_observations, seed_stream(cfg.obs_seed, &[0x0b5]));
    let mut data = Dataset::new();
    for p in &pts {
        data.push(p.clone(), bench.evaluate_unchecked(p))
            .map_err(|e| anyhow!(e.to_string()))?;
    }
    let gp = match cfg.kernel.mode.as_str() {
        "mle" => fit_mle(&data, KernelFamily::Matern52, 8, seed_stream(cfg.obs_seed, &[0x31e]))
            .map_err(|e| anyhow!(e.to_string()))?,
        _ => {
            let kernel = KernelSpec::new(
                KernelFamily::Matern52,
                DVector::from_element(domain.dim(), cfg.kernel.lengthscale),
                cfg.kernel.output_scale,
                1e-6 * cfg.kernel.output_scale,
            )
            .map_err(|e| anyhow!(e.to_string()))?;
            GaussianPosterior::fit(data, kernel).map_err(|e| anyhow!(e.to_string()))?
        }
    };
    Ok((gp, domain))
}

/// High-accuracy reference maximizer of the two-step objective: analytic
/// stage-0 and inner expectations, a large outer sample, full multistart.
pub fn reference_maximizer(
    cfg: &ExperimentConfig,
    gp: &GaussianPosterior,
    domain: &BoxDomain,
) -> Result<DVector<f64>> {
    let mut spec = cfg.lookahead_spec();
    spec.inner_mode = InnerMode::Analytic;
    spec.stage0_analytic = true;
    spec.stage_rewards[1] = mlmcbo_core::acquisition::Reward::Ei;
    spec.n_outer = cfg.reference_n;
    spec.m_inner = 1;
    let tree = BaseSampleTree::generate(
        seed_stream(cfg.obs_seed, &[0x4ef]),
        cfg.reference_n,
        1,
        1,
    );
    let mut inner = InnerOptCtx::new(domain.clone());
    inner.parallel = true;
    let obj = LookaheadObjective::new(gp, &spec, &tree, &inner, InnerDraws::Fine(1))
        .map_err(|e| anyhow!(e.to_string()))?;
    let opts = MaximizeOpts {
        restarts: 3,
        raw: 32 * domain.dim(),
        seed: seed_stream(cfg.seed, &[0x4ef, 1]),
        max_iters: 80,
        pg_tol: 1e-9,
        first_step_frac: 0.02,
        newton_polish: true,
        extra_starts: Vec::new(),
    };
    let res = maximize_with(&obj, domain, &opts).map_err(|e| anyhow!(e.to_string()))?;
    if let Some(e) = obj.take_error() {
        return Err(anyhow!(e.to_string()));
    }
    Ok(res.x_star)
}

/// Inner-optimization context with the config's rate-experiment budget.
pub fn rate_inner_ctx(cfg: &ExperimentConfig, domain: &BoxDomain) -> InnerOptCtx {
    let mut ctx = InnerOptCtx::new(domain.clone());
    ctx.restarts = cfg.inner_restarts;
    ctx.raw = cfg.inner_raw_per_dim * domain.dim();
    ctx
}

/// Box of half-width `frac * width` around `center`, clipped to the domain.
pub fn mode_box(domain: &BoxDomain, center: &DVector<f64>, frac: f64) -> BoxDomain {
    let d = domain.dim();
    let lo = DVector::from_iterator(
        d,
        (0..d).map(|i| (center[i] - frac * domain.width(i)).max(domain.lower()[i])),
    );
    let hi = DVector::from_iterator(
        d,
        (0..d).map(|i| (center[i] + frac * domain.width(i)).min(domain.upper()[i])),
    );
    BoxDomain::new(lo, hi).expect("mode box inside the domain")
}

/// Natural log-log least-squares slope with r^2; requires positive data.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let (slope, _, r2) = mlmcbo_core::stats::linear_fit(&lx, &ly);
    (slope, r2)
}
