//! Scans observation seeds for toy instances whose two-step objective has a
//! clearly dominant peak (well-conditioned rate-experiment fixtures).

use mlmcbo_core::acquisition::{
    InnerDraws, InnerMode, InnerOptCtx, LookaheadObjective, LookaheadSpec, Reward,
};
use mlmcbo_core::bench::toy_1d;
use mlmcbo_core::opt::{raw_candidates, Objective};
use mlmcbo_core::sampling::{seed_stream, BaseSampleTree};
use mlmcbo_core::{BoxDomain, Dataset, GaussianPosterior, KernelSpec};
use nalgebra::dvector;

fn main() {
    let domain = BoxDomain::from_bounds(&[(-10.0, 10.0)]).unwrap();
    let args: Vec<String> = std::env::args().collect();
    let n_obs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(6);
    let ell: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1.5);
    for obs_seed in (0u64..240).map(|k| 500 + k * 13) {
        let pts = raw_candidates(&domain, n_obs, seed_stream(obs_seed, &[0x0b5]));
        let mut data = Dataset::new();
        for p in &pts {
            data.push(p.clone(), toy_1d(p[0])).unwrap();
        }
        let gp = GaussianPosterior::fit(data, KernelSpec::matern52(1, ell, 0.4)).unwrap();
        let spec = LookaheadSpec {
            steps: mlmcbo_core::acquisition::Steps::TwoStep,
            stage_rewards: vec![Reward::Ei, Reward::Ei],
            n_outer: 32,
            m_inner: 1,
            inner_mode: InnerMode::Analytic,
            stage0_analytic: true,
        };
        let tree = BaseSampleTree::generate(seed_stream(obs_seed, &[0x4ef]), 32, 1, 1);
        let inner = InnerOptCtx::new(domain.clone());
        let obj =
            LookaheadObjective::new(&gp, &spec, &tree, &inner, InnerDraws::Fine(1)).unwrap();
        // Coarse scan for local maxima.
        let g = 400usize;
        let vals: Vec<f64> = (0..g)
            .map(|k| obj.value(&dvector![-10.0 + 20.0 * k as f64 / (g - 1) as f64]))
            .collect();
        let mut peaks: Vec<(f64, f64)> = Vec::new();
        for k in 1..g - 1 {
            if vals[k] > vals[k - 1] && vals[k] > vals[k + 1] {
                peaks.push((-10.0 + 20.0 * k as f64 / (g - 1) as f64, vals[k]));
            }
        }
        peaks.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let top = peaks.first().copied().unwrap_or((f64::NAN, 0.0));
        let second = peaks.get(1).copied().unwrap_or((f64::NAN, 0.0));
        let rel_gap = (top.1 - second.1) / top.1.max(1e-12);
        let sep = (top.0 - second.0).abs();
        if rel_gap > 0.12 && sep > 1.0 {
            println!(
                "obs_seed {obs_seed:>6}: peak {:+.3} (v {:.4}) runner {:+.3} (v {:.4}) gap {:.3} sep {:.2}",
                top.0, top.1, second.0, second.1, rel_gap, sep
            );
        }
    }
}
