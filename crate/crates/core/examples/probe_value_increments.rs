//! Variance decay of the value increments at fixed x (no outer argmax).

use mlmcbo_core::acquisition::{
    InnerDraws, InnerMode, InnerOptCtx, LookaheadObjective, LookaheadSpec, Reward, Steps,
};
use mlmcbo_core::bench;
use mlmcbo_core::dataset::Dataset;
use mlmcbo_core::domain::BoxDomain;
use mlmcbo_core::mlmc::fit_rate;
use mlmcbo_core::opt::raw_candidates;
use mlmcbo_core::sampling::{seed_stream, BaseSampleTree};
use mlmcbo_core::{GaussianPosterior, KernelSpec};
use nalgebra::dvector;
use rayon::prelude::*;

fn main() {
    let domain = BoxDomain::from_bounds(&[(-10.0, 10.0)]).unwrap();
    let pts = raw_candidates(&domain, 6, 1234);
    let mut data = Dataset::new();
    for p in &pts {
        data.push(p.clone(), bench::toy_1d(p[0])).unwrap();
    }
    let args: Vec<String> = std::env::args().collect();
    let ell: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1.5);
    let gp = GaussianPosterior::fit(data, KernelSpec::matern52(1, ell, 0.4)).unwrap();
    let inner = InnerOptCtx::new(domain.clone());
    let x = dvector![1.76];
    let reps = 200usize;
    let n_outer = 32usize;

    for anti in [false, true] {
        let mut variances = Vec::new();
        let levels: Vec<usize> = (1..=6).collect();
        for &l in &levels {
            let m = 1usize << l;
            let deltas: Vec<f64> = (0..reps)
                .into_par_iter()
                .map(|r| {
                    let spec = LookaheadSpec {
                        steps: Steps::TwoStep,
                        stage_rewards: vec![Reward::Ei, Reward::Ei],
                        n_outer,
                        m_inner: m,
                        inner_mode: InnerMode::Saa,
                        stage0_analytic: false,
                    };
                    let tree = BaseSampleTree::generate(
                        seed_stream(31, &[l as u64, r as u64]),
                        n_outer,
                        m,
                        1,
                    );
                    let fine =
                        LookaheadObjective::new(&gp, &spec, &tree, &inner, InnerDraws::Fine(m))
                            .unwrap();
                    let coarse_draws = if anti {
                        InnerDraws::AntitheticCoarse(m / 2)
                    } else {
                        InnerDraws::PlainCoarse(m / 2)
                    };
                    let coarse =
                        LookaheadObjective::new(&gp, &spec, &tree, &inner, coarse_draws).unwrap();
                    fine.try_value(&x).unwrap() - coarse.try_value(&x).unwrap()
                })
                .collect();
            let mean = deltas.iter().sum::<f64>() / reps as f64;
            let var = deltas.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>()
                / (reps - 1) as f64;
            variances.push(var);
            println!(
                "anti={anti} l={l}: mean {mean:+.3e} var {var:.3e}"
            );
        }
        let fit = fit_rate(&levels, &variances).unwrap();
        println!("anti={anti}: slope {:.3} r2 {:.3}", fit.slope, fit.r2);
    }
}
