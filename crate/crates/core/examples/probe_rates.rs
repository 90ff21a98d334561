//! Quick diagnostic: per-level increment variances on the 1D toy.

use std::time::Instant;

use mlmcbo_core::acquisition::{InnerMode, InnerOptCtx, LookaheadSpec, Reward};
use mlmcbo_core::bench;
use mlmcbo_core::dataset::Dataset;
use mlmcbo_core::domain::BoxDomain;
use mlmcbo_core::mle::fit_mle;
use mlmcbo_core::mlmc::{fit_rate, Coupling, MlmcDriver};
use mlmcbo_core::opt::raw_candidates;

fn main() {
    let domain = BoxDomain::from_bounds(&[(-10.0, 10.0)]).unwrap();
    let pts = raw_candidates(&domain, 6, 1234);
    let mut data = Dataset::new();
    for p in &pts {
        data.push(p.clone(), bench::toy_1d(p[0])).unwrap();
    }
    let args: Vec<String> = std::env::args().collect();
    let fixed_l: Option<f64> = args.get(1).and_then(|s| s.parse().ok());
    let gp = match fixed_l {
        Some(l) => {
            let k = mlmcbo_core::KernelSpec::matern52(1, l, 0.4);
            mlmcbo_core::GaussianPosterior::fit(data.clone(), k).unwrap()
        }
        None => fit_mle(&data, mlmcbo_core::KernelFamily::Matern52, 8, 7).unwrap(),
    };
    println!(
        "kernel: l={:.4} s2={:.4}",
        gp.kernel().lengthscales[0],
        gp.kernel().output_scale
    );

    let spec = LookaheadSpec {
        steps: mlmcbo_core::acquisition::Steps::TwoStep,
        stage_rewards: vec![Reward::Ei, Reward::Ei],
        n_outer: 32,
        m_inner: 2,
        inner_mode: InnerMode::Saa,
        stage0_analytic: false,
    };
    let inner = InnerOptCtx::new(domain.clone());
    let driver = MlmcDriver::new(&gp, spec, inner);

    use mlmcbo_core::sampling::{seed_stream, BaseSampleTree};
    use rayon::prelude::*;

    // Reference maximizer of the analytic-inner objective anchors all
    // increments to one mode.
    let t0 = Instant::now();
    let ref_spec = LookaheadSpec {
        steps: mlmcbo_core::acquisition::Steps::TwoStep,
        stage_rewards: vec![Reward::Ei, Reward::Ei],
        n_outer: 256,
        m_inner: 1,
        inner_mode: InnerMode::Analytic,
        stage0_analytic: true,
    };
    let ref_tree = BaseSampleTree::generate(4242, 256, 1, 1);
    let ref_obj = mlmcbo_core::acquisition::LookaheadObjective::new(
        &gp,
        &ref_spec,
        &ref_tree,
        &driver.inner,
        mlmcbo_core::acquisition::InnerDraws::Fine(1),
    )
    .unwrap();
    let anchor = mlmcbo_core::opt::maximize(&ref_obj, &domain, 6, 64, 77)
        .unwrap()
        .x_star;
    println!("anchor: {:.5} ({:.1}s)", anchor[0], t0.elapsed().as_secs_f64());

    let reps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(30);
    for coupling in [Coupling::Plain, Coupling::Antithetic] {
        let t0 = Instant::now();
        let levels: Vec<usize> = (1..=6).collect();
        let mut second_moments = Vec::new();
        for &l in &levels {
            let m_l = 1usize << l;
            let trip: Vec<(f64, f64, f64)> = (0..reps)
                .into_par_iter()
                .map(|r| {
                    let tree = BaseSampleTree::generate(
                        seed_stream(99, &[l as u64, r as u64]),
                        32,
                        m_l,
                        1,
                    );
                    let out = driver
                        .increment_pair(l, 32, m_l, &tree, coupling, Some(&anchor))
                        .unwrap();
                    (
                        out.increment.delta.norm_squared(),
                        out.increment.fine_x[0],
                        out.increment.coarse_x[0],
                    )
                })
                .collect();
            if l >= 5 && std::env::var("PROBE_VERBOSE").is_ok() {
                for (r, t) in trip.iter().enumerate() {
                    if t.0 > 1e-3 {
                        println!("  l{l} r{r}: d2={:.2e} fine={:.4} coarse={:.4}", t.0, t.1, t.2);
                    }
                }
            }
            second_moments.push(trip.iter().map(|t| t.0).sum::<f64>() / reps as f64);
        }
        let fit = fit_rate(&levels, &second_moments).unwrap();
        println!(
            "{coupling:?}: E|dz|^2 {:?}",
            second_moments
                .iter()
                .map(|v| format!("{v:.3e}"))
                .collect::<Vec<_>>()
        );
        println!(
            "  slope {:.3} r2 {:.3} ({} reps, {:.1}s)",
            fit.slope,
            fit.r2,
            reps,
            t0.elapsed().as_secs_f64()
        );
    }
}
