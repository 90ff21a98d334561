//! Kernel hyperparameter selection by maximizing the log marginal likelihood.

use nalgebra::DVector;

use crate::dataset::Dataset;
use crate::domain::BoxDomain;
use crate::gp::{GaussianPosterior, GpError, JITTER_REL};
use crate::kernel::{KernelFamily, KernelSpec};
use crate::opt::{maximize_with, MaximizeOpts};

/// How kernel hyperparameters are chosen when (re)fitting a GP.
#[derive(Debug, Clone)]
pub enum HyperMode {
    /// Use the given kernel unchanged. Deterministic rate experiments rely on
    /// this mode.
    Fixed(KernelSpec),
    /// Maximize the log marginal likelihood over ARD lengthscales and the
    /// output scale, with multi-start restarts.
    Mle {
        family: KernelFamily,
        restarts: usize,
        seed: u64,
    },
}

impl HyperMode {
    pub fn mle(family: KernelFamily, seed: u64) -> Self {
        HyperMode::Mle {
            family,
            restarts: 8,
            seed,
        }
    }
}

/// Fits a GP according to the hyperparameter mode.
pub fn fit_gp(data: &Dataset, mode: &HyperMode) -> Result<GaussianPosterior, GpError> {
    match mode {
        HyperMode::Fixed(kernel) => GaussianPosterior::fit(data.clone(), kernel.clone()),
        HyperMode::Mle {
            family,
            restarts,
            seed,
        } => fit_mle(data, *family, *restarts, *seed),
    }
}

/// Maximizes the log marginal likelihood over log-lengthscales and the log
/// output scale. Search bounds scale with the data spread so the same code
/// serves every benchmark.
pub fn fit_mle(
    data: &Dataset,
    family: KernelFamily,
    restarts: usize,
    seed: u64,
) -> Result<GaussianPosterior, GpError> {
    let d = data.dim().unwrap_or(1);
    if data.len() < 2 {
        // Too little data to say anything about scales.
        let kernel = KernelSpec::new(
            family,
            DVector::from_element(d, 1.0),
            1.0,
            JITTER_REL,
        )?;
        return GaussianPosterior::fit(data.clone(), kernel);
    }

    let mut spread = vec![0.0f64; d];
    for i in 0..d {
        let lo = data
            .points()
            .iter()
            .map(|p| p[i])
            .fold(f64::INFINITY, f64::min);
        let hi = data
            .points()
            .iter()
            .map(|p| p[i])
            .fold(f64::NEG_INFINITY, f64::max);
        spread[i] = (hi - lo).max(1e-3);
    }
    let var_y = crate::stats::variance(data.values()).max(1e-8);

    // theta = (log l_1 .. log l_d, log s2)
    let mut bounds = Vec::with_capacity(d + 1);
    for w in &spread {
        bounds.push(((0.05 * w).ln(), (20.0 * w).ln()));
    }
    bounds.push(((1e-3 * var_y).ln(), (1e3 * var_y).ln()));
    let theta_box = BoxDomain::from_bounds(&bounds).expect("valid log bounds");

    let kernel_of = move |theta: &DVector<f64>| -> Option<KernelSpec> {
        let ls = DVector::from_iterator(d, (0..d).map(|i| theta[i].exp()));
        let s2 = theta[d].exp();
        KernelSpec::new(family, ls, s2, JITTER_REL * s2).ok()
    };
    let data_c = data.clone();
    let objective = move |theta: &DVector<f64>| -> f64 {
        let Some(kernel) = kernel_of(theta) else {
            return f64::NEG_INFINITY;
        };
        match GaussianPosterior::fit(data_c.clone(), kernel) {
            Ok(gp) => gp.log_marginal_likelihood(),
            Err(_) => f64::NEG_INFINITY,
        }
    };

    let opts = MaximizeOpts::new(restarts, (4 * restarts).max(16), seed).with_max_iters(60);
    let res = maximize_with(&objective, &theta_box, &opts)
        .map_err(|e| GpError::DegenerateData(format!("hyperparameter search failed: {e}")))?;
    let ls = DVector::from_iterator(d, (0..d).map(|i| res.x_star[i].exp()));
    let s2 = res.x_star[d].exp();
    let kernel = KernelSpec::new(family, ls, s2, JITTER_REL * s2)?;
    GaussianPosterior::fit(data.clone(), kernel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn mle_recovers_reasonable_scales() {
        // Smooth sinusoid: lengthscale should land well above the sample
        // spacing and the output scale near the signal variance.
        let mut ds = Dataset::new();
        for i in 0..12 {
            let x = -3.0 + 0.5 * i as f64;
            ds.push(dvector![x], (0.8 * x).sin()).unwrap();
        }
        let gp = fit_mle(&ds, KernelFamily::Matern52, 6, 0).unwrap();
        let l = gp.kernel().lengthscales[0];
        assert!(l > 0.3 && l < 30.0, "lengthscale {l}");
        // Interpolation must survive the fitted hyperparameters.
        let (mu, _) = gp.posterior_at(&dvector![0.5]);
        assert!((mu - 0.4f64.sin()).abs() < 0.05, "{mu}");
    }

    #[test]
    fn mle_is_deterministic() {
        let mut ds = Dataset::new();
        for i in 0..6 {
            let x = i as f64;
            ds.push(dvector![x], (x - 2.0) * (x - 2.0) * 0.1).unwrap();
        }
        let a = fit_mle(&ds, KernelFamily::Matern52, 4, 42).unwrap();
        let b = fit_mle(&ds, KernelFamily::Matern52, 4, 42).unwrap();
        assert_eq!(a.kernel().lengthscales, b.kernel().lengthscales);
        assert_eq!(a.kernel().output_scale, b.kernel().output_scale);
    }

    #[test]
    fn single_observation_uses_default_scales() {
        let mut ds = Dataset::new();
        ds.push(dvector![0.0], 1.0).unwrap();
        let gp = fit_mle(&ds, KernelFamily::Matern52, 4, 0).unwrap();
        assert_eq!(gp.kernel().output_scale, 1.0);
    }
}
