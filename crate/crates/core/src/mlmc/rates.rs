//! Empirical decay-rate estimation for increment variances.

use nalgebra::DVector;

use crate::stats::linear_fit;

use super::MlmcError;

#[derive(Debug, Clone)]
pub struct RateEstimate {
    /// Slope of log2(value) against level; the decay rate is `-slope`.
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub levels_used: Vec<usize>,
}

/// Least-squares fit of `log2(value)` against the level index.
pub fn fit_rate(levels: &[usize], values: &[f64]) -> Result<RateEstimate, MlmcError> {
    if levels.len() < 3 || values.len() != levels.len() {
        return Err(MlmcError::TooFewLevels(levels.len().min(values.len())));
    }
    for (&l, &v) in levels.iter().zip(values) {
        if !(v > 0.0) {
            return Err(MlmcError::NonPositiveRateValue { level: l, value: v });
        }
    }
    let xs: Vec<f64> = levels.iter().map(|&l| l as f64).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.log2()).collect();
    let (slope, intercept, r2) = linear_fit(&xs, &ys);
    Ok(RateEstimate {
        slope,
        intercept,
        r2,
        levels_used: levels.to_vec(),
    })
}

/// Unbiased scalar variance of vector samples: mean squared deviation from
/// the sample mean, summed over components.
pub fn vector_variance(samples: &[DVector<f64>]) -> f64 {
    let r = samples.len();
    if r < 2 {
        return 0.0;
    }
    let dim = samples[0].len();
    let mut mean = DVector::zeros(dim);
    for s in samples {
        mean += s;
    }
    mean /= r as f64;
    samples
        .iter()
        .map(|s| (s - &mean).norm_squared())
        .sum::<f64>()
        / (r - 1) as f64
}

/// Pilot-run estimates of per-level increment variances and the fitted
/// `C 2^{-beta l}` model.
#[derive(Debug, Clone)]
pub struct PilotEstimate {
    pub levels: Vec<usize>,
    pub variances: Vec<f64>,
    pub n_ref: usize,
    pub replicates: usize,
    /// Constant of the variance model, `V_l ~ c_fit * 2^{-beta_fit * l}`.
    pub c_fit: f64,
    pub beta_fit: f64,
}

impl PilotEstimate {
    pub(crate) fn finish(
        levels: Vec<usize>,
        variances: Vec<f64>,
        n_ref: usize,
        replicates: usize,
        beta_fallback: f64,
    ) -> Self {
        let (c_fit, beta_fit) = if levels.len() >= 3 && variances.iter().all(|&v| v > 0.0) {
            match fit_rate(&levels, &variances) {
                Ok(r) => (2.0f64.powf(r.intercept), -r.slope),
                Err(_) => (variances[0].max(1e-12), beta_fallback),
            }
        } else {
            (
                variances.first().copied().unwrap_or(1.0).max(1e-12),
                beta_fallback,
            )
        };
        Self {
            levels,
            variances,
            n_ref,
            replicates,
            c_fit,
            beta_fit,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    use rand_xoshiro::Xoshiro256PlusPlus;

    #[test]
    fn exact_geometric_decay_fits_slope_one() {
        let levels = [1usize, 2, 3, 4, 5, 6];
        let values: Vec<f64> = levels.iter().map(|&l| 2.0f64.powi(-(l as i32))).collect();
        let r = fit_rate(&levels, &values).unwrap();
        assert!((r.slope + 1.0).abs() < 1e-12);
        assert!((r.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quartic_decay_fits_slope_two() {
        let levels = [0usize, 1, 2, 3];
        let values: Vec<f64> = levels.iter().map(|&l| 4.0f64.powi(-(l as i32))).collect();
        let r = fit_rate(&levels, &values).unwrap();
        assert!((r.slope + 2.0).abs() < 1e-12);
    }

    #[test]
    fn rate_fit_input_validation() {
        assert!(matches!(
            fit_rate(&[1, 2], &[1.0, 0.5]),
            Err(MlmcError::TooFewLevels(2))
        ));
        assert!(matches!(
            fit_rate(&[1, 2, 3], &[1.0, 0.0, 0.5]),
            Err(MlmcError::NonPositiveRateValue { .. })
        ));
    }

    #[test]
    fn constant_increments_have_zero_variance() {
        let samples = vec![dvector![1.5, -0.5]; 8];
        assert_eq!(vector_variance(&samples), 0.0);
    }

    #[test]
    fn synthetic_normal_increments_recover_slope() {
        // Increments drawn i.i.d. N(0, 2^{-l}) per level: the fitted beta
        // should sit near 1 with generous replication.
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(2);
        let levels: Vec<usize> = (1..=6).collect();
        let mut variances = Vec::new();
        for &l in &levels {
            let sd = 2.0f64.powf(-(l as f64) / 2.0);
            let samples: Vec<DVector<f64>> = (0..4000)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    dvector![sd * z]
                })
                .collect();
            variances.push(vector_variance(&samples));
        }
        let r = fit_rate(&levels, &variances).unwrap();
        assert!((r.slope + 1.0).abs() < 0.1, "slope {}", r.slope);
        let p = PilotEstimate::finish(levels, variances, 8, 4000, 1.0);
        assert!((p.beta_fit - 1.0).abs() < 0.1);
        assert!((p.c_fit - 1.0).abs() < 0.3, "c {}", p.c_fit);
    }
}
