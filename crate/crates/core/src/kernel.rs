//! Stationary covariance kernels with ARD lengthscales.

use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("lengthscale {value} at dimension {dim} must be positive")]
    NonPositiveLengthscale { dim: usize, value: f64 },
    #[error("output scale {0} must be positive")]
    NonPositiveOutputScale(f64),
    #[error("jitter {0} must be positive")]
    NonPositiveJitter(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    Matern52,
    SquaredExponential,
}

/// Kernel hyperparameters. `output_scale` is the prior variance `k(x,x)`.
#[derive(Debug, Clone)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub lengthscales: DVector<f64>,
    pub output_scale: f64,
    pub jitter: f64,
}

impl KernelSpec {
    pub fn new(
        family: KernelFamily,
        lengthscales: DVector<f64>,
        output_scale: f64,
        jitter: f64,
    ) -> Result<Self, KernelError> {
        for (i, &l) in lengthscales.iter().enumerate() {
            if !(l > 0.0) {
                return Err(KernelError::NonPositiveLengthscale { dim: i, value: l });
            }
        }
        if !(output_scale > 0.0) {
            return Err(KernelError::NonPositiveOutputScale(output_scale));
        }
        if !(jitter > 0.0) {
            return Err(KernelError::NonPositiveJitter(jitter));
        }
        Ok(Self {
            family,
            lengthscales,
            output_scale,
            jitter,
        })
    }

    /// Matern 5/2 with a shared lengthscale in every dimension and the default
    /// relative jitter.
    pub fn matern52(dim: usize, lengthscale: f64, output_scale: f64) -> Self {
        Self::new(
            KernelFamily::Matern52,
            DVector::from_element(dim, lengthscale),
            output_scale,
            1e-6 * output_scale,
        )
        .expect("positive hyperparameters")
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// Scaled distance r = sqrt(sum ((x_i - y_i)/l_i)^2).
    fn scaled_dist(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let mut r2 = 0.0;
        for i in 0..x.len() {
            let z = (x[i] - y[i]) / self.lengthscales[i];
            r2 += z * z;
        }
        r2.sqrt()
    }

    pub fn eval(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let r = self.scaled_dist(x, y);
        match self.family {
            KernelFamily::Matern52 => {
                let s5r = 5.0f64.sqrt() * r;
                self.output_scale * (1.0 + s5r + s5r * s5r / 3.0) * (-s5r).exp()
            }
            KernelFamily::SquaredExponential => self.output_scale * (-0.5 * r * r).exp(),
        }
    }

    /// Prior variance at any point.
    pub fn diag(&self) -> f64 {
        self.output_scale
    }

    /// Gradient of `k(x, y)` with respect to `x`.
    pub fn grad_x(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let d = x.len();
        match self.family {
            KernelFamily::Matern52 => {
                let r = self.scaled_dist(x, y);
                // dk/dr = -(5/3) s r (1 + sqrt5 r) exp(-sqrt5 r); dr/dx_i = (x_i-y_i)/(l_i^2 r)
                // The product is smooth through r = 0.
                if r < 1e-14 {
                    return DVector::zeros(d);
                }
                let s5 = 5.0f64.sqrt();
                let coeff =
                    -(5.0 / 3.0) * self.output_scale * (1.0 + s5 * r) * (-s5 * r).exp();
                DVector::from_iterator(
                    d,
                    (0..d).map(|i| {
                        coeff * (x[i] - y[i]) / (self.lengthscales[i] * self.lengthscales[i])
                    }),
                )
            }
            KernelFamily::SquaredExponential => {
                let k = self.eval(x, y);
                DVector::from_iterator(
                    d,
                    (0..d).map(|i| {
                        -k * (x[i] - y[i]) / (self.lengthscales[i] * self.lengthscales[i])
                    }),
                )
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn kernel_is_symmetric_and_peaks_at_zero() {
        for family in [KernelFamily::Matern52, KernelFamily::SquaredExponential] {
            let k = KernelSpec::new(family, dvector![0.7, 1.3], 2.0, 1e-6).unwrap();
            let x = dvector![0.1, -0.5];
            let y = dvector![1.0, 0.3];
            assert!((k.eval(&x, &y) - k.eval(&y, &x)).abs() < 1e-15);
            assert!((k.eval(&x, &x) - 2.0).abs() < 1e-15);
            assert!(k.eval(&x, &y) < 2.0);
        }
    }

    #[test]
    fn grad_matches_finite_differences() {
        for family in [KernelFamily::Matern52, KernelFamily::SquaredExponential] {
            let k = KernelSpec::new(family, dvector![0.8, 1.7], 1.5, 1e-6).unwrap();
            let x = dvector![0.4, -0.2];
            let y = dvector![-0.9, 0.6];
            let g = k.grad_x(&x, &y);
            let h = 1e-6;
            for i in 0..2 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fd = (k.eval(&xp, &y) - k.eval(&xm, &y)) / (2.0 * h);
                assert!(
                    (g[i] - fd).abs() < 1e-6,
                    "family {family:?} dim {i}: {} vs {}",
                    g[i],
                    fd
                );
            }
        }
    }

    #[test]
    fn grad_vanishes_at_coincident_points() {
        let k = KernelSpec::matern52(2, 1.0, 1.0);
        let x = dvector![0.3, 0.3];
        assert_eq!(k.grad_x(&x, &x).norm(), 0.0);
    }

    #[test]
    fn rejects_invalid_hyperparameters() {
        assert!(KernelSpec::new(KernelFamily::Matern52, dvector![0.0], 1.0, 1e-6).is_err());
        assert!(KernelSpec::new(KernelFamily::Matern52, dvector![1.0], -1.0, 1e-6).is_err());
        assert!(KernelSpec::new(KernelFamily::Matern52, dvector![1.0], 1.0, 0.0).is_err());
    }
}
