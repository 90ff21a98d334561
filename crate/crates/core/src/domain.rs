//! Box-constrained input domains.

use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("box bounds must satisfy lower < upper componentwise (component {component}: {lower} >= {upper})")]
    InvalidBounds {
        component: usize,
        lower: f64,
        upper: f64,
    },
    #[error("point dimension {got} does not match domain dimension {expected}")]
    DimensionMismatch { got: usize, expected: usize },
}

/// A compact axis-aligned box `[lower, upper]` in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl BoxDomain {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self, DomainError> {
        if lower.len() != upper.len() {
            return Err(DomainError::DimensionMismatch {
                got: upper.len(),
                expected: lower.len(),
            });
        }
        for i in 0..lower.len() {
            if !(lower[i] < upper[i]) {
                return Err(DomainError::InvalidBounds {
                    component: i,
                    lower: lower[i],
                    upper: upper[i],
                });
            }
        }
        Ok(Self { lower, upper })
    }

    /// Convenience constructor from slices of bounds.
    pub fn from_bounds(bounds: &[(f64, f64)]) -> Result<Self, DomainError> {
        let lower = DVector::from_iterator(bounds.len(), bounds.iter().map(|b| b.0));
        let upper = DVector::from_iterator(bounds.len(), bounds.iter().map(|b| b.1));
        Self::new(lower, upper)
    }

    /// The unit cube `[0,1]^d`.
    pub fn unit(dim: usize) -> Self {
        Self {
            lower: DVector::zeros(dim),
            upper: DVector::from_element(dim, 1.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn width(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.len() == self.dim()
            && (0..self.dim()).all(|i| x[i] >= self.lower[i] && x[i] <= self.upper[i])
    }

    /// Componentwise projection onto the box.
    pub fn clamp(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            (0..self.dim()).map(|i| x[i].clamp(self.lower[i], self.upper[i])),
        )
    }

    /// Maps a point of the unit cube into the box.
    pub fn from_unit(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            (0..self.dim()).map(|i| self.lower[i] + u[i] * self.width(i)),
        )
    }

    /// The box `[lower,upper]^q` obtained by stacking `q` copies of this box,
    /// used for joint maximization over a batch of `q` points.
    pub fn stacked(&self, q: usize) -> Self {
        let d = self.dim();
        let mut lower = DVector::zeros(d * q);
        let mut upper = DVector::zeros(d * q);
        for k in 0..q {
            for i in 0..d {
                lower[k * d + i] = self.lower[i];
                upper[k * d + i] = self.upper[i];
            }
        }
        Self { lower, upper }
    }

    pub fn center(&self) -> DVector<f64> {
        (&self.lower + &self.upper) * 0.5
    }
}
