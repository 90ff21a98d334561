//! Observation sets with incumbent tracking.

use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("points ({points}) and values ({values}) must have equal length")]
    LengthMismatch { points: usize, values: usize },
    #[error("point dimension {got} does not match dataset dimension {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("non-finite observation value {value}")]
    NonFiniteValue { value: f64 },
}

/// Points are considered duplicates below this Euclidean distance.
pub const DUPLICATE_TOL: f64 = 1e-10;

/// An ordered set of (input, observed value) pairs with a running maximum.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    points: Vec<DVector<f64>>,
    values: Vec<f64>,
    incumbent: Option<f64>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(
        points: Vec<DVector<f64>>,
        values: Vec<f64>,
    ) -> Result<Self, DatasetError> {
        if points.len() != values.len() {
            return Err(DatasetError::LengthMismatch {
                points: points.len(),
                values: values.len(),
            });
        }
        let mut ds = Self::new();
        for (p, v) in points.into_iter().zip(values) {
            ds.push(p, v)?;
        }
        Ok(ds)
    }

    pub fn push(&mut self, point: DVector<f64>, value: f64) -> Result<(), DatasetError> {
        if !value.is_finite() {
            return Err(DatasetError::NonFiniteValue { value });
        }
        if let Some(first) = self.points.first() {
            if first.len() != point.len() {
                return Err(DatasetError::DimensionMismatch {
                    got: point.len(),
                    expected: first.len(),
                });
            }
        }
        self.incumbent = Some(match self.incumbent {
            Some(f) => f.max(value),
            None => value,
        });
        self.points.push(point);
        self.values.push(value);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.points.first().map(|p| p.len())
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Best observed value, `f*(D)`. `None` when empty.
    pub fn incumbent(&self) -> Option<f64> {
        self.incumbent
    }

    /// The observation with the best value.
    pub fn best(&self) -> Option<(&DVector<f64>, f64)> {
        let f = self.incumbent?;
        self.points
            .iter()
            .zip(&self.values)
            .find(|(_, &v)| v == f)
            .map(|(p, &v)| (p, v))
    }

    /// Minimum distance from `x` to any stored point.
    pub fn min_distance(&self, x: &DVector<f64>) -> f64 {
        self.points
            .iter()
            .map(|p| (p - x).norm())
            .fold(f64::INFINITY, f64::min)
    }

    /// True if `x` duplicates a stored point within [`DUPLICATE_TOL`].
    pub fn contains_point(&self, x: &DVector<f64>) -> bool {
        self.min_distance(x) < DUPLICATE_TOL
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn incumbent_is_running_max() {
        let mut ds = Dataset::new();
        ds.push(dvector![0.0], 1.0).unwrap();
        ds.push(dvector![1.0], -2.0).unwrap();
        assert_eq!(ds.incumbent(), Some(1.0));
        ds.push(dvector![2.0], 3.0).unwrap();
        assert_eq!(ds.incumbent(), Some(3.0));
        assert_eq!(ds.best().unwrap().1, 3.0);
    }

    #[test]
    fn rejects_mismatched_dimensions() {
        let mut ds = Dataset::new();
        ds.push(dvector![0.0, 0.0], 1.0).unwrap();
        assert!(ds.push(dvector![1.0], 0.0).is_err());
    }

    #[test]
    fn duplicate_detection_uses_tolerance() {
        let mut ds = Dataset::new();
        ds.push(dvector![0.5], 1.0).unwrap();
        assert!(ds.contains_point(&dvector![0.5 + 1e-12]));
        assert!(!ds.contains_point(&dvector![0.5 + 1e-9]));
    }
}
