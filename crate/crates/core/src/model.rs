use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Quadratic joint utility `Φ(x, y) = x'Ay` with heterogeneity scale `σ`.
///
/// Only `B = A/σ` is identified; a fitted model is stored normalized with
/// `‖A‖_F = 1` and `σ = 1/‖B‖_F`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinityModel {
    pub a_matrix: Array2<f64>,
    pub sigma: f64,
    pub normalized: bool,
}

impl AffinityModel {
    pub fn new(a_matrix: Array2<f64>, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidInput(format!("sigma must be positive, got {sigma}")));
        }
        if a_matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("affinity matrix must be finite".into()));
        }
        let normalized = (frobenius(&a_matrix) - 1.0).abs() < 1e-12;
        Ok(Self {
            a_matrix,
            sigma,
            normalized,
        })
    }

    /// Normalized model from the identified parameter `B = A/σ`.
    ///
    /// `B = 0` (independence) has no normalized form: it is returned with a
    /// zero affinity matrix, `σ = ∞` and `normalized = false`.
    pub fn from_b(b: &Array2<f64>) -> Self {
        let norm = frobenius(b);
        if norm == 0.0 {
            return Self {
                a_matrix: b.clone(),
                sigma: f64::INFINITY,
                normalized: false,
            };
        }
        Self {
            a_matrix: b / norm,
            sigma: 1.0 / norm,
            normalized: true,
        }
    }

    /// The identified parameter `B = A/σ`.
    pub fn b(&self) -> Array2<f64> {
        if self.sigma.is_infinite() {
            return Array2::zeros(self.a_matrix.raw_dim());
        }
        &self.a_matrix / self.sigma
    }

    pub fn dx(&self) -> usize {
        self.a_matrix.nrows()
    }

    pub fn dy(&self) -> usize {
        self.a_matrix.ncols()
    }

    /// `Φ_A(x, y) = x'Ay`.
    pub fn joint_utility(&self, x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
        x.dot(&self.a_matrix.dot(&y))
    }

    /// Model for attributes measured as `(D_x x, D_y y)` with positive diagonal
    /// rescalings: `A ↦ D_x^{-1} A D_y^{-1}`.
    pub fn rescaled(&self, dx: &Array1<f64>, dy: &Array1<f64>) -> Self {
        let mut a = self.a_matrix.clone();
        for ((i, j), v) in a.indexed_iter_mut() {
            *v /= dx[i] * dy[j];
        }
        let out = Self {
            a_matrix: a,
            sigma: self.sigma,
            normalized: false,
        };
        if self.sigma.is_infinite() {
            out
        } else {
            Self::from_b(&out.b())
        }
    }
}

pub fn frobenius(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn normalization_round_trips_b() {
        let b = array![[3.0, 0.0], [0.0, 4.0]];
        let m = AffinityModel::from_b(&b);
        assert!(m.normalized);
        assert!((frobenius(&m.a_matrix) - 1.0).abs() < 1e-12);
        assert!((m.sigma - 0.2).abs() < 1e-15);
        let back = m.b();
        for (u, v) in back.iter().zip(b.iter()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_b_is_independence() {
        let m = AffinityModel::from_b(&Array2::zeros((2, 3)));
        assert!(!m.normalized);
        assert!(m.sigma.is_infinite());
        assert_eq!(m.b(), Array2::<f64>::zeros((2, 3)));
    }

    #[test]
    fn rejects_nonpositive_sigma() {
        assert!(AffinityModel::new(array![[1.0]], 0.0).is_err());
        assert!(AffinityModel::new(array![[1.0]], -1.0).is_err());
    }

    #[test]
    fn joint_utility_is_bilinear() {
        let m = AffinityModel::new(array![[0.0, 4.0], [-1.0, 0.0]], 1.0).unwrap();
        let v = m.joint_utility(array![1.0, 2.0].view(), array![3.0, 5.0].view());
        assert_eq!(v, 4.0 * 1.0 * 5.0 - 2.0 * 3.0);
    }
}
