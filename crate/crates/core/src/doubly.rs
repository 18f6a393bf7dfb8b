//! Linear operators on matrices ("doubly-indexed matrices").
//!
//! A matrix `M` of shape `(r, c)` is vectorized row-major: entry `(i, j)` goes
//! to position `i·c + j`. Every operator in the crate uses this convention,
//! so `R^{ij}_{kl}` is stored at `data[[flatten(i, j), flatten(k, l)]]`.

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, Inverse, UPLO};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Position of entry `(i, j)` of a matrix with `cols` columns.
#[inline]
pub fn flatten(i: usize, j: usize, cols: usize) -> usize {
    i * cols + j
}

/// Inverse of [`flatten`].
#[inline]
pub fn unflatten(k: usize, cols: usize) -> (usize, usize) {
    (k / cols, k % cols)
}

/// Row-major vectorization.
pub fn vec_rm(m: &Array2<f64>) -> Array1<f64> {
    Array1::from_iter(m.iter().copied())
}

/// Inverse of [`vec_rm`].
pub fn unvec_rm(v: &Array1<f64>, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_vec((rows, cols), v.to_vec()).expect("length rows*cols")
}

/// An operator mapping `(c1 × c2)` matrices to `(r1 × r2)` matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoublyIndexedMatrix {
    pub data: Array2<f64>,
    /// Shape of the output matrices (row index pairs).
    pub row_shape: (usize, usize),
    /// Shape of the input matrices (column index pairs).
    pub col_shape: (usize, usize),
}

impl DoublyIndexedMatrix {
    pub fn new(data: Array2<f64>, row_shape: (usize, usize), col_shape: (usize, usize)) -> Result<Self> {
        if data.dim() != (row_shape.0 * row_shape.1, col_shape.0 * col_shape.1) {
            return Err(Error::DimensionMismatch(format!(
                "data {:?} does not match index shapes {:?} × {:?}",
                data.dim(),
                row_shape,
                col_shape
            )));
        }
        Ok(Self {
            data,
            row_shape,
            col_shape,
        })
    }

    pub fn identity(shape: (usize, usize)) -> Self {
        let n = shape.0 * shape.1;
        Self {
            data: Array2::eye(n),
            row_shape: shape,
            col_shape: shape,
        }
    }

    pub fn zeros(row_shape: (usize, usize), col_shape: (usize, usize)) -> Self {
        Self {
            data: Array2::zeros((row_shape.0 * row_shape.1, col_shape.0 * col_shape.1)),
            row_shape,
            col_shape,
        }
    }

    /// `R^{ij}_{kl}`.
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.data[[
            flatten(i, j, self.row_shape.1),
            flatten(k, l, self.col_shape.1),
        ]]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, l: usize, v: f64) {
        let r = flatten(i, j, self.row_shape.1);
        let c = flatten(k, l, self.col_shape.1);
        self.data[[r, c]] = v;
    }

    /// `(R·M)^{ij} = Σ_kl R^{ij}_{kl} M^{kl}`.
    pub fn apply(&self, m: &Array2<f64>) -> Result<Array2<f64>> {
        if m.dim() != self.col_shape {
            return Err(Error::DimensionMismatch(format!(
                "operator expects {:?} input, got {:?}",
                self.col_shape,
                m.dim()
            )));
        }
        let v = self.data.dot(&vec_rm(m));
        Ok(unvec_rm(&v, self.row_shape.0, self.row_shape.1))
    }

    /// Operator composition `self ∘ other`.
    pub fn compose(&self, other: &Self) -> Result<Self> {
        if self.col_shape != other.row_shape {
            return Err(Error::DimensionMismatch(format!(
                "cannot compose {:?}→{:?} after {:?}→{:?}",
                self.col_shape, self.row_shape, other.col_shape, other.row_shape
            )));
        }
        Ok(Self {
            data: self.data.dot(&other.data),
            row_shape: self.row_shape,
            col_shape: other.col_shape,
        })
    }

    pub fn transpose(&self) -> Self {
        Self {
            data: self.data.t().to_owned(),
            row_shape: self.col_shape,
            col_shape: self.row_shape,
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.row_shape != other.row_shape || self.col_shape != other.col_shape {
            return Err(Error::DimensionMismatch("operator shapes differ".into()));
        }
        Ok(Self {
            data: &self.data + &other.data,
            row_shape: self.row_shape,
            col_shape: self.col_shape,
        })
    }

    pub fn inverse(&self) -> Result<Self> {
        Ok(Self {
            data: self.data.inv()?,
            row_shape: self.col_shape,
            col_shape: self.row_shape,
        })
    }

    /// `max |R - R'|` over the flattened matrix.
    pub fn asymmetry(&self) -> f64 {
        let t = self.data.t();
        self.data
            .iter()
            .zip(t.iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Eigenvalues of the symmetric part, ascending.
    pub fn symmetric_eigenvalues(&self) -> Result<Array1<f64>> {
        let sym = (&self.data + &self.data.t()) * 0.5;
        let (vals, _) = sym.eigh(UPLO::Lower)?;
        Ok(vals)
    }
}

/// Kronecker product: `R^{ij}_{kl} = a_{ik} b_{jl}`, mapping `(k, l)` matrices
/// of shape `(a.ncols(), b.ncols())` to `(a.nrows(), b.nrows())`.
///
/// Under the row-major convention, `vec(M X N') = (M ⊗ N) vec(X)`.
pub fn kronecker(a: &Array2<f64>, b: &Array2<f64>) -> DoublyIndexedMatrix {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut data = Array2::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for k in 0..ac {
            let aik = a[[i, k]];
            if aik == 0.0 {
                continue;
            }
            for j in 0..br {
                for l in 0..bc {
                    data[[flatten(i, j, br), flatten(k, l, bc)]] = aik * b[[j, l]];
                }
            }
        }
    }
    DoublyIndexedMatrix {
        data,
        row_shape: (ar, br),
        col_shape: (ac, bc),
    }
}
