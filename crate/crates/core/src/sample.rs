//! Observed couples and the moment computations shared by every estimator.
//!
//! All second moments use the population (1/n) convention, so that the
//! cross-covariance, the diagonal variance matrices and the fourth-moment
//! blocks used for inference are mutually consistent.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `n` observed couples: row `k` of `x` is the man's attribute vector and row
/// `k` of `y` the woman's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedSample {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub attribute_names_x: Vec<String>,
    pub attribute_names_y: Vec<String>,
}

/// Per-column `(mean, std)` pairs removed by [`standardize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRecord {
    pub x: Vec<(f64, f64)>,
    pub y: Vec<(f64, f64)>,
}

impl MatchedSample {
    /// Builds a sample, checking shapes and finiteness. Missing names are
    /// filled with `x1, x2, ...` / `y1, y2, ...`.
    pub fn new(
        x: Array2<f64>,
        y: Array2<f64>,
        attribute_names_x: Option<Vec<String>>,
        attribute_names_y: Option<Vec<String>>,
    ) -> Result<Self> {
        let n = x.nrows();
        if y.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "x has {} rows but y has {}",
                n,
                y.nrows()
            )));
        }
        if n < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 couples, got {n}")));
        }
        if x.ncols() == 0 || y.ncols() == 0 {
            return Err(Error::InvalidInput("both sides need at least one attribute".into()));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("attribute values must be finite".into()));
        }
        let names_x = attribute_names_x
            .unwrap_or_else(|| (1..=x.ncols()).map(|i| format!("x{i}")).collect());
        let names_y = attribute_names_y
            .unwrap_or_else(|| (1..=y.ncols()).map(|j| format!("y{j}")).collect());
        if names_x.len() != x.ncols() || names_y.len() != y.ncols() {
            return Err(Error::DimensionMismatch(
                "attribute name lists must match the number of columns".into(),
            ));
        }
        Ok(Self {
            x,
            y,
            attribute_names_x: names_x,
            attribute_names_y: names_y,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dx(&self) -> usize {
        self.x.ncols()
    }

    pub fn dy(&self) -> usize {
        self.y.ncols()
    }

    /// Sample with the roles of men and women exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            x: self.y.clone(),
            y: self.x.clone(),
            attribute_names_x: self.attribute_names_y.clone(),
            attribute_names_y: self.attribute_names_x.clone(),
        }
    }

    /// Sub-sample made of the given couple indices (with repetition allowed).
    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            x: self.x.select(Axis(0), rows),
            y: self.y.select(Axis(0), rows),
            attribute_names_x: self.attribute_names_x.clone(),
            attribute_names_y: self.attribute_names_y.clone(),
        }
    }

    /// Population variances of the men's attributes (diagonal of `S_X`).
    pub fn variances_x(&self) -> Array1<f64> {
        column_variances(self.x.view())
    }

    /// Population variances of the women's attributes (diagonal of `S_Y`).
    pub fn variances_y(&self) -> Array1<f64> {
        column_variances(self.y.view())
    }

    /// Copy of the sample with column means removed on both sides.
    pub fn centered(&self) -> Self {
        let mut out = self.clone();
        let mx = self.x.mean_axis(Axis(0)).expect("n >= 2");
        let my = self.y.mean_axis(Axis(0)).expect("n >= 2");
        out.x -= &mx;
        out.y -= &my;
        out
    }
}

pub(crate) fn column_variances(m: ArrayView2<f64>) -> Array1<f64> {
    let n = m.nrows() as f64;
    let mean = m.mean_axis(Axis(0)).expect("non-empty");
    let mut var = Array1::zeros(m.ncols());
    for row in m.rows() {
        for (j, v) in row.iter().enumerate() {
            let d = v - mean[j];
            var[j] += d * d;
        }
    }
    var / n
}

fn standardize_side(m: &Array2<f64>, names: &[String]) -> Result<(Array2<f64>, Vec<(f64, f64)>)> {
    let mean = m.mean_axis(Axis(0)).expect("non-empty");
    let var = column_variances(m.view());
    let mut record = Vec::with_capacity(m.ncols());
    for j in 0..m.ncols() {
        let scale = mean[j].abs().max(1.0);
        // Constant columns leave only rounding noise in the variance.
        if !(var[j] > (1e-14 * scale).powi(2)) {
            return Err(Error::ZeroVarianceColumn(names[j].clone()));
        }
        record.push((mean[j], var[j].sqrt()));
    }
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - record[j].0) / record[j].1;
        }
    }
    Ok((out, record))
}

/// Centers every column and scales it to unit population variance (divisor `n`).
pub fn standardize(sample: &MatchedSample) -> Result<(MatchedSample, ScalingRecord)> {
    let (x, rx) = standardize_side(&sample.x, &sample.attribute_names_x)?;
    let (y, ry) = standardize_side(&sample.y, &sample.attribute_names_y)?;
    Ok((
        MatchedSample {
            x,
            y,
            attribute_names_x: sample.attribute_names_x.clone(),
            attribute_names_y: sample.attribute_names_y.clone(),
        },
        ScalingRecord { x: rx, y: ry },
    ))
}

impl ScalingRecord {
    /// Maps a standardized sample back to its original units.
    pub fn unstandardize(&self, sample: &MatchedSample) -> MatchedSample {
        let mut out = sample.clone();
        for mut row in out.x.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = *v * self.x[j].1 + self.x[j].0;
            }
        }
        for mut row in out.y.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = *v * self.y[j].1 + self.y[j].0;
            }
        }
        out
    }

    pub fn std_x(&self) -> Array1<f64> {
        self.x.iter().map(|r| r.1).collect()
    }

    pub fn std_y(&self) -> Array1<f64> {
        self.y.iter().map(|r| r.1).collect()
    }
}

/// `Σ_XY` with entry `(i, j) = (1/n) Σ_k x_ki y_kj`.
///
/// The sample is assumed centered; no means are removed here.
pub fn cross_covariance(sample: &MatchedSample) -> Array2<f64> {
    sample.x.t().dot(&sample.y) / sample.n() as f64
}
