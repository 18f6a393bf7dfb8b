//! Discrete attribute distributions, couplings between them and the dual
//! potentials that price their marginal constraints.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default sup-norm tolerance for the marginal constraints of a [`Coupling`].
pub const DEFAULT_MARGINAL_TOL: f64 = 1e-9;

/// A probability vector on a finite set of attribute vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMarginal {
    pub weights: Array1<f64>,
    /// `m × d`, one support point per row.
    pub support: Array2<f64>,
}

/// How an empirical marginal is turned into a support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SupportReduction {
    /// One support point per observation, weight `1/n`.
    None,
    /// Identical rows are merged; exact.
    MergeDuplicates,
    /// Duplicates merged, then, if more than `max_points` distinct rows
    /// remain, the points are grouped into `max_points` cells of (nearly)
    /// equal count by recursive median splits; each cell is represented by
    /// its centroid. Preserves the mean exactly.
    Cells { max_points: usize },
}

impl DiscreteMarginal {
    pub fn new(weights: Array1<f64>, support: Array2<f64>) -> Result<Self> {
        if weights.len() != support.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} support points",
                weights.len(),
                support.nrows()
            )));
        }
        if weights.is_empty() {
            return Err(Error::InvalidMarginal("empty support".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidMarginal("weights must be finite and nonnegative".into()));
        }
        let total = weights.sum();
        if (total - 1.0).abs() >= 1e-12 {
            return Err(Error::InvalidMarginal(format!("weights sum to {total}")));
        }
        if support.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMarginal("support values must be finite".into()));
        }
        Ok(Self { weights, support })
    }

    /// Normalizes nonnegative masses into weights.
    pub fn from_masses(masses: Array1<f64>, support: Array2<f64>) -> Result<Self> {
        let total = masses.sum();
        if !(total > 0.0) {
            return Err(Error::InvalidMarginal("total mass must be positive".into()));
        }
        Self::new(masses / total, support)
    }

    pub fn uniform(support: Array2<f64>) -> Result<Self> {
        let m = support.nrows();
        Self::new(Array1::from_elem(m, 1.0 / m as f64), support)
    }

    /// Empirical distribution of the rows of `points`.
    pub fn empirical(points: ArrayView2<f64>, reduction: SupportReduction) -> Result<Self> {
        match reduction {
            SupportReduction::None => Self::uniform(points.to_owned()),
            SupportReduction::MergeDuplicates => merge_duplicates(points),
            SupportReduction::Cells { max_points } => {
                let merged = merge_duplicates(points)?;
                if merged.len() <= max_points.max(1) {
                    Ok(merged)
                } else {
                    Ok(median_cells(&merged, max_points.max(1)))
                }
            }
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.support.ncols()
    }

    pub fn mean(&self) -> Array1<f64> {
        self.support.t().dot(&self.weights)
    }
}

fn merge_duplicates(points: ArrayView2<f64>) -> Result<DiscreteMarginal> {
    let n = points.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    let row_cmp = |a: &usize, b: &usize| {
        points
            .row(*a)
            .iter()
            .zip(points.row(*b).iter())
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    };
    order.sort_by(row_cmp);
    let mut rows: Vec<usize> = Vec::new();
    let mut counts: Vec<f64> = Vec::new();
    for &k in &order {
        match rows.last() {
            Some(&last) if row_cmp(&last, &k).is_eq() => *counts.last_mut().unwrap() += 1.0,
            _ => {
                rows.push(k);
                counts.push(1.0);
            }
        }
    }
    let support = points.select(Axis(0), &rows);
    DiscreteMarginal::from_masses(Array1::from(counts), support)
}

fn median_cells(merged: &DiscreteMarginal, cells: usize) -> DiscreteMarginal {
    let d = merged.dim();
    let mut groups: Vec<(Vec<usize>, usize)> = vec![((0..merged.len()).collect(), cells)];
    let mut done: Vec<Vec<usize>> = Vec::with_capacity(cells);
    while let Some((idx, target)) = groups.pop() {
        if target <= 1 || idx.len() <= 1 {
            done.push(idx);
            continue;
        }
        // split along the coordinate of largest spread
        let axis = (0..d)
            .max_by(|&a, &b| {
                let spread = |c: usize| {
                    let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |acc, &i| {
                        let v = merged.support[[i, c]];
                        (acc.0.min(v), acc.1.max(v))
                    });
                    hi - lo
                };
                spread(a).total_cmp(&spread(b))
            })
            .unwrap_or(0);
        let mut idx = idx;
        idx.sort_by(|&a, &b| merged.support[[a, axis]].total_cmp(&merged.support[[b, axis]]));
        let left_target = target / 2;
        let cut = (idx.len() * left_target / target).clamp(1, idx.len() - 1);
        let right = idx.split_off(cut);
        groups.push((right, target - left_target));
        groups.push((idx, left_target));
    }
    let mut weights = Array1::zeros(done.len());
    let mut support = Array2::zeros((done.len(), d));
    for (c, members) in done.iter().enumerate() {
        let w: f64 = members.iter().map(|&i| merged.weights[i]).sum();
        weights[c] = w;
        for &i in members {
            let wi = merged.weights[i] / w;
            for k in 0..d {
                support[[c, k]] += wi * merged.support[[i, k]];
            }
        }
    }
    let total = weights.sum();
    DiscreteMarginal {
        weights: weights / total,
        support,
    }
}

/// Joint distribution on the product of two supports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub pi: Array2<f64>,
    pub row_marginal: DiscreteMarginal,
    pub col_marginal: DiscreteMarginal,
}

impl Coupling {
    /// Wraps a joint table, enforcing the marginal constraints within `tol`.
    pub fn new(
        pi: Array2<f64>,
        row_marginal: DiscreteMarginal,
        col_marginal: DiscreteMarginal,
        tol: f64,
    ) -> Result<Self> {
        let c = Self {
            pi,
            row_marginal,
            col_marginal,
        };
        if c.pi.dim() != (c.row_marginal.len(), c.col_marginal.len()) {
            return Err(Error::DimensionMismatch(format!(
                "coupling is {:?} but marginals have {} and {} points",
                c.pi.dim(),
                c.row_marginal.len(),
                c.col_marginal.len()
            )));
        }
        if c.pi.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidMarginal("coupling entries must be nonnegative".into()));
        }
        let err = c.marginal_error();
        if err >= tol {
            return Err(Error::InvalidMarginal(format!(
                "coupling violates its marginals by {err:.3e}"
            )));
        }
        Ok(c)
    }

    /// Product coupling `p ⊗ q`.
    pub fn independent(row_marginal: DiscreteMarginal, col_marginal: DiscreteMarginal) -> Self {
        let p = row_marginal.weights.view().insert_axis(Axis(1));
        let q = col_marginal.weights.view().insert_axis(Axis(0));
        let pi = &p * &q;
        Self {
            pi,
            row_marginal,
            col_marginal,
        }
    }

    /// Sup-norm violation of both marginal constraints.
    pub fn marginal_error(&self) -> f64 {
        let rows = self.pi.sum_axis(Axis(1));
        let cols = self.pi.sum_axis(Axis(0));
        let e_row = (&rows - &self.row_marginal.weights)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let e_col = (&cols - &self.col_marginal.weights)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        e_row.max(e_col)
    }

    /// `E_π[X Y']`.
    pub fn cross_moment(&self) -> Array2<f64> {
        self.row_marginal
            .support
            .t()
            .dot(&self.pi.dot(&self.col_marginal.support))
    }

    /// Conditional means `E_π[Y | X = x_r]`, one row per x support point.
    /// Rows with zero mass are zero.
    pub fn conditional_mean_y(&self) -> Array2<f64> {
        let mut m = self.pi.dot(&self.col_marginal.support);
        for (mut row, p) in m.rows_mut().into_iter().zip(self.row_marginal.weights.iter()) {
            if *p > 0.0 {
                row /= *p;
            } else {
                row.fill(0.0);
            }
        }
        m
    }

    /// `Σ_ij π_ij log π_ij` with `0 log 0 = 0`.
    pub fn neg_entropy(&self) -> f64 {
        self.pi
            .iter()
            .filter(|v| **v > 0.0)
            .map(|v| v * v.ln())
            .sum()
    }

    /// Coupling with the two sides exchanged.
    pub fn transposed(&self) -> Self {
        Self {
            pi: self.pi.t().to_owned(),
            row_marginal: self.col_marginal.clone(),
            col_marginal: self.row_marginal.clone(),
        }
    }
}

/// Dual potentials `(a, b)` with `π = exp((Φ - a - b)/σ)`.
///
/// The additive gauge is fixed by `Σ_i p_i a_i = 0`. Support points with zero
/// mass carry `a = +∞` (resp. `b = +∞`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Potentials {
    pub a: Array1<f64>,
    pub b: Array1<f64>,
}

impl Potentials {
    /// Moves the additive constant so that the `p`-weighted mean of `a` is 0.
    pub fn normalize(&mut self, p: &Array1<f64>) {
        let c: f64 = self
            .a
            .iter()
            .zip(p.iter())
            .filter(|(_, w)| **w > 0.0)
            .map(|(a, w)| a * w)
            .sum();
        self.a.mapv_inplace(|v| v - c);
        self.b.mapv_inplace(|v| v + c);
    }

    /// Applies the gauge transformation `a + c`, `b - c`.
    pub fn shifted(&self, c: f64) -> Self {
        Self {
            a: self.a.mapv(|v| v + c),
            b: self.b.mapv(|v| v - c),
        }
    }
}
