//! Saliency analysis: SVD of the variance-rescaled affinity matrix.
//!
//! `Θ = S_X^{1/2} A S_Y^{1/2} = U'ΛV` with `U`, `V` orthogonal and `Λ`
//! rectangular diagonal with nonincreasing entries. The indices of mutual
//! attractiveness are `x̃ = U S_X^{-1/2} x` and `ỹ = V S_Y^{-1/2} y`, so that
//! `x'Ay = Σ_i λ_i x̃_i ỹ_i`.

use ndarray::{s, Array1, Array2, Axis};
use ndarray_linalg::SVD;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::AffinityModel;
use crate::sample::MatchedSample;

/// Singular values closer than this (relative to the largest, or to 1) are
/// treated as tied.
const TIE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyResult {
    pub theta: Array2<f64>,
    /// `d_x × d_x`; row `i` is the `i`-th left singular vector.
    pub u: Array2<f64>,
    /// `d_y × d_y`; row `j` is the `j`-th right singular vector.
    pub v: Array2<f64>,
    /// Nonincreasing, length `min(d_x, d_y)`.
    pub lambda: Array1<f64>,
    pub loadings_x: Array2<f64>,
    pub loadings_y: Array2<f64>,
    pub shares: Array1<f64>,
    /// Set when two singular values coincide, in which case the matching
    /// singular vectors are only defined up to a rotation of their subspace.
    pub subspace_non_unique: bool,
    pub sigma: f64,
    pub s_x: Array1<f64>,
    pub s_y: Array1<f64>,
}

fn check_variances(s: &Array1<f64>, offset: usize) -> Result<()> {
    for (k, &v) in s.iter().enumerate() {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::NonPositiveVariance {
                index: offset + k,
                value: v,
            });
        }
    }
    Ok(())
}

/// Index of the largest-magnitude entry, lowest index on ties.
fn pivot(v: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (k, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = k;
        }
    }
    best
}

/// Full SVD `m = U'ΛV` with the crate's sign convention: the largest entry of
/// every row of `U` (and of the unpaired rows of `V`) is positive.
pub fn signed_svd(m: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>, Array2<f64>)> {
    let (dx, dy) = m.dim();
    let (p, sv, qt) = m.svd(true, true)?;
    let mut u = p.expect("requested").reversed_axes();
    let mut v = qt.expect("requested");
    let d = dx.min(dy);
    for k in 0..dx {
        let piv = pivot(u.row(k));
        if u[[k, piv]] < 0.0 {
            u.row_mut(k).mapv_inplace(|x| -x);
            if k < d {
                v.row_mut(k).mapv_inplace(|x| -x);
            }
        }
    }
    for k in d..dy {
        let piv = pivot(v.row(k));
        if v[[k, piv]] < 0.0 {
            v.row_mut(k).mapv_inplace(|x| -x);
        }
    }
    Ok((u, sv, v))
}

/// Saliency analysis of `model` for attribute variances `s_x`, `s_y`.
pub fn saliency(model: &AffinityModel, s_x: &Array1<f64>, s_y: &Array1<f64>) -> Result<SaliencyResult> {
    if s_x.len() != model.dx() || s_y.len() != model.dy() {
        return Err(Error::DimensionMismatch(format!(
            "variances of length {} and {} for a {}×{} affinity matrix",
            s_x.len(),
            s_y.len(),
            model.dx(),
            model.dy()
        )));
    }
    check_variances(s_x, 0)?;
    check_variances(s_y, s_x.len())?;
    let rx = s_x.mapv(f64::sqrt);
    let ry = s_y.mapv(f64::sqrt);
    let theta = &model.a_matrix * &rx.view().insert_axis(Axis(1)) * ry.view().insert_axis(Axis(0));
    let (u, lambda, v) = signed_svd(&theta)?;

    let loadings_x = &u / &rx.view().insert_axis(Axis(0));
    let loadings_y = &v / &ry.view().insert_axis(Axis(0));
    let total: f64 = lambda.sum();
    let shares = if total > 0.0 {
        &lambda / total
    } else {
        Array1::zeros(lambda.len())
    };
    let scale = lambda.first().copied().unwrap_or(0.0).max(1.0);
    let repeated = lambda.windows(2).into_iter().any(|w| (w[0] - w[1]).abs() <= TIE_TOL * scale);
    // unpaired zero singular directions on the larger side are also free
    let padded_zero = model.dx() != model.dy() && lambda.iter().any(|l| l.abs() <= TIE_TOL * scale);

    Ok(SaliencyResult {
        theta,
        u,
        v,
        lambda,
        loadings_x,
        loadings_y,
        shares,
        subspace_non_unique: repeated || padded_zero,
        sigma: model.sigma,
        s_x: s_x.clone(),
        s_y: s_y.clone(),
    })
}

impl SaliencyResult {
    pub fn d(&self) -> usize {
        self.lambda.len()
    }

    /// `Σ_{i<k} λ_i / Σ λ`.
    pub fn explained_share(&self, k: usize) -> f64 {
        self.shares.iter().take(k).sum()
    }

    /// `Θ_k`, the rank-`k` truncation of `Θ`.
    pub fn theta_rank(&self, k: usize) -> Array2<f64> {
        let uk = self.u.slice(s![..k, ..]);
        let vk = self.v.slice(s![..k, ..]);
        let lk = self.lambda.slice(s![..k]);
        let scaled = &uk.t() * &lk.insert_axis(Axis(0));
        scaled.dot(&vk)
    }
}

/// Per-couple indices `(x̃, ỹ)`, one row per couple.
pub fn project_indices(sample: &MatchedSample, result: &SaliencyResult) -> Result<(Array2<f64>, Array2<f64>)> {
    if sample.dx() != result.loadings_x.ncols() || sample.dy() != result.loadings_y.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "sample has {}+{} attributes, saliency result expects {}+{}",
            sample.dx(),
            sample.dy(),
            result.loadings_x.ncols(),
            result.loadings_y.ncols()
        )));
    }
    Ok((
        sample.x.dot(&result.loadings_x.t()),
        sample.y.dot(&result.loadings_y.t()),
    ))
}

/// Rank-`k` affinity model in the original attribute scale.
pub fn truncate(result: &SaliencyResult, k: usize) -> Result<AffinityModel> {
    if k == 0 || k > result.d() {
        return Err(Error::InvalidInput(format!(
            "truncation rank must be in 1..={}, got {k}",
            result.d()
        )));
    }
    let rx = result.s_x.mapv(f64::sqrt);
    let ry = result.s_y.mapv(f64::sqrt);
    let a = result.theta_rank(k) / rx.view().insert_axis(Axis(1)) / ry.view().insert_axis(Axis(0));
    if result.sigma.is_infinite() {
        return Ok(AffinityModel {
            a_matrix: a,
            sigma: f64::INFINITY,
            normalized: false,
        });
    }
    AffinityModel::new(a, result.sigma)
}
