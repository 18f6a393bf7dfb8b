//! Asymptotic distribution of the estimates and the rank test for the number
//! of sorting dimensions.
//!
//! `√n(Â - A)` is asymptotically `N(0, F⁻¹)` and independent of the variance
//! estimates `√n(Ŝ_X - S_X)`, `√n(Ŝ_Y - S_Y)`, whose joint covariance is
//! given by the fourth-moment blocks `K`. The delta method then gives the
//! covariance `V` of `Θ̂ = Ŝ_X^{1/2} Â Ŝ_Y^{1/2}`.
//!
//! All operators act on row-major vectorized matrices, so a Kronecker factor
//! written `S_Y^{1/2} ⊗ S_X^{1/2}` for column-major stacking appears here as
//! `S_X^{1/2} ⊗ S_Y^{1/2}`.

use ndarray::{s, Array1, Array2, Axis};
use ndarray_linalg::{Eigh, SVD, UPLO};
use serde::{Deserialize, Serialize};

use crate::doubly::{kronecker, vec_rm, DoublyIndexedMatrix};
use crate::error::{Error, Result};
use crate::marginal::Coupling;
use crate::model::AffinityModel;
use crate::saliency::signed_svd;
use crate::sample::MatchedSample;
use crate::special::chi2_sf;
use crate::welfare::{fisher_information_with, CenteringConfig};

/// Which distribution the fourth-moment blocks are computed under.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum FourthMoments {
    /// The observed couples.
    #[default]
    Empirical,
    /// The fitted equilibrium coupling.
    Model,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub moments: FourthMoments,
    pub centering: CenteringConfig,
    /// Eigenvalues of `F` below `singular_tol · max` are treated as zero.
    pub singular_tol: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            moments: FourthMoments::Empirical,
            centering: CenteringConfig::default(),
            singular_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticCovariance {
    pub fisher: DoublyIndexedMatrix,
    pub f_inv: DoublyIndexedMatrix,
    pub k_xx: DoublyIndexedMatrix,
    pub k_xy: DoublyIndexedMatrix,
    pub k_yy: DoublyIndexedMatrix,
    pub t_xy: DoublyIndexedMatrix,
    pub t_x: DoublyIndexedMatrix,
    pub t_y: DoublyIndexedMatrix,
    pub v_theta: DoublyIndexedMatrix,
    /// `Θ̂ = S_X^{1/2} B̂ S_Y^{1/2}` the covariance refers to.
    pub theta: Array2<f64>,
    pub s_x: Array1<f64>,
    pub s_y: Array1<f64>,
    pub n: usize,
}

impl AsymptoticCovariance {
    /// `√(diag F⁻¹ / n)` as a `dx × dy` matrix.
    pub fn b_standard_errors(&self) -> Array2<f64> {
        let (dx, dy) = self.f_inv.row_shape;
        Array2::from_shape_fn((dx, dy), |(i, j)| (self.f_inv.get(i, j, i, j).max(0.0) / self.n as f64).sqrt())
    }

    /// `√(diag V / n)` as a `dx × dy` matrix.
    pub fn theta_standard_errors(&self) -> Array2<f64> {
        let (dx, dy) = self.v_theta.row_shape;
        Array2::from_shape_fn((dx, dy), |(i, j)| (self.v_theta.get(i, j, i, j).max(0.0) / self.n as f64).sqrt())
    }
}

/// Inverse of a symmetric positive definite operator, or `SingularFisher`.
fn spd_inverse(m: &DoublyIndexedMatrix, tol: f64) -> Result<DoublyIndexedMatrix> {
    let sym = (&m.data + &m.data.t()) * 0.5;
    let (vals, vecs) = sym.eigh(UPLO::Lower)?;
    let max = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if !(vals[0] > tol * max) {
        return Err(Error::SingularFisher { min_eigenvalue: vals[0] });
    }
    let scaled = &vecs / &vals.view().insert_axis(Axis(0));
    Ok(DoublyIndexedMatrix {
        data: scaled.dot(&vecs.t()),
        row_shape: m.col_shape,
        col_shape: m.row_shape,
    })
}

/// `K` with `K^{kl}_{ij} = 1_{i=j,k=l} cov(U_i U_j, W_k W_l)` for centered
/// columns; `w` are per-observation weights summing to one.
fn fourth_block(u: &Array2<f64>, w_cols: &Array2<f64>, weights: &Array1<f64>) -> DoublyIndexedMatrix {
    let (du, dw) = (u.ncols(), w_cols.ncols());
    let mut k = DoublyIndexedMatrix::zeros((du, du), (dw, dw));
    let u2 = u.mapv(|v| v * v);
    let w2 = w_cols.mapv(|v| v * v);
    let mu = weights.dot(&u2);
    let mw = weights.dot(&w2);
    for i in 0..du {
        for l in 0..dw {
            let mut c = 0.0;
            for r in 0..weights.len() {
                c += weights[r] * (u2[[r, i]] - mu[i]) * (w2[[r, l]] - mw[l]);
            }
            k.set(i, i, l, l, c);
        }
    }
    k
}

/// Rows of the coupling's support flattened to one observation per cell.
fn coupling_rows(coupling: &Coupling) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    let (mx, my) = coupling.pi.dim();
    let sx = &coupling.row_marginal.support;
    let sy = &coupling.col_marginal.support;
    let mut x = Array2::zeros((mx * my, sx.ncols()));
    let mut y = Array2::zeros((mx * my, sy.ncols()));
    let mut w = Array1::zeros(mx * my);
    for a in 0..mx {
        for b in 0..my {
            let r = a * my + b;
            x.row_mut(r).assign(&sx.row(a));
            y.row_mut(r).assign(&sy.row(b));
            w[r] = coupling.pi[[a, b]];
        }
    }
    let mean_x = w.dot(&x);
    let mean_y = w.dot(&y);
    (x - &mean_x, y - &mean_y, w)
}

/// Derivative of `D A E` in `S` where `D = S^{1/2}`, diagonal `S`: the
/// operator maps `δS` (`d × d`) to `δ(S^{1/2})` via the Sylvester
/// equation `D δD + δD D = δS`.
fn sqrt_derivative(s: &Array1<f64>) -> DoublyIndexedMatrix {
    let d = s.len();
    let r = s.mapv(f64::sqrt);
    let mut op = DoublyIndexedMatrix::zeros((d, d), (d, d));
    for i in 0..d {
        for k in 0..d {
            op.set(i, k, i, k, 1.0 / (r[i] + r[k]));
        }
    }
    op
}

/// The delta-method operators `(T_XY, T_X, T_Y)` at `(A, S_X, S_Y)`.
pub fn delta_operators(a: &Array2<f64>, s_x: &Array1<f64>, s_y: &Array1<f64>) -> Result<(DoublyIndexedMatrix, DoublyIndexedMatrix, DoublyIndexedMatrix)> {
    let (dx, dy) = a.dim();
    if s_x.len() != dx || s_y.len() != dy {
        return Err(Error::DimensionMismatch("variances do not match the affinity matrix".into()));
    }
    for (k, v) in s_x.iter().chain(s_y.iter()).enumerate() {
        if !(*v > 0.0) {
            return Err(Error::NonPositiveVariance { index: k, value: *v });
        }
    }
    let rx = Array2::from_diag(&s_x.mapv(f64::sqrt));
    let ry = Array2::from_diag(&s_y.mapv(f64::sqrt));
    let t_xy = kronecker(&rx, &ry);
    // δΘ = δ(S_X^{1/2}) A S_Y^{1/2}
    let right = a.dot(&ry);
    let t_x = kronecker(&Array2::eye(dx), &right.t().to_owned()).compose(&sqrt_derivative(s_x))?;
    // δΘ = S_X^{1/2} A δ(S_Y^{1/2})
    let left = rx.dot(a);
    let t_y = kronecker(&left, &Array2::eye(dy)).compose(&sqrt_derivative(s_y))?;
    Ok((t_xy, t_x, t_y))
}

/// `V = T_XY F⁻¹ T_XY' + T_X K_XX T_X' + T_Y K_YY T_Y' + T_X K_XY T_Y' + T_Y K_XY' T_X'`.
pub fn assemble_v(
    f_inv: &DoublyIndexedMatrix,
    k_xx: &DoublyIndexedMatrix,
    k_xy: &DoublyIndexedMatrix,
    k_yy: &DoublyIndexedMatrix,
    t_xy: &DoublyIndexedMatrix,
    t_x: &DoublyIndexedMatrix,
    t_y: &DoublyIndexedMatrix,
) -> Array2<f64> {
    let q = |l: &DoublyIndexedMatrix, m: &DoublyIndexedMatrix, r: &DoublyIndexedMatrix| l.data.dot(&m.data).dot(&r.data.t());
    let cross = q(t_x, k_xy, t_y);
    let v = q(t_xy, f_inv, t_xy) + q(t_x, k_xx, t_x) + q(t_y, k_yy, t_y) + &cross + cross.t();
    (&v + &v.t()) * 0.5
}

/// Covariance of the estimates for a model fitted on `sample` with
/// equilibrium `coupling` (on the centered grid). `B = A/σ` is used.
pub fn asymptotic_covariance(sample: &MatchedSample, model: &AffinityModel, coupling: &Coupling) -> Result<AsymptoticCovariance> {
    asymptotic_covariance_with(sample, model, coupling, &InferenceConfig::default())
}

pub fn asymptotic_covariance_with(
    sample: &MatchedSample,
    model: &AffinityModel,
    coupling: &Coupling,
    cfg: &InferenceConfig,
) -> Result<AsymptoticCovariance> {
    let (dx, dy) = (sample.dx(), sample.dy());
    if model.dx() != dx || model.dy() != dy {
        return Err(Error::DimensionMismatch(format!(
            "{}×{} model for {dx}×{dy} data",
            model.dx(),
            model.dy()
        )));
    }
    if coupling.row_marginal.dim() != dx || coupling.col_marginal.dim() != dy {
        return Err(Error::DimensionMismatch("coupling support does not match the data".into()));
    }
    let b = model.b();
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("affinity must be finite".into()));
    }
    let fisher = fisher_information_with(coupling, &cfg.centering)?;
    let f_inv = spd_inverse(&fisher, cfg.singular_tol)?;

    let (x, y, w) = match cfg.moments {
        FourthMoments::Empirical => {
            let c = sample.centered();
            let n = sample.n();
            (c.x, c.y, Array1::from_elem(n, 1.0 / n as f64))
        }
        FourthMoments::Model => coupling_rows(coupling),
    };
    let k_xx = fourth_block(&x, &x, &w);
    let k_xy = fourth_block(&x, &y, &w);
    let k_yy = fourth_block(&y, &y, &w);

    let s_x = sample.variances_x();
    let s_y = sample.variances_y();
    let (t_xy, t_x, t_y) = delta_operators(&b, &s_x, &s_y)?;
    let v = assemble_v(&f_inv, &k_xx, &k_xy, &k_yy, &t_xy, &t_x, &t_y);
    let theta = &b * &s_x.mapv(f64::sqrt).insert_axis(Axis(1)) * &s_y.mapv(f64::sqrt).insert_axis(Axis(0));
    Ok(AsymptoticCovariance {
        fisher,
        f_inv,
        k_xx,
        k_xy,
        k_yy,
        t_xy,
        t_x,
        t_y,
        v_theta: DoublyIndexedMatrix {
            data: v,
            row_shape: (dx, dy),
            col_shape: (dx, dy),
        },
        theta,
        s_x,
        s_y,
        n: sample.n(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTestResult {
    pub p: usize,
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    /// `T̂_p`, `(dx-p) × (dy-p)`, vectorized row-major in `omega`.
    pub t_matrix: Array2<f64>,
    pub omega: Array2<f64>,
    /// `Ω̂_p` was rank deficient and a pseudo-inverse was used.
    pub degenerate: bool,
    pub omega_rank: usize,
}

/// Fresh row-major copy; LAPACK rejects the strides of some views (1×1
/// slices in particular).
fn contiguous(v: ndarray::ArrayView2<f64>) -> Array2<f64> {
    Array2::from_shape_vec(v.dim(), v.iter().copied().collect()).expect("same size")
}

/// `M^{1/2}` and `M^{-1/2}` of a symmetric positive definite matrix.
fn sym_sqrt(m: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    let sym = (m + &m.t()) * 0.5;
    let (vals, vecs) = sym.eigh(UPLO::Lower)?;
    let r = vals.mapv(|v| v.max(0.0).sqrt());
    let half = (&vecs * &r.view().insert_axis(Axis(0))).dot(&vecs.t());
    let inv = (&vecs / &r.view().insert_axis(Axis(0))).dot(&vecs.t());
    Ok((half, inv))
}

fn min_singular(m: &Array2<f64>) -> Result<(f64, usize)> {
    if m.is_empty() {
        return Ok((f64::INFINITY, 0));
    }
    let (_, sv, _) = m.svd(true, true)?;
    let max = sv.iter().fold(0.0f64, |a, v| a.max(*v));
    let rank = sv.iter().filter(|v| **v > 1e-10 * max.max(1.0)).count();
    Ok((sv.iter().fold(f64::INFINITY, |a, v| a.min(*v)), rank))
}

/// `A_⊥ = U_{·2} U₂₂⁻¹ (U₂₂U₂₂')^{1/2}` for the last `d - p` singular vectors
/// (columns of `u`).
fn orthogonal_complement(u: &Array2<f64>, p: usize, block: &'static str) -> Result<Array2<f64>> {
    let u2 = contiguous(u.slice(s![.., p..]));
    let u22 = contiguous(u.slice(s![p.., p..]));
    let (min_sv, rank) = min_singular(&u22)?;
    if !(min_sv >= 1e-10) {
        return Err(Error::SingularCornerBlock {
            block,
            rank,
            min_singular: min_sv,
        });
    }
    let (half, _) = sym_sqrt(&u22.dot(&u22.t()))?;
    let inv = ndarray_linalg::Inverse::inv(&u22)?;
    Ok(u2.dot(&inv).dot(&half))
}

/// Test of `H₀: rank Θ = p` against `rank Θ > p` from `Θ̂` and the
/// asymptotic covariance `V` of `√n(Θ̂ - Θ)`.
pub fn rank_test(theta: &Array2<f64>, v_theta: &DoublyIndexedMatrix, n: usize, p: usize) -> Result<RankTestResult> {
    let (dx, dy) = theta.dim();
    let d = dx.min(dy);
    if p >= d {
        return Err(Error::InvalidInput(format!("rank {p} cannot be tested for a {dx}×{dy} matrix")));
    }
    if v_theta.row_shape != (dx, dy) || v_theta.col_shape != (dx, dy) {
        return Err(Error::DimensionMismatch(format!(
            "covariance has shape {:?}×{:?} for a {dx}×{dy} matrix",
            v_theta.row_shape, v_theta.col_shape
        )));
    }
    if n == 0 {
        return Err(Error::InvalidInput("sample size must be positive".into()));
    }
    let (u, _, v) = signed_svd(theta)?;
    // columns are singular vectors
    let a_perp = orthogonal_complement(&contiguous(u.t()), p, "U22")?;
    let b_perp = orthogonal_complement(&contiguous(v.t()), p, "V22")?;
    let t_matrix = a_perp.t().dot(theta).dot(&b_perp);
    let l = kronecker(&contiguous(a_perp.t()), &contiguous(b_perp.t()));
    let omega = l.data.dot(&v_theta.data).dot(&l.data.t());
    let omega = (&omega + &omega.t()) * 0.5;

    let (vals, vecs) = omega.eigh(UPLO::Lower)?;
    let max = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let cut = 1e-10 * max;
    let rank = vals.iter().filter(|v| **v > cut).count();
    let t = vec_rm(&t_matrix);
    let proj = vecs.t().dot(&t);
    let mut quad = 0.0;
    for (c, lam) in proj.iter().zip(vals.iter()) {
        if *lam > cut {
            quad += c * c / lam;
        }
    }
    let statistic = (n as f64 * quad).max(0.0);
    let df = (dx - p) * (dy - p);
    Ok(RankTestResult {
        p,
        statistic,
        df,
        p_value: chi2_sf(statistic, df as f64),
        t_matrix,
        omega,
        degenerate: rank < df,
        omega_rank: rank,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SortingDimension {
    /// Smallest `p` not rejected, or `d` if every test rejects.
    pub dimension: usize,
    pub full_rank: bool,
    pub alpha: f64,
    pub tests: Vec<RankTestResult>,
}

/// Sequential rank tests `p = 1, 2, …` at level `alpha`.
pub fn sorting_dimension_from(theta: &Array2<f64>, v_theta: &DoublyIndexedMatrix, n: usize, alpha: f64) -> Result<SortingDimension> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha must be in (0,1), got {alpha}")));
    }
    let d = theta.nrows().min(theta.ncols());
    let mut tests = Vec::new();
    for p in 1..d {
        let r = rank_test(theta, v_theta, n, p)?;
        let reject = r.p_value < alpha;
        tests.push(r);
        if !reject {
            return Ok(SortingDimension {
                dimension: p,
                full_rank: false,
                alpha,
                tests,
            });
        }
    }
    Ok(SortingDimension {
        dimension: d,
        full_rank: true,
        alpha,
        tests,
    })
}

/// Number of sorting dimensions of a fitted model.
pub fn sorting_dimension(sample: &MatchedSample, model: &AffinityModel, coupling: &Coupling, alpha: f64) -> Result<SortingDimension> {
    let cov = asymptotic_covariance(sample, model, coupling)?;
    sorting_dimension_from(&cov.theta, &cov.v_theta, cov.n, alpha)
}

/// Seed of replicate `rep` derived from a master seed.
pub fn replicate_seed(seed: u64, rep: usize) -> u64 {
    use rand::{RngCore, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng.next_u64()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankCalibration {
    pub b_true: Array2<f64>,
    pub n: usize,
    pub p: usize,
    pub alpha: f64,
    pub df: usize,
    /// Statistic per replicate; `None` where the fit or test failed.
    pub statistics: Vec<Option<f64>>,
    pub rejection_rate: f64,
    pub mean_statistic: f64,
    pub failures: Vec<(usize, String)>,
}

/// Monte Carlo behavior of the rank test on Gaussian couples drawn under
/// `b_true`: every replicate simulates, fits, estimates `V` and tests
/// `H₀: rank = p` at level `alpha`.
pub fn rank_test_calibration(
    b_true: &Array2<f64>,
    n: usize,
    reps: usize,
    p: usize,
    alpha: f64,
    seed: u64,
    fit: &crate::estimator::FitConfig,
) -> Result<RankCalibration> {
    use rayon::prelude::*;
    if reps == 0 {
        return Err(Error::InvalidInput("need at least one replicate".into()));
    }
    let (dx, dy) = b_true.dim();
    let outcomes: Vec<Result<f64>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let spec = crate::simulate::GaussianQuadraticSpec {
                b_matrix: b_true.clone(),
                n,
                seed: replicate_seed(seed, rep),
            };
            let sample = crate::simulate::simulate_gaussian(&spec)?;
            let (model, report) = crate::estimator::fit_affinity(&sample, fit)?;
            let cov = asymptotic_covariance(&sample, &model, &report.coupling)?;
            Ok(rank_test(&cov.theta, &cov.v_theta, n, p)?.statistic)
        })
        .collect();
    let mut statistics = Vec::with_capacity(reps);
    let mut failures = Vec::new();
    for (rep, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(t) => statistics.push(Some(t)),
            Err(e) => {
                failures.push((rep, e.to_string()));
                statistics.push(None);
            }
        }
    }
    let ok: Vec<f64> = statistics.iter().flatten().copied().collect();
    let df = (dx - p) * (dy - p);
    let crit_rejects = ok.iter().filter(|t| chi2_sf(**t, df as f64) < alpha).count();
    let k = ok.len().max(1) as f64;
    Ok(RankCalibration {
        b_true: b_true.clone(),
        n,
        p,
        alpha,
        df,
        rejection_rate: crit_rejects as f64 / k,
        mean_statistic: ok.iter().sum::<f64>() / k,
        statistics,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{fit_affinity, FitConfig};
    use crate::marginal::SupportReduction;
    use crate::simulate::{simulate_gaussian, GaussianQuadraticSpec};
    use ndarray::array;
    use proptest::prelude::*;

    fn close(a: &Array2<f64>, b: &Array2<f64>, tol: f64) -> bool {
        a.iter().zip(b.iter()).all(|(u, v)| (u - v).abs() <= tol)
    }

    #[test]
    fn one_dimensional_delta_operators_at_identity() {
        let a = array![[0.7]];
        let (t_xy, t_x, t_y) = delta_operators(&a, &array![1.0], &array![1.0]).unwrap();
        assert_eq!(t_xy.data, array![[1.0]]);
        assert!((t_x.data[[0, 0]] - 0.35).abs() < 1e-15);
        assert!((t_y.data[[0, 0]] - 0.35).abs() < 1e-15);
    }

    #[test]
    fn delta_operators_match_finite_differences() {
        let a = array![[0.5, -1.0, 0.2], [0.3, 0.8, -0.4]];
        let s_x = array![2.0, 0.5];
        let s_y = array![1.5, 0.7, 3.0];
        let (t_xy, t_x, t_y) = delta_operators(&a, &s_x, &s_y).unwrap();
        let theta = |a: &Array2<f64>, s_x: &Array1<f64>, s_y: &Array1<f64>| {
            a * &s_x.mapv(f64::sqrt).insert_axis(Axis(1)) * &s_y.mapv(f64::sqrt).insert_axis(Axis(0))
        };
        let h = 1e-6;
        // δA
        let da = array![[0.1, 0.2, -0.3], [0.4, -0.5, 0.6]];
        let fd = (theta(&(&a + &(&da * h)), &s_x, &s_y) - theta(&(&a - &(&da * h)), &s_x, &s_y)) / (2.0 * h);
        assert!(close(&t_xy.apply(&da).unwrap(), &fd, 1e-8));
        // δS_X restricted to the diagonal
        let dsx = array![0.3, -0.2];
        let fd = (theta(&a, &(&s_x + &(&dsx * h)), &s_y) - theta(&a, &(&s_x - &(&dsx * h)), &s_y)) / (2.0 * h);
        assert!(close(&t_x.apply(&Array2::from_diag(&dsx)).unwrap(), &fd, 1e-8));
        let dsy = array![0.1, 0.5, -0.7];
        let fd = (theta(&a, &s_x, &(&s_y + &(&dsy * h))) - theta(&a, &s_x, &(&s_y - &(&dsy * h)))) / (2.0 * h);
        assert!(close(&t_y.apply(&Array2::from_diag(&dsy)).unwrap(), &fd, 1e-8));
    }

    #[test]
    fn full_sqrt_derivative_solves_sylvester() {
        // off-diagonal perturbations follow δS = D δD + δD D
        let s = array![2.0, 0.5, 1.3];
        let op = sqrt_derivative(&s);
        let ds = array![[0.2, 0.1, -0.3], [0.1, -0.4, 0.2], [-0.3, 0.2, 0.5]];
        let dd = op.apply(&ds).unwrap();
        let d = Array2::from_diag(&s.mapv(f64::sqrt));
        assert!(close(&(d.dot(&dd) + dd.dot(&d)), &ds, 1e-14));
    }

    #[test]
    fn exact_rank_gives_zero_statistic() {
        let u = array![[0.6], [0.8], [0.0]];
        let v = array![[1.0, 2.0, -2.0]] / 3.0;
        let theta = u.dot(&v) * 2.5;
        let id = DoublyIndexedMatrix::identity((3, 3));
        let r = rank_test(&theta, &id, 1000, 1).unwrap();
        assert!(r.statistic < 1e-20, "{}", r.statistic);
        assert!((r.p_value - 1.0).abs() < 1e-12);
        assert_eq!(r.df, 4);
        let dim = sorting_dimension_from(&theta, &id, 1000, 0.05).unwrap();
        assert_eq!(dim.dimension, 1);
        assert!(!dim.full_rank);
    }

    #[test]
    fn identity_covariance_statistic_is_tail_energy() {
        // with V = I and orthonormal complements Ω = I, so the statistic is
        // n times the squared trailing singular values
        let theta = array![[3.0, 0.0, 0.0], [0.0, 0.5, 0.0], [0.0, 0.0, 0.2]];
        let id = DoublyIndexedMatrix::identity((3, 3));
        let r = rank_test(&theta, &id, 100, 1).unwrap();
        assert!((r.statistic - 100.0 * (0.25 + 0.04)).abs() < 1e-9);
        assert!(close(&r.omega, &Array2::eye(4), 1e-12));
        let r2 = rank_test(&theta, &id, 100, 2).unwrap();
        assert_eq!(r2.df, 1);
        assert!((r2.statistic - 4.0).abs() < 1e-9);
        let dim = sorting_dimension_from(&theta, &id, 100, 0.05).unwrap();
        assert_eq!(dim.dimension, 3);
        assert!(dim.full_rank);
        assert_eq!(dim.tests.iter().map(|t| t.df).collect::<Vec<_>>(), vec![4, 1]);
    }

    #[test]
    fn singular_corner_block_is_reported() {
        // U₂₂ = 0 when the leading singular vector is e₂
        let theta = array![[0.0, 0.0], [0.0, 1.0]];
        let id = DoublyIndexedMatrix::identity((2, 2));
        assert!(matches!(
            rank_test(&theta, &id, 10, 1),
            Err(Error::SingularCornerBlock { .. })
        ));
    }

    #[test]
    fn rectangular_rank_test_df() {
        let theta = array![[2.0, 0.1, 0.0, 0.3], [0.2, 1.0, 0.1, 0.0]];
        let id = DoublyIndexedMatrix::identity((2, 4));
        let r = rank_test(&theta, &id, 50, 1).unwrap();
        assert_eq!(r.df, 3);
        assert_eq!(r.t_matrix.dim(), (1, 3));
        assert!(rank_test(&theta, &id, 50, 2).is_err());
    }

    #[test]
    fn degenerate_omega_uses_pseudo_inverse() {
        let theta = array![[3.0, 0.0], [0.0, 0.5]];
        let v = DoublyIndexedMatrix::zeros((2, 2), (2, 2));
        let r = rank_test(&theta, &v, 100, 1).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.omega_rank, 0);
        assert_eq!(r.statistic, 0.0);
    }

    fn random_spd(seed: u64, n: usize) -> Array2<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let m = Array2::from_shape_fn((n, n), |_| rng.gen_range(-1.0..1.0));
        m.dot(&m.t()) + Array2::<f64>::eye(n) * 0.1
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn statistic_invariant_to_singular_vector_signs(
            vals in proptest::collection::vec(-2.0f64..2.0, 9),
            seed in 0u64..1000,
            flip in 0usize..3,
        ) {
            let theta = Array2::from_shape_vec((3, 3), vals).unwrap();
            let v = DoublyIndexedMatrix { data: random_spd(seed, 9), row_shape: (3, 3), col_shape: (3, 3) };
            let base = match rank_test(&theta, &v, 500, 1) {
                Ok(r) => r,
                Err(_) => return Ok(()),
            };
            // any other valid SVD differs by paired sign flips; recompute
            // the statistic from explicitly flipped singular vectors
            let (u, lam, vv) = signed_svd(&theta).unwrap();
            let mut uf = u.t().to_owned();
            let mut vf = vv.t().to_owned();
            uf.column_mut(flip).mapv_inplace(|x| -x);
            vf.column_mut(flip).mapv_inplace(|x| -x);
            let rebuilt = uf.dot(&Array2::from_diag(&lam)).dot(&vf.t());
            prop_assert!(close(&rebuilt, &theta, 1e-10));
            let a = orthogonal_complement(&uf, 1, "U22").unwrap();
            let b = orthogonal_complement(&vf, 1, "V22").unwrap();
            let t = a.t().dot(&theta).dot(&b);
            let l = kronecker(&a.t().to_owned(), &b.t().to_owned());
            let omega = l.data.dot(&v.data).dot(&l.data.t());
            let stat = 500.0 * vec_rm(&t).dot(&spd_inverse(&DoublyIndexedMatrix { data: omega, row_shape: (2, 2), col_shape: (2, 2) }, 1e-14).unwrap().data.dot(&vec_rm(&t)));
            prop_assert!((stat - base.statistic).abs() <= 1e-8 * base.statistic.max(1.0));
            prop_assert!(base.statistic >= 0.0);
            prop_assert!(base.omega.iter().zip(base.omega.t().iter()).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    fn fitted(b: Array2<f64>, n: usize, seed: u64) -> (MatchedSample, AffinityModel, Coupling) {
        let s = simulate_gaussian(&GaussianQuadraticSpec { b_matrix: b, n, seed }).unwrap();
        let cfg = FitConfig {
            support: SupportReduction::None,
            ..FitConfig::default()
        };
        let (m, r) = fit_affinity(&s, &cfg).unwrap();
        (s, m, r.coupling)
    }

    #[test]
    fn covariance_structure_on_fitted_model() {
        let (s, m, c) = fitted(array![[0.8, 0.1], [0.0, 0.4]], 400, 3);
        let cov = asymptotic_covariance(&s, &m, &c).unwrap();
        let prod = cov.f_inv.data.dot(&cov.fisher.data);
        assert!(close(&prod, &Array2::eye(4), 1e-8));
        assert!(cov.f_inv.asymmetry() < 1e-10);
        assert!(cov.v_theta.asymmetry() < 1e-12);
        assert!(cov.v_theta.symmetric_eigenvalues().unwrap()[0] > -1e-8);
        // indicator structure: only (i,i),(k,k) entries
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        if i != j || k != l {
                            assert_eq!(cov.k_xy.get(i, j, k, l), 0.0);
                        }
                    }
                }
            }
        }
        let se = cov.b_standard_errors();
        assert!(se.iter().all(|v| *v > 0.0 && *v < 1.0));
        let model_based = asymptotic_covariance_with(
            &s,
            &m,
            &c,
            &InferenceConfig {
                moments: FourthMoments::Model,
                ..InferenceConfig::default()
            },
        )
        .unwrap();
        // K_XX only involves the x marginal, identical under both
        assert!(close(&model_based.k_xx.data, &cov.k_xx.data, 1e-10));
    }

    #[test]
    fn independence_covariance_is_inverse_covariance_product() {
        // at B = 0, F = Σ_X ⊗ Σ_Y, so F⁻¹ = Σ_X⁻¹ ⊗ Σ_Y⁻¹
        let (s, _, c) = fitted(array![[0.0, 0.0], [0.0, 0.0]], 300, 8);
        let m = AffinityModel::from_b(&Array2::zeros((2, 2)));
        let indep = Coupling::independent(c.row_marginal.clone(), c.col_marginal.clone());
        let cov = asymptotic_covariance(&s, &m, &indep).unwrap();
        let centered = s.centered();
        let sx = centered.x.t().dot(&centered.x) / 300.0;
        let sy = centered.y.t().dot(&centered.y) / 300.0;
        let expected = kronecker(&ndarray_linalg::Inverse::inv(&sx).unwrap(), &ndarray_linalg::Inverse::inv(&sy).unwrap());
        assert!(close(&cov.f_inv.data, &expected.data, 1e-8));
        let se = cov.b_standard_errors();
        for i in 0..2 {
            for j in 0..2 {
                assert!((se[[i, j]] - (expected.get(i, j, i, j) / 300.0).sqrt()).abs() < 1e-8);
            }
        }
        // at B = 0, Θ = 0 and T_X = T_Y = 0: V reduces to S^{1/2}F⁻¹S^{1/2}
        let direct = cov.t_xy.data.dot(&cov.f_inv.data).dot(&cov.t_xy.data.t());
        assert!(close(&cov.v_theta.data, &direct, 1e-12));
    }
}
