//! Synthetic data: Gaussian couples with quadratic surplus, the continuous
//! logit acquaintance process and discrete populations with singles.

use std::fmt;
use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::saliency::signed_svd;
use crate::sample::MatchedSample;
use crate::singles::{Binning, PopulationWithSingles};

/// Correlation of a standard Gaussian pair under surplus `b·x·y` at `σ = 1`.
pub fn gaussian_t(b: f64) -> f64 {
    if b == 0.0 {
        return 0.0;
    }
    let h = 0.5 / b.abs();
    b.signum() / ((h * h + 1.0).sqrt() + h)
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Standard normal couples with `Φ(x,y) = xy` and noise scale `sigma`:
/// `y = t x + √(1-t²) ε`, `t = √(σ²/4+1) - σ/2`.
pub fn simulate_gaussian_1d(sigma: f64, n: usize, seed: u64) -> Result<MatchedSample> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidInput(format!("sigma must be finite and nonnegative, got {sigma}")));
    }
    if n == 0 {
        return Err(Error::InvalidInput("need at least one couple".into()));
    }
    let t = 1.0 / ((sigma * sigma / 4.0 + 1.0).sqrt() + sigma / 2.0);
    let s = (1.0 - t * t).max(0.0).sqrt();
    let mut rng = rng_for(seed, 0);
    let mut x = Array2::zeros((n, 1));
    let mut y = Array2::zeros((n, 1));
    for i in 0..n {
        let xi: f64 = StandardNormal.sample(&mut rng);
        let e: f64 = StandardNormal.sample(&mut rng);
        x[[i, 0]] = xi;
        y[[i, 0]] = t * xi + s * e;
    }
    MatchedSample::new(x, y, None, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianQuadraticSpec {
    /// True `B = A/σ`, `dx × dy`.
    pub b_matrix: Array2<f64>,
    pub n: usize,
    pub seed: u64,
}

/// Population cross-covariance `E[x yᵀ]` of standard Gaussian marginals
/// coupled under surplus `xᵀBy`: `Uᵀ diag(t(λ)) V` from the signed SVD.
pub fn gaussian_cross_covariance(b: &Array2<f64>) -> Result<Array2<f64>> {
    let (u, lambda, v) = signed_svd(b)?;
    let d = lambda.len();
    let t = lambda.mapv(gaussian_t);
    let ud = u.slice(ndarray::s![..d, ..]);
    let vd = v.slice(ndarray::s![..d, ..]);
    Ok(ud.t().dot(&(&vd * &t.view().insert_axis(Axis(1)))))
}

/// Draws `n` couples with `x ~ N(0,I)`, `y ~ N(0,I)` and the optimal
/// entropic coupling for `B`: in the singular bases of `B` the pairs are
/// independent univariate problems with correlation `t(λ_k)`.
pub fn simulate_gaussian(spec: &GaussianQuadraticSpec) -> Result<MatchedSample> {
    let (dx, dy) = spec.b_matrix.dim();
    if dx == 0 || dy == 0 {
        return Err(Error::DimensionMismatch("empty affinity matrix".into()));
    }
    if spec.n == 0 {
        return Err(Error::InvalidInput("need at least one couple".into()));
    }
    if spec.b_matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("affinity matrix must be finite".into()));
    }
    let (_, lambda, v) = signed_svd(&spec.b_matrix)?;
    let d = lambda.len();
    let c = gaussian_cross_covariance(&spec.b_matrix)?;
    let vd = v.slice(ndarray::s![..d, ..]).to_owned();
    let shrink = lambda.mapv(|l| {
        let t = gaussian_t(l);
        (1.0 - t * t).max(0.0).sqrt()
    });
    // noise map V'diag(√(1-t²))V + (I - V'V)
    let mut noise = Array2::<f64>::eye(dy) - vd.t().dot(&vd);
    noise += &vd.t().dot(&(&vd * &shrink.view().insert_axis(Axis(1))));

    let mut rng = rng_for(spec.seed, 0);
    let x = Array2::from_shape_simple_fn((spec.n, dx), || StandardNormal.sample(&mut rng));
    let eta: Array2<f64> = Array2::from_shape_simple_fn((spec.n, dy), || StandardNormal.sample(&mut rng));
    let y = x.dot(&c) + eta.dot(&noise.t());
    MatchedSample::new(x, y, None, None)
}

pub type UtilityFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// One consumer choosing among acquaintances `(y_k, ε_k)` drawn from a
/// Poisson process of intensity `dy × e^{-ε}dε` on `[lo, hi] × ℝ`.
#[derive(Clone, Serialize, Deserialize)]
pub struct PoissonLogitSpec {
    /// Systematic utility `U(y)` for the fixed `x`.
    #[serde(skip, default = "zero_utility")]
    pub utility: UtilityFn,
    pub domain: (f64, f64),
    /// Known upper bound of `U` on the domain. When set, the truncation is
    /// extended until the draw provably equals the untruncated argmax.
    pub utility_upper_bound: Option<f64>,
    /// Expected number of points above the initial truncation level,
    /// i.e. `ε_min = log(|domain| / expected_points)`.
    pub expected_points: f64,
    pub seed: u64,
    pub max_retries: usize,
}

fn zero_utility() -> UtilityFn {
    Arc::new(|_| 0.0)
}

impl fmt::Debug for PoissonLogitSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PoissonLogitSpec")
            .field("domain", &self.domain)
            .field("utility_upper_bound", &self.utility_upper_bound)
            .field("expected_points", &self.expected_points)
            .field("seed", &self.seed)
            .finish_non_exhaustive()
    }
}

impl PoissonLogitSpec {
    pub fn new(utility: UtilityFn, domain: (f64, f64), seed: u64) -> Self {
        Self {
            utility,
            domain,
            utility_upper_bound: None,
            expected_points: 200.0,
            seed,
            max_retries: 64,
        }
    }

    pub fn with_upper_bound(mut self, bound: f64) -> Self {
        self.utility_upper_bound = Some(bound);
        self
    }

    pub fn epsilon_min(&self) -> f64 {
        ((self.domain.1 - self.domain.0) / self.expected_points).ln()
    }

    /// `log ∫ exp U` by composite Simpson on `2k` panels.
    pub fn log_partition(&self, k: usize) -> f64 {
        let (lo, hi) = self.domain;
        let m = 2 * k.max(1);
        let h = (hi - lo) / m as f64;
        let vals: Vec<f64> = (0..=m).map(|i| (self.utility)(lo + h * i as f64)).collect();
        let top = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = vals
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let w = if i == 0 || i == m {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                w * (v - top).exp()
            })
            .sum();
        top + (s * h / 3.0).ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonLogitDraws {
    /// Chosen `y` per trial.
    pub choices: Vec<f64>,
    /// `max_k U(y_k) + ε_k` per trial.
    pub max_values: Vec<f64>,
    /// Rounds where the truncation was lowered to certify the argmax.
    pub extensions: usize,
    /// Rounds where the truncation left no acquaintance at all.
    pub retries: usize,
}

impl PoissonLogitDraws {
    /// Counts of choices in `bins` equal-width bins of `domain`.
    pub fn histogram(&self, domain: (f64, f64), bins: usize) -> Vec<usize> {
        let mut h = vec![0; bins];
        let w = (domain.1 - domain.0) / bins as f64;
        for y in &self.choices {
            let b = (((y - domain.0) / w) as usize).min(bins - 1);
            h[b] += 1;
        }
        h
    }
}

struct TrialOutcome {
    choice: f64,
    max_value: f64,
    extensions: usize,
    retries: usize,
}

fn one_trial(spec: &PoissonLogitSpec, trial: u64) -> Result<TrialOutcome> {
    let (lo, hi) = spec.domain;
    let width = hi - lo;
    let mut rng = rng_for(spec.seed, trial);
    let mut best = (f64::NEG_INFINITY, f64::NAN);
    let mut upper = f64::INFINITY;
    let mut lower = spec.epsilon_min();
    let (mut extensions, mut retries) = (0, 0);
    loop {
        // marks in (lower, upper]: mass width (e^{-lower} - e^{-upper})
        let e_up = (-upper).exp();
        let mass = width * ((-lower).exp() - e_up);
        let count = if mass > 0.0 {
            Poisson::new(mass).map_err(|e| Error::InvalidInput(e.to_string()))?.sample(&mut rng) as u64
        } else {
            0
        };
        for _ in 0..count {
            let y = lo + width * rng.gen::<f64>();
            let r: f64 = rng.gen();
            let eps = -(e_up + r * ((-lower).exp() - e_up)).ln();
            let v = (spec.utility)(y) + eps;
            if v > best.0 {
                best = (v, y);
            }
        }
        let certified = match spec.utility_upper_bound {
            Some(bound) => best.0 >= bound + lower,
            None => best.0.is_finite(),
        };
        if certified {
            return Ok(TrialOutcome {
                choice: best.1,
                max_value: best.0,
                extensions,
                retries,
            });
        }
        if best.0.is_finite() {
            extensions += 1;
        } else {
            retries += 1;
        }
        if extensions + retries > spec.max_retries {
            return Err(Error::NoAcquaintance { retries });
        }
        upper = lower;
        lower -= 1.0;
    }
}

/// Runs `trials` independent choices; trial `k` uses RNG stream `k`.
pub fn simulate_poisson_logit_choice(spec: &PoissonLogitSpec, trials: usize) -> Result<PoissonLogitDraws> {
    let (lo, hi) = spec.domain;
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidInput(format!("domain ({lo}, {hi}) must be bounded and nonempty")));
    }
    if !(spec.expected_points > 0.0) {
        return Err(Error::InvalidInput("expected_points must be positive".into()));
    }
    if trials == 0 {
        return Err(Error::InvalidInput("need at least one trial".into()));
    }
    let outcomes: Vec<Result<TrialOutcome>> = (0..trials as u64).into_par_iter().map(|k| one_trial(spec, k)).collect();
    let mut draws = PoissonLogitDraws {
        choices: Vec::with_capacity(trials),
        max_values: Vec::with_capacity(trials),
        extensions: 0,
        retries: 0,
    };
    for o in outcomes {
        let o = o?;
        draws.choices.push(o.choice);
        draws.max_values.push(o.max_value);
        draws.extensions += o.extensions;
        draws.retries += o.retries;
    }
    Ok(draws)
}

/// Gumbel CDF with the given location and unit scale.
pub fn gumbel_cdf(z: f64, location: f64) -> f64 {
    (-(-(z - location)).exp()).exp()
}

/// Kolmogorov–Smirnov distance between a sample and a continuous CDF.
pub fn ks_distance(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, z)| {
            let f = cdf(*z);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChooSiowEquilibrium {
    /// Expected couples per type pair.
    pub matched: Array2<f64>,
    pub single_x: Array1<f64>,
    pub single_y: Array1<f64>,
    pub iterations: usize,
}

/// Discrete logit equilibrium with singlehood: `μ_xy = √(μ_x0 μ_0y) e^{Φ_xy/σ}`,
/// `Σ_y μ_xy + μ_x0 = n_x`, `Σ_x μ_xy + μ_0y = m_y`.
pub fn choo_siow_equilibrium(phi: &Array2<f64>, sigma: f64, men: &Array1<f64>, women: &Array1<f64>) -> Result<ChooSiowEquilibrium> {
    let (nx, ny) = phi.dim();
    if men.len() != nx || women.len() != ny {
        return Err(Error::DimensionMismatch(format!(
            "{}×{} surplus table for {} and {} types",
            nx,
            ny,
            men.len(),
            women.len()
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidInput(format!("sigma must be positive, got {sigma}")));
    }
    if men.iter().chain(women.iter()).any(|m| !(*m > 0.0) || !m.is_finite()) {
        return Err(Error::InvalidInput("type masses must be positive".into()));
    }
    let k = phi.mapv(|v| (v / sigma).exp());
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalOverflow("surplus too large for sigma".into()));
    }
    let solve = |s: f64, n: f64| 0.5 * ((s * s + 4.0 * n).sqrt() - s);
    let mut a;
    let mut b = women.mapv(f64::sqrt);
    let tol = 1e-12;
    let max_iter = 100_000;
    for it in 1..=max_iter {
        let sa = k.dot(&b);
        a = Array1::from_shape_fn(nx, |i| solve(sa[i], men[i]));
        let sb = k.t().dot(&a);
        b = Array1::from_shape_fn(ny, |j| solve(sb[j], women[j]));
        let row = k.dot(&b);
        let err = (0..nx)
            .map(|i| ((a[i] * a[i] + a[i] * row[i]) / men[i] - 1.0).abs())
            .fold(0.0, f64::max);
        if err < tol {
            let matched = &k * &a.view().insert_axis(Axis(1)) * b.view().insert_axis(Axis(0));
            return Ok(ChooSiowEquilibrium {
                matched,
                single_x: a.mapv(|v| v * v),
                single_y: b.mapv(|v| v * v),
                iterations: it,
            });
        }
    }
    Err(Error::NotConverged {
        final_error: f64::NAN,
        iterations: max_iter,
    })
}

/// Constant `c` such that the equilibrium under `Φ + c` leaves a share
/// `target` of men single. Found by bisection; the share falls in `c`.
pub fn offset_for_singles_share(phi: &Array2<f64>, sigma: f64, men: &Array1<f64>, women: &Array1<f64>, target: f64) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::InvalidInput(format!("singles share must be in (0,1), got {target}")));
    }
    let total = men.sum();
    let share = |c: f64| -> Result<f64> {
        let eq = choo_siow_equilibrium(&phi.mapv(|v| v + c), sigma, men, women)?;
        Ok(eq.single_x.sum() / total)
    };
    let (mut lo, mut hi) = (-1.0, 1.0);
    while share(lo)? < target {
        lo *= 2.0;
    }
    while share(hi)? > target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if share(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 * (1.0 + mid.abs()) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteChooSiowSpec {
    /// Surplus from matching `Φ_xy`, singles normalized to zero.
    pub phi: Array2<f64>,
    pub sigma: f64,
    /// Expected number of men of each type.
    pub men: Array1<f64>,
    pub women: Array1<f64>,
    /// Attribute vector of each type, one row per type.
    pub x_types: Array2<f64>,
    pub y_types: Array2<f64>,
}

/// Population drawn from the equilibrium: every couple cell and every
/// singles cell gets an independent Poisson count with the equilibrium mean.
pub fn simulate_discrete_choo_siow(spec: &DiscreteChooSiowSpec, seed: u64) -> Result<(PopulationWithSingles, ChooSiowEquilibrium)> {
    let eq = choo_siow_equilibrium(&spec.phi, spec.sigma, &spec.men, &spec.women)?;
    let (nx, ny) = spec.phi.dim();
    if spec.x_types.nrows() != nx || spec.y_types.nrows() != ny {
        return Err(Error::DimensionMismatch("one attribute row per type is required".into()));
    }
    let mut rng = rng_for(seed, 0);
    let mut draw = |mean: f64| -> Result<usize> {
        if mean <= 0.0 {
            return Ok(0);
        }
        Ok(Poisson::new(mean).map_err(|e| Error::InvalidInput(e.to_string()))?.sample(&mut rng) as usize)
    };
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for i in 0..nx {
        for j in 0..ny {
            for _ in 0..draw(eq.matched[[i, j]])? {
                xs.push(i);
                ys.push(j);
            }
        }
    }
    let mut sx = Vec::new();
    for i in 0..nx {
        sx.extend(std::iter::repeat_n(i, draw(eq.single_x[i])?));
    }
    let mut sy = Vec::new();
    for j in 0..ny {
        sy.extend(std::iter::repeat_n(j, draw(eq.single_y[j])?));
    }
    let rows = |types: &Array2<f64>, idx: &[usize]| -> Array2<f64> {
        let mut out = Array2::zeros((idx.len(), types.ncols()));
        for (r, t) in idx.iter().enumerate() {
            out.row_mut(r).assign(&types.row(*t));
        }
        out
    };
    let matched = MatchedSample::new(rows(&spec.x_types, &xs), rows(&spec.y_types, &ys), None, None)?;
    let pop = PopulationWithSingles::new(matched, rows(&spec.x_types, &sx), rows(&spec.y_types, &sy), Binning::Discrete)?;
    Ok((pop, eq))
}
