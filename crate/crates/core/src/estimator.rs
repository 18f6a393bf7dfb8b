//! Moment-matching estimator of the affinity matrix.
//!
//! `B̂ = argmin_B W₁(B) - ⟨B, Σ_XY⟩`. The objective is smooth and strictly
//! convex with gradient `E_{π^B}[XY'] - Σ_XY` and Hessian `F`, so a damped
//! Newton method is used, falling back to gradient steps when `F` is unusable.

use log::{debug, warn};
use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, Inverse, UPLO};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::doubly::{unvec_rm, vec_rm};
use crate::error::{Error, Result};
use crate::marginal::{Coupling, DiscreteMarginal, Potentials, SupportReduction};
use crate::model::AffinityModel;
use crate::sample::{cross_covariance, standardize, MatchedSample};
use crate::saliency::saliency;
use crate::schrodinger::IpfpConfig;
use crate::welfare::{evaluate_welfare_with, fisher_information_with, CenteringConfig, CenteringMethod, WelfareEvaluation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub ipfp: IpfpConfig,
    /// Sup-norm tolerance on `E_{π^B}[XY'] - Σ_XY`.
    pub moment_tol: f64,
    pub max_iter: usize,
    /// How each side's empirical distribution becomes a support grid.
    pub support: SupportReduction,
    /// Centering tolerance for the Hessians used in Newton steps. These only
    /// steer the iteration, so they need not be exact.
    pub newton_centering_tol: f64,
    pub start: StartingPoint,
}

/// Initial `B` of the Newton iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum StartingPoint {
    /// `Σ_XY`, exact to first order around independence.
    CrossCovariance,
    /// `-[Σ⁻¹]_XY` of the joint covariance, exact for Gaussian data; falls
    /// back to `Σ_XY` if the joint covariance is singular.
    #[default]
    Gaussian,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            ipfp: IpfpConfig::default(),
            moment_tol: 1e-6,
            max_iter: 100,
            support: SupportReduction::Cells { max_points: 2500 },
            newton_centering_tol: 1e-7,
            start: StartingPoint::Gaussian,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub b_hat: Array2<f64>,
    pub objective_trace: Vec<f64>,
    pub moment_gap: f64,
    pub iterations: usize,
    /// Steps taken along the negative gradient instead of the Newton direction.
    pub gradient_steps: usize,
    pub ipfp_iterations: usize,
    /// `Σ_XY` is exactly zero: `B = 0` (independence) is returned.
    pub degenerate: bool,
    /// Target cross-moment of the centered data.
    pub sigma_xy: Array2<f64>,
    /// Equilibrium at `B̂` on the centered support grid.
    pub coupling: Coupling,
    pub potentials: Potentials,
}

fn inner(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a * b).sum()
}

fn sup(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Support grids for the centered sample.
pub fn empirical_marginals(sample: &MatchedSample, reduction: SupportReduction) -> Result<(DiscreteMarginal, DiscreteMarginal)> {
    Ok((
        DiscreteMarginal::empirical(sample.x.view(), reduction)?,
        DiscreteMarginal::empirical(sample.y.view(), reduction)?,
    ))
}

/// Newton direction `-F⁻¹ g`, or `None` if `F` is not safely positive definite.
fn newton_direction(ev: &WelfareEvaluation, g: &Array2<f64>, cfg: &FitConfig) -> Option<Array2<f64>> {
    let centering = CenteringConfig {
        tol: cfg.newton_centering_tol,
        max_iter: 1_000,
        method: CenteringMethod::ConjugateGradient,
    };
    let f = fisher_information_with(&ev.coupling, &centering).ok()?;
    let sym = (&f.data + &f.data.t()) * 0.5;
    let (vals, vecs) = sym.eigh(UPLO::Lower).ok()?;
    let max = vals.iter().fold(0.0f64, |m, v| m.max(*v));
    if !(vals[0] > 1e-12 * max) {
        debug!("Fisher matrix near singular (min eigenvalue {:.3e})", vals[0]);
        return None;
    }
    let gv = vec_rm(g);
    let coef = vecs.t().dot(&gv) / &vals;
    let step = -vecs.dot(&coef);
    Some(unvec_rm(&step, g.nrows(), g.ncols()))
}

/// `-[Σ⁻¹]_XY` from the joint covariance of centered data: the exact answer
/// when both sides are Gaussian, and a good start otherwise.
fn gaussian_start(centered: &MatchedSample) -> Option<Array2<f64>> {
    let n = centered.n() as f64;
    let dx = centered.dx();
    let joint = ndarray::concatenate(ndarray::Axis(1), &[centered.x.view(), centered.y.view()]).ok()?;
    let cov = joint.t().dot(&joint) / n;
    let prec = cov.inv().ok()?;
    let b = prec.slice(ndarray::s![..dx, dx..]).mapv(|v| -v);
    b.iter().all(|v| v.is_finite()).then_some(b)
}

/// Fits `B = A/σ` on a sample; the data are centered internally.
pub fn fit_affinity(sample: &MatchedSample, cfg: &FitConfig) -> Result<(AffinityModel, FitReport)> {
    if !(cfg.moment_tol > 0.0) || cfg.max_iter == 0 {
        return Err(Error::InvalidInput("fit needs moment_tol > 0 and max_iter >= 1".into()));
    }
    let (n, dx, dy) = (sample.n(), sample.dx(), sample.dy());
    if n <= dx * dy {
        warn!("only {n} couples for {} affinity parameters", dx * dy);
    }
    let centered = sample.centered();
    let sigma_xy = cross_covariance(&centered);
    let (p, q) = empirical_marginals(&centered, cfg.support)?;

    if sigma_xy.iter().all(|v| *v == 0.0) {
        let coupling = Coupling::independent(p.clone(), q.clone());
        let ev = evaluate_welfare_with(&sigma_xy, &p, &q, &cfg.ipfp, None)?;
        let moment_gap = sup(&ev.gradient);
        return Ok((
            AffinityModel::from_b(&sigma_xy),
            FitReport {
                b_hat: sigma_xy.clone(),
                objective_trace: vec![ev.value],
                moment_gap,
                iterations: 0,
                gradient_steps: 0,
                ipfp_iterations: ev.report.iterations,
                degenerate: true,
                sigma_xy,
                coupling,
                potentials: ev.potentials,
            },
        ));
    }

    let objective = |ev: &WelfareEvaluation, b: &Array2<f64>| ev.value - inner(b, &sigma_xy);
    let guess = match cfg.start {
        StartingPoint::Gaussian => gaussian_start(&centered),
        StartingPoint::CrossCovariance => None,
    };
    let (mut b, mut ev) = match guess.map(|b0| {
        let ev0 = evaluate_welfare_with(&b0, &p, &q, &cfg.ipfp, None);
        (b0, ev0)
    }) {
        Some((b0, Ok(ev0))) => (b0, ev0),
        _ => {
            let b0 = sigma_xy.clone();
            let ev0 = evaluate_welfare_with(&b0, &p, &q, &cfg.ipfp, None)?;
            (b0, ev0)
        }
    };
    let mut ipfp_iterations = ev.report.iterations;
    let mut f = objective(&ev, &b);
    let mut trace = vec![f];
    let mut gradient_steps = 0usize;
    let mut iterations = 0usize;

    loop {
        let g = &ev.gradient - &sigma_xy;
        let gap = sup(&g);
        debug!("fit iteration {iterations}: objective {f:.12e}, moment gap {gap:.3e}");
        if gap < cfg.moment_tol {
            let model = AffinityModel::from_b(&b);
            return Ok((
                model,
                FitReport {
                    b_hat: b,
                    objective_trace: trace,
                    moment_gap: gap,
                    iterations,
                    gradient_steps,
                    ipfp_iterations,
                    degenerate: false,
                    sigma_xy,
                    coupling: ev.coupling,
                    potentials: ev.potentials,
                },
            ));
        }
        if iterations >= cfg.max_iter {
            return Err(Error::NotConverged {
                final_error: gap,
                iterations,
            });
        }
        iterations += 1;

        let mut accepted = None;
        let newton = newton_direction(&ev, &g, cfg);
        let candidates = match newton {
            Some(d) => vec![(d, false), (-&g, true)],
            None => vec![(-&g, true)],
        };
        'dirs: for (dir, is_gradient) in candidates {
            let mut slope = inner(&g, &dir);
            let dir = if slope >= 0.0 {
                slope = -inner(&g, &g);
                -&g
            } else {
                dir
            };
            let mut t = 1.0;
            for _ in 0..50 {
                let cand = &b + &(&dir * t);
                match evaluate_welfare_with(&cand, &p, &q, &cfg.ipfp, Some(&ev.potentials)) {
                    Ok(ev_c) => {
                        ipfp_iterations += ev_c.report.iterations;
                        let f_c = objective(&ev_c, &cand);
                        if f_c <= f + 1e-4 * t * slope + 1e-12 * (1.0 + f.abs()) {
                            accepted = Some((cand, ev_c, f_c, is_gradient));
                            break 'dirs;
                        }
                    }
                    Err(Error::NotConverged { .. }) | Err(Error::NumericalOverflow(_)) => {}
                    Err(e) => return Err(e),
                }
                t *= 0.5;
            }
        }
        match accepted {
            Some((cand, ev_c, f_c, is_gradient)) => {
                if is_gradient {
                    gradient_steps += 1;
                }
                b = cand;
                ev = ev_c;
                f = f_c;
                trace.push(f);
            }
            None => {
                return Err(Error::NotConverged {
                    final_error: gap,
                    iterations,
                });
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub reps: usize,
    pub seed: u64,
    /// One entry per replicate, in replicate order; `None` for failures.
    pub b_hats: Vec<Option<Array2<f64>>>,
    pub shares: Vec<Option<Array1<f64>>>,
    /// Per-entry standard deviation of `B̂` over successful replicates.
    pub b_std: Array2<f64>,
    pub shares_std: Array1<f64>,
    pub failures: Vec<(usize, String)>,
}

/// Resampling indices for replicate `rep`; each replicate has its own
/// ChaCha stream derived from the master seed.
pub fn bootstrap_indices(n: usize, seed: u64, rep: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

fn column_std<'a>(rows: impl Iterator<Item = &'a Array1<f64>>, len: usize) -> Array1<f64> {
    let rows: Vec<&Array1<f64>> = rows.collect();
    let k = rows.len();
    if k <= 1 {
        return Array1::zeros(len);
    }
    let mean = rows.iter().fold(Array1::<f64>::zeros(len), |acc, r| acc + *r) / k as f64;
    let ss = rows
        .iter()
        .fold(Array1::<f64>::zeros(len), |acc, r| acc + (*r - &mean).mapv(|v| v * v));
    (ss / (k - 1) as f64).mapv(f64::sqrt)
}

/// Nonparametric bootstrap over couples. With `restandardize`, every
/// replicate is standardized before fitting, so `B̂` is in standard units.
pub fn bootstrap_fit(
    sample: &MatchedSample,
    reps: usize,
    seed: u64,
    cfg: &FitConfig,
    restandardize: bool,
) -> Result<BootstrapSummary> {
    if reps == 0 {
        return Err(Error::InvalidInput("bootstrap needs reps >= 1".into()));
    }
    let (dx, dy) = (sample.dx(), sample.dy());
    let d = dx.min(dy);
    let outcomes: Vec<Result<(Array2<f64>, Array1<f64>)>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let idx = bootstrap_indices(sample.n(), seed, rep);
            let mut resample = sample.select(&idx);
            if restandardize {
                resample = standardize(&resample)?.0;
            }
            let (model, report) = fit_affinity(&resample, cfg)?;
            let shares = if report.degenerate {
                Array1::zeros(d)
            } else {
                saliency(&model, &resample.variances_x(), &resample.variances_y())?.shares
            };
            Ok((report.b_hat, shares))
        })
        .collect();

    let mut b_hats = Vec::with_capacity(reps);
    let mut shares = Vec::with_capacity(reps);
    let mut failures = Vec::new();
    for (rep, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok((b, s)) => {
                b_hats.push(Some(b));
                shares.push(Some(s));
            }
            Err(e) => {
                warn!("bootstrap replicate {rep} failed: {e}");
                failures.push((rep, e.to_string()));
                b_hats.push(None);
                shares.push(None);
            }
        }
    }
    let flat: Vec<Array1<f64>> = b_hats.iter().flatten().map(vec_rm).collect();
    let b_std = unvec_rm(&column_std(flat.iter(), dx * dy), dx, dy);
    let shares_std = column_std(shares.iter().flatten(), d);
    Ok(BootstrapSummary {
        reps,
        seed,
        b_hats,
        shares,
        b_std,
        shares_std,
        failures,
    })
}

/// `E_{π^B}[XY']` at an arbitrary `B` on the sample's centered grid.
pub fn predicted_cross_moment(sample: &MatchedSample, b: &Array2<f64>, cfg: &FitConfig) -> Result<Array2<f64>> {
    let centered = sample.centered();
    let (p, q) = empirical_marginals(&centered, cfg.support)?;
    Ok(evaluate_welfare_with(b, &p, &q, &cfg.ipfp, None)?.gradient)
}
