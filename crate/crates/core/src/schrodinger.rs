//! Entropy-regularized matching equilibrium (the Schrödinger problem).
//!
//! Given a joint utility table `Φ`, a heterogeneity scale `σ` and marginals
//! `p`, `q`, the equilibrium coupling is
//!
//! ```text
//! π(x, y) = ã(x) b̃(y) K(x, y),   K = exp(Φ/σ),   ã = exp(-a/σ),   b̃ = exp(-b/σ)
//! ```
//!
//! with the scalings fixed by the two marginal constraints. The solver
//! alternates the two rescalings (IPFP / Sinkhorn). In log-domain mode the
//! scalings are periodically absorbed into the log-potentials and the kernel
//! is rebuilt, so that neither the kernel nor the scalings ever overflow.

use ndarray::{Array1, Array2, ArrayView1, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marginal::{Coupling, DiscreteMarginal, Potentials};
use crate::model::AffinityModel;

/// Scalings outside `[1/BOUND, BOUND]` are folded into the log-potentials.
const ABSORB_BOUND: f64 = 1e50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IpfpConfig {
    /// Sup-norm tolerance on both marginal constraints.
    pub tol: f64,
    pub max_iter: usize,
    pub log_domain: bool,
}

impl Default for IpfpConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 10_000,
            log_domain: true,
        }
    }
}

impl IpfpConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidInput(
                "IPFP needs tol > 0 and max_iter >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// The Gibbs kernel, stored in log domain as `Φ/σ`.
#[derive(Debug, Clone)]
pub struct Kernel {
    pub log_k: Array2<f64>,
    pub sigma: f64,
}

impl Kernel {
    pub fn new(phi: &Array2<f64>, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidInput(format!("sigma must be positive and finite, got {sigma}")));
        }
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("joint utility must be finite".into()));
        }
        Ok(Self {
            log_k: phi / sigma,
            sigma,
        })
    }

    /// Kernel of the quadratic utility `Φ(x, y) = x'By` at `σ = 1`.
    pub fn quadratic(b: &Array2<f64>, p: &DiscreteMarginal, q: &DiscreteMarginal) -> Result<Self> {
        check_quadratic_dims(b, p, q)?;
        Ok(Self {
            log_k: p.support.dot(b).dot(&q.support.t()),
            sigma: 1.0,
        })
    }
}

pub(crate) fn check_quadratic_dims(b: &Array2<f64>, p: &DiscreteMarginal, q: &DiscreteMarginal) -> Result<()> {
    if b.nrows() != p.dim() || b.ncols() != q.dim() {
        return Err(Error::DimensionMismatch(format!(
            "affinity matrix is {:?} but attributes have dimensions {} and {}",
            b.dim(),
            p.dim(),
            q.dim()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iterations: usize,
    /// Sup-norm marginal violation of the returned coupling, both sides.
    pub final_error: f64,
    /// Number of times the scalings were folded into the log-potentials.
    pub absorptions: usize,
}

#[derive(Debug, Clone)]
pub struct IpfpSolution {
    pub coupling: Coupling,
    pub potentials: Potentials,
    pub report: IterationReport,
}

/// Solves the Schrödinger problem for the utility table `phi`.
pub fn solve_ipfp(
    phi: &Array2<f64>,
    sigma: f64,
    p: &DiscreteMarginal,
    q: &DiscreteMarginal,
    cfg: &IpfpConfig,
) -> Result<IpfpSolution> {
    let kernel = Kernel::new(phi, sigma)?;
    solve_kernel(&kernel, p, q, cfg, None)
}

/// Same as [`solve_ipfp`], started from previously computed potentials.
pub fn solve_ipfp_warm(
    phi: &Array2<f64>,
    sigma: f64,
    p: &DiscreteMarginal,
    q: &DiscreteMarginal,
    cfg: &IpfpConfig,
    init: Option<&Potentials>,
) -> Result<IpfpSolution> {
    let kernel = Kernel::new(phi, sigma)?;
    solve_kernel(&kernel, p, q, cfg, init)
}

fn log_sum_exp(it: impl Iterator<Item = f64>) -> f64 {
    let vals: Vec<f64> = it.collect();
    let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + vals.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Exact log-domain row update: `la_i = ln p_i - ln Σ_j exp(logK_ij + lb_j)`.
fn log_row_update(log_k: &Array2<f64>, lb: &Array1<f64>, p: &Array1<f64>) -> Array1<f64> {
    let mut la = Array1::zeros(p.len());
    Zip::from(&mut la)
        .and(log_k.rows())
        .and(p)
        .for_each(|out, row, &pi| {
            *out = if pi > 0.0 {
                pi.ln() - log_sum_exp(row.iter().zip(lb.iter()).map(|(k, l)| k + l))
            } else {
                f64::NEG_INFINITY
            };
        });
    la
}

/// Exact log-domain column update.
fn log_col_update(log_k: &Array2<f64>, la: &Array1<f64>, q: &Array1<f64>) -> Array1<f64> {
    let m = log_k.ncols();
    let mut colmax = Array1::from_elem(m, f64::NEG_INFINITY);
    for (row, &l) in log_k.rows().into_iter().zip(la.iter()) {
        if l == f64::NEG_INFINITY {
            continue;
        }
        Zip::from(&mut colmax).and(&row).for_each(|c, &k| *c = c.max(k + l));
    }
    let mut acc = Array1::<f64>::zeros(m);
    for (row, &l) in log_k.rows().into_iter().zip(la.iter()) {
        if l == f64::NEG_INFINITY {
            continue;
        }
        Zip::from(&mut acc)
            .and(&row)
            .and(&colmax)
            .for_each(|s, &k, &c| *s += (k + l - c).exp());
    }
    let mut lb = Array1::zeros(m);
    Zip::from(&mut lb)
        .and(&acc)
        .and(&colmax)
        .and(q)
        .for_each(|out, &s, &c, &qj| {
            *out = if qj > 0.0 { qj.ln() - (c + s.ln()) } else { f64::NEG_INFINITY };
        });
    lb
}

fn build_kernel(log_k: &Array2<f64>, la: &Array1<f64>, lb: &Array1<f64>, out: &mut Array2<f64>) {
    Zip::from(out.rows_mut())
        .and(log_k.rows())
        .and(la)
        .for_each(|mut o, row, &a| {
            if a == f64::NEG_INFINITY {
                o.fill(0.0);
                return;
            }
            Zip::from(&mut o).and(&row).and(lb).for_each(|o, &k, &b| {
                *o = if b == f64::NEG_INFINITY { 0.0 } else { (k + a + b).exp() };
            });
        });
}

fn scaling_ok(s: ArrayView1<f64>, w: &Array1<f64>) -> bool {
    s.iter().zip(w.iter()).all(|(&v, &wi)| {
        if wi > 0.0 {
            v.is_finite() && v < ABSORB_BOUND && v > 1.0 / ABSORB_BOUND
        } else {
            true
        }
    })
}

fn divide_masses(w: &Array1<f64>, sums: &Array1<f64>) -> Array1<f64> {
    Zip::from(w)
        .and(sums)
        .map_collect(|&wi, &s| if wi > 0.0 { wi / s } else { 0.0 })
}

/// Sup-norm relative violation `|u_i (Kv)_i / p_i - 1|`, which is also the
/// relative change the next row update would make to `ã`.
fn relative_error(scale: &Array1<f64>, sums: &Array1<f64>, w: &Array1<f64>) -> f64 {
    Zip::from(scale).and(sums).and(w).fold(0.0f64, |m, &s, &t, &wi| {
        if wi > 0.0 {
            m.max((s * t / wi - 1.0).abs())
        } else {
            m
        }
    })
}

/// Core IPFP loop on a prepared kernel.
pub fn solve_kernel(
    kernel: &Kernel,
    p: &DiscreteMarginal,
    q: &DiscreteMarginal,
    cfg: &IpfpConfig,
    init: Option<&Potentials>,
) -> Result<IpfpSolution> {
    cfg.validate()?;
    let log_k = &kernel.log_k;
    let sigma = kernel.sigma;
    if log_k.dim() != (p.len(), q.len()) {
        return Err(Error::DimensionMismatch(format!(
            "utility table is {:?} but marginals have {} and {} points",
            log_k.dim(),
            p.len(),
            q.len()
        )));
    }
    let pw = &p.weights;
    let qw = &q.weights;

    let mut k = Array2::<f64>::zeros(log_k.raw_dim());
    let mut absorptions = 0usize;

    // Log-potentials currently folded into `k`.
    let (mut la, mut lb);
    let mut warm_kernel = false;
    let warm = init.filter(|pot| pot.a.len() == p.len() && pot.b.len() == q.len());
    if let Some(pot) = warm {
        la = Zip::from(&pot.a).and(pw).map_collect(|&a, &w| if w > 0.0 { -a / sigma } else { f64::NEG_INFINITY });
        lb = Zip::from(&pot.b).and(qw).map_collect(|&b, &w| if w > 0.0 { -b / sigma } else { f64::NEG_INFINITY });
        if la.iter().chain(lb.iter()).any(|v| v.is_nan() || *v == f64::INFINITY) {
            la = Array1::zeros(p.len());
            lb = log_col_update(log_k, &la, qw);
        } else if cfg.log_domain {
            // close warm starts need no exact update: use the kernel as is
            // unless its row sums are out of range
            build_kernel(log_k, &la, &lb, &mut k);
            let rows = k.dot(&lb.mapv(|l| if l == f64::NEG_INFINITY { 0.0 } else { 1.0 }));
            warm_kernel = scaling_ok(divide_masses(pw, &rows).view(), pw);
        }
    } else {
        // ã ≡ 1, then the first b̃ update.
        la = Array1::zeros(p.len());
        lb = log_col_update(log_k, &la, qw);
    }

    if cfg.log_domain {
        if !warm_kernel {
            // The first row update is done exactly so the rebuilt kernel has
            // rows summing to p and cannot overflow.
            la = log_row_update(log_k, &lb, pw);
            build_kernel(log_k, &la, &lb, &mut k);
        }
    } else {
        build_kernel(log_k, &Array1::zeros(p.len()), &Array1::zeros(q.len()), &mut k);
        if k.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalOverflow("kernel exp(Φ/σ)".into()));
        }
    }

    let (mut u, mut v) = if cfg.log_domain {
        (Array1::ones(p.len()), Array1::ones(q.len()))
    } else {
        // Plain scalings carry the starting point; nothing is folded into k.
        let uv = (la.mapv(f64::exp), lb.mapv(f64::exp));
        la = Array1::zeros(p.len());
        lb = Array1::zeros(q.len());
        uv
    };

    let mut iterations = 0usize;
    let mut row_err = f64::INFINITY;
    while iterations < cfg.max_iter {
        let kv = k.dot(&v);
        row_err = relative_error(&u, &kv, pw);
        if row_err < cfg.tol && iterations > 0 {
            break;
        }
        iterations += 1;
        u = divide_masses(pw, &kv);
        if !scaling_ok(u.view(), pw) {
            if !cfg.log_domain {
                return Err(Error::NumericalOverflow("row scaling".into()));
            }
            absorptions += 1;
            lb = &lb + &v.mapv(f64::ln);
            la = log_row_update(log_k, &lb, pw);
            build_kernel(log_k, &la, &lb, &mut k);
            u.fill(1.0);
            v.fill(1.0);
        }
        let ktu = k.t().dot(&u);
        v = divide_masses(qw, &ktu);
        if !scaling_ok(v.view(), qw) {
            if !cfg.log_domain {
                return Err(Error::NumericalOverflow("column scaling".into()));
            }
            absorptions += 1;
            la = &la + &u.mapv(f64::ln);
            lb = log_col_update(log_k, &la, qw);
            build_kernel(log_k, &la, &lb, &mut k);
            u.fill(1.0);
            v.fill(1.0);
        }
    }

    // π = u_i K_ij v_j, reusing the kernel buffer.
    Zip::from(k.rows_mut()).and(&u).for_each(|mut row, &ui| {
        Zip::from(&mut row).and(&v).for_each(|e, &vj| *e *= ui * vj);
    });
    let la_total = Zip::from(&la).and(&u).map_collect(|&l, &s| if s > 0.0 { l + s.ln() } else { f64::NEG_INFINITY });
    let lb_total = Zip::from(&lb).and(&v).map_collect(|&l, &s| if s > 0.0 { l + s.ln() } else { f64::NEG_INFINITY });
    let mut potentials = Potentials {
        a: la_total.mapv(|l| -sigma * l),
        b: lb_total.mapv(|l| -sigma * l),
    };
    potentials.normalize(pw);

    let coupling = Coupling {
        pi: k,
        row_marginal: p.clone(),
        col_marginal: q.clone(),
    };
    let final_error = coupling.marginal_error();
    if !final_error.is_finite() {
        return Err(Error::NumericalOverflow("coupling".into()));
    }
    if !(row_err < cfg.tol) || final_error >= cfg.tol {
        return Err(Error::NotConverged {
            final_error,
            iterations,
        });
    }
    Ok(IpfpSolution {
        coupling,
        potentials,
        report: IterationReport {
            iterations,
            final_error,
            absorptions,
        },
    })
}

/// One exact IPFP sweep (`b̃` from `ã`, then `ã` from `b̃`) in log domain.
pub fn ipfp_sweep(
    phi: &Array2<f64>,
    sigma: f64,
    p: &DiscreteMarginal,
    q: &DiscreteMarginal,
    potentials: &Potentials,
) -> Result<Potentials> {
    let kernel = Kernel::new(phi, sigma)?;
    let la = potentials.a.mapv(|a| -a / sigma);
    let lb = log_col_update(&kernel.log_k, &la, &q.weights);
    let la = log_row_update(&kernel.log_k, &lb, &p.weights);
    let mut out = Potentials {
        a: la.mapv(|l| -sigma * l),
        b: lb.mapv(|l| -sigma * l),
    };
    out.normalize(&p.weights);
    Ok(out)
}

/// Utility table `Φ_ij = x_i' A y_j` on the supports of the two marginals.
pub fn utility_table(a: &Array2<f64>, p: &DiscreteMarginal, q: &DiscreteMarginal) -> Result<Array2<f64>> {
    check_quadratic_dims(a, p, q)?;
    Ok(p.support.dot(a).dot(&q.support.t()))
}

/// Solves the equilibrium of a quadratic model on the given marginals.
pub fn solve_model(
    model: &AffinityModel,
    p: &DiscreteMarginal,
    q: &DiscreteMarginal,
    cfg: &IpfpConfig,
) -> Result<IpfpSolution> {
    let phi = utility_table(&model.a_matrix, p, q)?;
    if model.sigma.is_infinite() {
        let coupling = Coupling::independent(p.clone(), q.clone());
        let mut potentials = Potentials {
            a: p.weights.mapv(|w| if w > 0.0 { 0.0 } else { f64::INFINITY }),
            b: q.weights.mapv(|w| if w > 0.0 { 0.0 } else { f64::INFINITY }),
        };
        potentials.normalize(&p.weights);
        let final_error = coupling.marginal_error();
        return Ok(IpfpSolution {
            coupling,
            potentials,
            report: IterationReport {
                iterations: 0,
                final_error,
                absorptions: 0,
            },
        });
    }
    solve_ipfp(&phi, model.sigma, p, q, cfg)
}

fn find_row(support: &Array2<f64>, point: ArrayView1<f64>) -> Option<usize> {
    support
        .rows()
        .into_iter()
        .position(|r| r.len() == point.len() && r.iter().zip(point.iter()).all(|(a, b)| a == b))
}

/// `log π(x, y) = (x'Ay - a(x) - b(y))/σ` at a support pair.
///
/// Only points of the coupling's supports are accepted; there is no
/// interpolation between support points.
pub fn log_likelihood_density(
    coupling: &Coupling,
    model: &AffinityModel,
    potentials: &Potentials,
    x: ArrayView1<f64>,
    y: ArrayView1<f64>,
) -> Result<f64> {
    let i = find_row(&coupling.row_marginal.support, x).ok_or(Error::SupportPointNotFound)?;
    let j = find_row(&coupling.col_marginal.support, y).ok_or(Error::SupportPointNotFound)?;
    Ok((model.joint_utility(x, y) - potentials.a[i] - potentials.b[j]) / model.sigma)
}

/// Systematic utilities `U = (Φ + a - b)/2` and `V = (Φ - a + b)/2` on the
/// coupling's support grid.
pub fn split_surplus(
    model: &AffinityModel,
    coupling: &Coupling,
    potentials: &Potentials,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let phi = utility_table(&model.a_matrix, &coupling.row_marginal, &coupling.col_marginal)?;
    let a = potentials.a.view().insert_axis(Axis(1));
    let b = potentials.b.view().insert_axis(Axis(0));
    let u = (&phi + &a - b) * 0.5;
    let v = &phi - &u;
    Ok((u, v))
}

/// `E_π[Φ] - σ E_π[log π]` (entropy relative to counting measure).
pub fn social_gain(coupling: &Coupling, phi: &Array2<f64>, sigma: f64) -> f64 {
    let expected: f64 = Zip::from(&coupling.pi).and(phi).fold(0.0, |s, &p, &f| s + p * f);
    expected - sigma * coupling.neg_entropy()
}
