//! The social-gain function `W₁(B)`, its gradient and its Hessian.
//!
//! At `σ = 1`, `W₁(B) = max_π E_π[X'BY] - E_π[log π]`, with the entropy taken
//! relative to counting measure on the support grid. The gradient is the
//! predicted cross-moment `E_{π^B}[XY']` and the Hessian is the Fisher matrix
//! `F^{ij}_{kl} = E_π[D_ij X_k Y_l]`, where `D_ij` is the doubly-centered
//! version of `x_i y_j`.

use ndarray::{Array1, Array2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::doubly::{flatten, DoublyIndexedMatrix};
use crate::error::{Error, Result};
use crate::marginal::{Coupling, DiscreteMarginal, Potentials};
use crate::schrodinger::{solve_kernel, IpfpConfig, IterationReport, Kernel};

#[derive(Debug, Clone)]
pub struct WelfareEvaluation {
    /// `W₁(B)`.
    pub value: f64,
    /// `E_{π^B}[X Y']`.
    pub gradient: Array2<f64>,
    pub coupling: Coupling,
    pub potentials: Potentials,
    pub report: IterationReport,
}

/// Evaluates `W₁` and its gradient with default solver settings.
pub fn evaluate_welfare(
    b_matrix: &Array2<f64>,
    p: &DiscreteMarginal,
    q: &DiscreteMarginal,
) -> Result<WelfareEvaluation> {
    evaluate_welfare_with(b_matrix, p, q, &IpfpConfig::default(), None)
}

pub fn evaluate_welfare_with(
    b_matrix: &Array2<f64>,
    p: &DiscreteMarginal,
    q: &DiscreteMarginal,
    cfg: &IpfpConfig,
    warm: Option<&Potentials>,
) -> Result<WelfareEvaluation> {
    let kernel = Kernel::quadratic(b_matrix, p, q)?;
    let sol = solve_kernel(&kernel, p, q, cfg, warm)?;
    // Dual value, plus the mass defect so the value is stationary in the
    // potentials and insensitive to the residual marginal error.
    let side = |pot: &Array1<f64>, w: &Array1<f64>| -> f64 {
        pot.iter()
            .zip(w.iter())
            .filter(|(_, w)| **w > 0.0)
            .map(|(a, w)| a * w)
            .sum()
    };
    let value = side(&sol.potentials.a, &p.weights) + side(&sol.potentials.b, &q.weights)
        + (sol.coupling.pi.sum() - 1.0);
    let gradient = sol.coupling.cross_moment();
    Ok(WelfareEvaluation {
        value,
        gradient,
        coupling: sol.coupling,
        potentials: sol.potentials,
        report: sol.report,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CenteringMethod {
    /// Alternating conditional-centering sweeps.
    Alternating,
    /// Conjugate gradients on the same alternating operator.
    ConjugateGradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenteringConfig {
    /// Sup-norm bound on the conditional means of `D_ij`.
    pub tol: f64,
    pub max_iter: usize,
    pub method: CenteringMethod,
}

/// Conjugate-gradient iterations between restarts from the true residual.
const CG_RESTART: usize = 50;

impl Default for CenteringConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 5_000,
            method: CenteringMethod::ConjugateGradient,
        }
    }
}

/// `D_ij(x_r, y_s) = x_ri y_sj - α_ij(r) - β_ij(s)`; column `i·d_y + j` of
/// `alpha` and `beta` belongs to the pair `(i, j)`.
#[derive(Debug, Clone)]
pub struct ScoreFunctions {
    pub alpha: Array2<f64>,
    pub beta: Array2<f64>,
    pub dx: usize,
    pub dy: usize,
    pub iterations: usize,
    /// Largest conditional mean of any `D_ij` at exit.
    pub residual: f64,
}

impl ScoreFunctions {
    /// Materializes `D_ij` on the support grid.
    pub fn matrix(&self, coupling: &Coupling, i: usize, j: usize) -> Array2<f64> {
        let c = flatten(i, j, self.dy);
        let xs = &coupling.row_marginal.support;
        let ys = &coupling.col_marginal.support;
        Array2::from_shape_fn(coupling.pi.dim(), |(r, s)| {
            xs[[r, i]] * ys[[s, j]] - self.alpha[[r, c]] - self.beta[[s, c]]
        })
    }
}

/// `E[f(Y) | X = x_r]`, columnwise; zero on massless rows.
fn cond_rows(pi: &Array2<f64>, f: &Array2<f64>, p: &Array1<f64>) -> Array2<f64> {
    let mut out = pi.dot(f);
    divide_rows(&mut out, p);
    out
}

/// `E[g(X) | Y = y_s]`, columnwise; zero on massless columns.
fn cond_cols(pi: &Array2<f64>, g: &Array2<f64>, q: &Array1<f64>) -> Array2<f64> {
    let mut out = pi.t().dot(g);
    divide_rows(&mut out, q);
    out
}

fn divide_rows(m: &mut Array2<f64>, w: &Array1<f64>) {
    Zip::from(m.rows_mut()).and(w).for_each(|mut row, &wi| {
        if wi > 0.0 {
            row /= wi;
        } else {
            row.fill(0.0);
        }
    });
}

/// Column-wise `Σ_s w_s u_sc v_sc`.
fn weighted_dots(u: &Array2<f64>, v: &Array2<f64>, w: &Array1<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(u.ncols());
    for ((ur, vr), &ws) in u.rows().into_iter().zip(v.rows()).zip(w.iter()) {
        if ws > 0.0 {
            Zip::from(&mut out).and(&ur).and(&vr).for_each(|o, &a, &b| *o += ws * a * b);
        }
    }
    out
}

fn sup_norm_weighted(m: &Array2<f64>, w: &Array1<f64>) -> f64 {
    m.rows()
        .into_iter()
        .zip(w.iter())
        .filter(|(_, w)| **w > 0.0)
        .flat_map(|(r, _)| r.to_vec())
        .fold(0.0f64, |a, v| a.max(v.abs()))
}

/// Doubly-centered scores with default settings.
pub fn score_functions(coupling: &Coupling) -> Result<ScoreFunctions> {
    score_functions_with(coupling, &CenteringConfig::default())
}

pub fn score_functions_with(coupling: &Coupling, cfg: &CenteringConfig) -> Result<ScoreFunctions> {
    let pi = &coupling.pi;
    let p = &coupling.row_marginal.weights;
    let q = &coupling.col_marginal.weights;
    let xs = &coupling.row_marginal.support;
    let ys = &coupling.col_marginal.support;
    let (dx, dy) = (xs.ncols(), ys.ncols());
    let (mx, my) = pi.dim();
    let c = dx * dy;

    let ey = cond_rows(pi, ys, p);
    let ex = cond_cols(pi, xs, q);
    // R M: E[x_i y_j | X = x_r] = x_ri E[y_j | x_r]
    let rm = Array2::from_shape_fn((mx, c), |(r, k)| {
        let (i, j) = (k / dy, k % dy);
        xs[[r, i]] * ey[[r, j]]
    });
    // C M
    let cm = Array2::from_shape_fn((my, c), |(s, k)| {
        let (i, j) = (k / dy, k % dy);
        ys[[s, j]] * ex[[s, i]]
    });
    // Column residual of D for a given β is rhs - (β - C R β).
    let rhs = &cm - &cond_cols(pi, &rm, q);
    let apply = |beta: &Array2<f64>| -> Array2<f64> { beta - &cond_cols(pi, &cond_rows(pi, beta, p), q) };

    let mut beta = Array2::<f64>::zeros((my, c));
    let mut resid = rhs.clone();
    let mut err = sup_norm_weighted(&resid, q);
    let mut iterations = 0usize;

    match cfg.method {
        CenteringMethod::Alternating => {
            while err >= cfg.tol && iterations < cfg.max_iter {
                iterations += 1;
                // β ← C(M - α), α = R(M - β)  ⇔  β ← β + residual
                beta = &beta + &resid;
                resid = &rhs - &apply(&beta);
                err = sup_norm_weighted(&resid, q);
            }
        }
        CenteringMethod::ConjugateGradient => {
            // The operator I - CR is self-adjoint and PSD in L²(q) with the
            // constants as kernel, so residuals are kept q-centered. Each
            // column is a separate system and is frozen once it converges;
            // every cycle restarts from the true residual.
            let ones = Array2::<f64>::ones((my, c));
            let center = |m: &mut Array2<f64>| {
                let mean = weighted_dots(m, &ones, q);
                *m -= &mean;
            };
            let column_err = |m: &Array2<f64>| -> Array1<f64> {
                let mut e = Array1::<f64>::zeros(c);
                for (row, &w) in m.rows().into_iter().zip(q.iter()) {
                    if w > 0.0 {
                        Zip::from(&mut e).and(&row).for_each(|e, &v| *e = e.max(v.abs()));
                    }
                }
                e
            };
            center(&mut resid);
            while err >= cfg.tol && iterations < cfg.max_iter {
                let mut active = column_err(&resid).mapv(|e| if e >= cfg.tol { 1.0 } else { 0.0 });
                let mut dir = resid.broadcast_cols(&active);
                let mut rr = weighted_dots(&dir, &dir, q);
                for _ in 0..CG_RESTART {
                    if active.sum() == 0.0 || iterations >= cfg.max_iter {
                        break;
                    }
                    iterations += 1;
                    let ad = apply(&dir);
                    let dad = weighted_dots(&dir, &ad, q);
                    let step = Zip::from(&rr)
                        .and(&dad)
                        .and(&active)
                        .map_collect(|&a, &b, &on| if on > 0.0 && b > 0.0 { a / b } else { 0.0 });
                    beta += &dir.broadcast_cols(&step);
                    resid -= &ad.broadcast_cols(&step);
                    center(&mut resid);
                    let done = column_err(&resid);
                    Zip::from(&mut active).and(&done).and(&step).for_each(|on, &e, &st| {
                        if e < cfg.tol || st == 0.0 {
                            *on = 0.0;
                        }
                    });
                    let rr_new = weighted_dots(&resid, &resid, q);
                    let ratio = Zip::from(&rr_new).and(&rr).map_collect(|&a, &b| if b > 0.0 { a / b } else { 0.0 });
                    dir = (&resid + &dir.broadcast_cols(&ratio)).broadcast_cols(&active);
                    rr = rr_new;
                }
                resid = &rhs - &apply(&beta);
                err = sup_norm_weighted(&resid, q);
                center(&mut resid);
            }
        }
    }
    if err >= cfg.tol {
        return Err(Error::CenteringNotConverged {
            residual: err,
            iterations,
        });
    }
    // q-mean of β set to zero; α absorbs the constant.
    let mean_b = weighted_dots(&beta, &Array2::ones(beta.dim()), q);
    beta -= &mean_b;
    for (s, &w) in q.iter().enumerate() {
        if !(w > 0.0) {
            beta.row_mut(s).fill(0.0);
        }
    }
    let alpha = &rm - &cond_rows(pi, &beta, p);
    Ok(ScoreFunctions {
        alpha,
        beta,
        dx,
        dy,
        iterations,
        residual: err,
    })
}

trait BroadcastCols {
    fn broadcast_cols(&self, s: &Array1<f64>) -> Array2<f64>;
}

impl BroadcastCols for Array2<f64> {
    /// Multiplies column `c` by `s[c]`.
    fn broadcast_cols(&self, s: &Array1<f64>) -> Array2<f64> {
        self * &s.view().insert_axis(Axis(0))
    }
}

/// Fisher matrix with default centering settings.
pub fn fisher_information(coupling: &Coupling) -> Result<DoublyIndexedMatrix> {
    fisher_information_with(coupling, &CenteringConfig::default())
}

pub fn fisher_information_with(coupling: &Coupling, cfg: &CenteringConfig) -> Result<DoublyIndexedMatrix> {
    let scores = score_functions_with(coupling, cfg)?;
    Ok(fisher_from_scores(coupling, &scores))
}

/// `F^{ij}_{kl} = E_π[D_ij X_k Y_l]`.
pub fn fisher_from_scores(coupling: &Coupling, scores: &ScoreFunctions) -> DoublyIndexedMatrix {
    let pi = &coupling.pi;
    let xs = &coupling.row_marginal.support;
    let ys = &coupling.col_marginal.support;
    let (dx, dy) = (scores.dx, scores.dy);
    let (mx, my) = pi.dim();
    let c = dx * dy;

    // E[x_i x_k y_j y_l]
    let y2 = Array2::from_shape_fn((my, dy * dy), |(s, k)| ys[[s, k / dy]] * ys[[s, k % dy]]);
    let x2 = Array2::from_shape_fn((mx, dx * dx), |(r, k)| xs[[r, k / dx]] * xs[[r, k % dx]]);
    let t1 = x2.t().dot(&pi.dot(&y2));

    let py = pi.dot(ys);
    let px = pi.t().dot(xs);
    let w = Array2::from_shape_fn((mx, c), |(r, k)| xs[[r, k / dy]] * py[[r, k % dy]]);
    let z = Array2::from_shape_fn((my, c), |(s, k)| px[[s, k / dy]] * ys[[s, k % dy]]);
    let t2 = scores.alpha.t().dot(&w);
    let t3 = scores.beta.t().dot(&z);

    let mut data = Array2::zeros((c, c));
    for i in 0..dx {
        for j in 0..dy {
            let row = flatten(i, j, dy);
            for k in 0..dx {
                for l in 0..dy {
                    let col = flatten(k, l, dy);
                    let m4 = t1[[flatten(i, k, dx), flatten(j, l, dy)]];
                    data[[row, col]] = m4 - t2[[row, col]] - t3[[row, col]];
                }
            }
        }
    }
    DoublyIndexedMatrix {
        data,
        row_shape: (dx, dy),
        col_shape: (dx, dy),
    }
}
