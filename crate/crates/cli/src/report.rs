//! Report tables and the intermediate estimate artifact.

use std::collections::BTreeMap;

use affinity_core::inference::RankTestResult;
use affinity_core::{rank_test, BootstrapSummary, DoublyIndexedMatrix, SaliencyResult, ScalingRecord};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SCHEMA_VERSION};
use crate::ingest::DropReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
    pub versions: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new(cfg: &RunConfig) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert("affinity-cli".to_string(), env!("CARGO_PKG_VERSION").to_string());
        versions.insert("schema".to_string(), SCHEMA_VERSION.to_string());
        Self {
            seed: cfg.seed,
            config_hash: cfg.hash(),
            versions,
        }
    }
}

/// A stage that failed without aborting the run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub n: usize,
    /// `1/‖B̂‖`; absent when `B̂ = 0`.
    pub sigma: Option<f64>,
    pub moment_gap: f64,
    pub iterations: usize,
    pub ipfp_iterations: usize,
    pub degenerate: bool,
}

/// Output of `estimate`, the input of every later stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateArtifact {
    pub schema_version: u32,
    pub provenance: Provenance,
    pub config: RunConfig,
    pub ingestion: DropReport,
    pub names_x: Vec<String>,
    pub names_y: Vec<String>,
    pub scaling: ScalingRecord,
    pub fit: FitSummary,
    /// In standardized units.
    pub b_hat: Array2<f64>,
    pub covariance: Option<CovarianceSummary>,
    pub failures: Vec<StageFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSummary {
    /// Asymptotic covariance of `vec B̂` (row-major), already divided by `n`.
    pub b_cov: Array2<f64>,
    pub theta: Array2<f64>,
    pub v_theta: DoublyIndexedMatrix,
    pub s_x: Array1<f64>,
    pub s_y: Array1<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinityTable {
    /// `"B"` or `"A"` (normalized to unit Frobenius norm).
    pub parameter: String,
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub estimate: Vec<Vec<f64>>,
    pub std_error: Option<Vec<Vec<f64>>>,
    pub bootstrap_std: Option<Vec<Vec<f64>>>,
    pub significant: Option<Vec<Vec<bool>>>,
    pub critical_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyTable {
    pub names_x: Vec<String>,
    pub names_y: Vec<String>,
    /// `loadings_x[i][k]`: weight of attribute `i` in index `k`.
    pub loadings_x: Vec<Vec<f64>>,
    pub loadings_y: Vec<Vec<f64>>,
    pub singular_values: Vec<f64>,
    pub cumulative_shares: Vec<f64>,
    pub subspace_non_unique: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareTable {
    pub shares: Vec<f64>,
    pub std: Option<Vec<f64>>,
    pub bootstrap_reps: usize,
    pub bootstrap_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub p: usize,
    pub statistic: Option<f64>,
    pub df: usize,
    pub p_value: Option<f64>,
    pub reject: Option<bool>,
    pub degenerate: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub alpha: f64,
    pub rows: Vec<RankRow>,
    /// Smallest `p` not rejected; `d` when all are rejected.
    pub sorting_dimension: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub provenance: Provenance,
    pub config: RunConfig,
    pub ingestion: DropReport,
    pub fit: FitSummary,
    pub affinity: AffinityTable,
    pub saliency: Option<SaliencyTable>,
    pub shares: Option<ShareTable>,
    pub rank_tests: Option<RankTable>,
    pub notes: Vec<String>,
    pub failures: Vec<StageFailure>,
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// `B` or `A = B/‖B‖`, the delta-method covariance of the reported
/// parameter and, optionally, its bootstrap spread.
pub fn affinity_table(
    art: &EstimateArtifact,
    bootstrap: Option<&BootstrapSummary>,
) -> AffinityTable {
    let cfg = &art.config;
    let b = &art.b_hat;
    let (dx, dy) = b.dim();
    let norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let normalize = cfg.sigma_normalize && norm > 0.0;
    let estimate = if normalize { b / norm } else { b.clone() };

    let std_error = art.covariance.as_ref().map(|c| {
        let cov = if normalize {
            let a = Array1::from_iter(estimate.iter().copied());
            let m = dx * dy;
            let j = (Array2::<f64>::eye(m) - &(a.view().insert_axis(ndarray::Axis(1)).dot(&a.view().insert_axis(ndarray::Axis(0))))) / norm;
            j.dot(&c.b_cov).dot(&j.t())
        } else {
            c.b_cov.clone()
        };
        Array2::from_shape_fn((dx, dy), |(i, k)| cov[[i * dy + k, i * dy + k]].max(0.0).sqrt())
    });
    let significant = std_error.as_ref().map(|se| {
        estimate
            .indexed_iter()
            .map(|((i, k), v)| se[[i, k]] > 0.0 && v.abs() / se[[i, k]] > cfg.critical_value)
            .collect::<Vec<bool>>()
            .chunks(dy)
            .map(<[bool]>::to_vec)
            .collect()
    });
    let bootstrap_std = bootstrap.map(|bs| {
        let draws: Vec<Array2<f64>> = bs
            .b_hats
            .iter()
            .flatten()
            .map(|d| {
                let nd = d.iter().map(|v| v * v).sum::<f64>().sqrt();
                if normalize && nd > 0.0 {
                    d / nd
                } else {
                    d.clone()
                }
            })
            .collect();
        rows(&spread(&draws, (dx, dy)))
    });
    AffinityTable {
        parameter: if normalize { "A" } else { "B" }.to_string(),
        rows: art.names_x.clone(),
        cols: art.names_y.clone(),
        estimate: rows(&estimate),
        std_error: std_error.as_ref().map(rows),
        bootstrap_std,
        significant,
        critical_value: cfg.critical_value,
    }
}

fn spread(draws: &[Array2<f64>], dim: (usize, usize)) -> Array2<f64> {
    let k = draws.len();
    if k < 2 {
        return Array2::zeros(dim);
    }
    let mean = draws.iter().fold(Array2::<f64>::zeros(dim), |acc, d| acc + d) / k as f64;
    let ss = draws
        .iter()
        .fold(Array2::<f64>::zeros(dim), |acc, d| acc + (d - &mean).mapv(|v| v * v));
    (ss / (k - 1) as f64).mapv(f64::sqrt)
}

pub fn saliency_table(names_x: &[String], names_y: &[String], s: &SaliencyResult) -> SaliencyTable {
    let mut cum = 0.0;
    let cumulative_shares = s
        .shares
        .iter()
        .map(|v| {
            cum += v;
            cum
        })
        .collect();
    SaliencyTable {
        names_x: names_x.to_vec(),
        names_y: names_y.to_vec(),
        loadings_x: rows(&s.loadings_x),
        loadings_y: rows(&s.loadings_y),
        singular_values: s.lambda.to_vec(),
        cumulative_shares,
        subspace_non_unique: s.subspace_non_unique,
    }
}

pub fn share_table(s: &SaliencyResult, bootstrap: Option<&BootstrapSummary>) -> ShareTable {
    ShareTable {
        shares: s.shares.to_vec(),
        std: bootstrap.map(|b| b.shares_std.to_vec()),
        bootstrap_reps: bootstrap.map_or(0, |b| b.reps),
        bootstrap_failures: bootstrap.map_or(0, |b| b.failures.len()),
    }
}

/// Rank tests `p = 1, …, d-1`. A failing test is recorded in its row and
/// the sweep moves on.
pub fn rank_table(c: &CovarianceSummary, alpha: f64) -> RankTable {
    let d = c.theta.nrows().min(c.theta.ncols());
    let rows: Vec<RankRow> = (1..d)
        .map(|p| match rank_test(&c.theta, &c.v_theta, c.n, p) {
            Ok(r) => rank_row(&r, alpha),
            Err(e) => RankRow {
                p,
                statistic: None,
                df: (c.theta.nrows() - p) * (c.theta.ncols() - p),
                p_value: None,
                reject: None,
                degenerate: false,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let mut sorting_dimension = Some(d);
    for r in &rows {
        match r.reject {
            Some(true) => continue,
            Some(false) => sorting_dimension = Some(r.p),
            None => sorting_dimension = None,
        }
        break;
    }
    RankTable {
        alpha,
        rows,
        sorting_dimension,
    }
}

fn rank_row(r: &RankTestResult, alpha: f64) -> RankRow {
    RankRow {
        p: r.p,
        statistic: finite(r.statistic),
        df: r.df,
        p_value: finite(r.p_value),
        reject: finite(r.p_value).map(|pv| pv < alpha),
        degenerate: r.degenerate,
        error: None,
    }
}
