//! Subcommands. Each reads either a CSV file or a JSON artifact written by
//! an earlier subcommand.

use std::path::PathBuf;

use affinity_core::{
    simulate_gaussian, simulate_gaussian_1d, solve_ipfp, DiscreteMarginal, GaussianQuadraticSpec, IpfpConfig,
};
use clap::{Args, Parser, Subcommand};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Format, OutputConfig, RunConfig, SCHEMA_VERSION};
use crate::emit::{emit, emit_artifact, read_json};
use crate::error::{CliError, Result};
use crate::ingest::write_csv;
use crate::pipeline::{build_report, estimate, rank_stage, run_pipeline, saliency_stage};
use crate::render::{render_affinity, render_rank, render_saliency, render_shares};
use crate::report::{affinity_table, EstimateArtifact, Provenance, RankTable, SaliencyTable, ShareTable};

#[derive(Debug, Parser)]
#[command(name = "affinity", version, about = "Estimate affinity matrices from matched couples")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest, standardize, fit and compute the asymptotic covariance.
    Estimate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Saliency indices and shares from an estimate artifact.
    Saliency {
        /// estimate.json written by `affinity estimate`.
        #[arg(long)]
        estimate: PathBuf,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Rank tests p = 1, …, d-1 from an estimate artifact.
    Ranktest {
        /// estimate.json written by `affinity estimate`.
        #[arg(long)]
        estimate: PathBuf,
        /// Rank-test level; defaults to the level stored in the estimate.
        #[arg(long)]
        alpha: Option<f64>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Simulate Gaussian couples with a quadratic surplus and write a CSV.
    Simulate {
        /// One-dimensional model with Φ(x,y) = xy and this noise scale.
        #[arg(long, conflicts_with = "b")]
        sigma: Option<f64>,
        /// Affinity B as rows separated by `;`, entries by `,`.
        #[arg(long, allow_hyphen_values = true)]
        b: Option<String>,
        /// Number of couples.
        #[arg(long, default_value_t = 1000)]
        n: usize,
        /// Simulation seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Solve one Schrödinger problem given as JSON.
    Ipfp {
        /// JSON with fields phi, sigma, p and q.
        #[arg(long)]
        input: PathBuf,
        /// Marginal tolerance.
        #[arg(long)]
        tol: Option<f64>,
        /// Iteration cap.
        #[arg(long)]
        max_iter: Option<usize>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Full report, from a CSV file (`--input`) or an estimate artifact.
    Report {
        #[command(flatten)]
        data: DataArgs,
        /// Build the report from a saved estimate.json instead of a CSV.
        #[arg(long, conflicts_with = "input")]
        estimate: Option<PathBuf>,
        #[command(flatten)]
        out: OutArgs,
    },
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Comma-separated men's attribute columns.
    #[arg(long, value_delimiter = ',')]
    pub x_cols: Vec<String>,
    /// Comma-separated women's attribute columns.
    #[arg(long, value_delimiter = ',')]
    pub y_cols: Vec<String>,
    /// Report A = B/‖B‖ instead of B.
    #[arg(long)]
    pub sigma_normalize: bool,
    /// IPFP marginal tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    /// IPFP iteration cap.
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Estimator stopping rule on the moment gap.
    #[arg(long)]
    pub moment_tol: Option<f64>,
    /// Estimator iteration cap.
    #[arg(long)]
    pub newton_max_iter: Option<usize>,
    /// Support points per side; 0 keeps every observation.
    #[arg(long)]
    pub max_support_points: Option<usize>,
    /// Bootstrap replicates for share standard deviations.
    #[arg(long, default_value_t = 0)]
    pub bootstrap: usize,
    /// Rank-test level.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// |estimate|/se above this gets a star.
    #[arg(long)]
    pub critical_value: Option<f64>,
    /// Bootstrap seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct OutArgs {
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "json,text")]
    pub format: Vec<Format>,
    /// Overwrite a directory holding results of another config.
    #[arg(long)]
    pub force: bool,
}

impl OutArgs {
    fn config(&self) -> OutputConfig {
        OutputConfig {
            dir: self.out.clone(),
            formats: self.format.clone(),
            force: self.force,
        }
    }
}

impl DataArgs {
    pub fn run_config(&self) -> Result<RunConfig> {
        let d = RunConfig::default();
        let input = self
            .input
            .clone()
            .ok_or_else(|| CliError::InvalidConfig("--input is required".into()))?;
        Ok(RunConfig {
            input,
            x_cols: self.x_cols.clone(),
            y_cols: self.y_cols.clone(),
            sigma_normalize: self.sigma_normalize,
            tol: self.tol.unwrap_or(d.tol),
            max_iter: self.max_iter.unwrap_or(d.max_iter),
            moment_tol: self.moment_tol.unwrap_or(d.moment_tol),
            newton_max_iter: self.newton_max_iter.unwrap_or(d.newton_max_iter),
            max_support_points: self.max_support_points.unwrap_or(d.max_support_points),
            bootstrap: self.bootstrap,
            alpha: self.alpha.unwrap_or(d.alpha),
            critical_value: self.critical_value.unwrap_or(d.critical_value),
            seed: self.seed,
        })
    }
}

/// Outcome of a command that produced its outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Complete,
    /// Outputs written but some stage failed.
    Partial,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Complete => 0,
            Status::Partial => 2,
        }
    }

    fn from_failures(n: usize) -> Self {
        if n == 0 {
            Status::Complete
        } else {
            Status::Partial
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyArtifact {
    pub schema_version: u32,
    pub provenance: Provenance,
    pub saliency: Option<SaliencyTable>,
    pub shares: Option<ShareTable>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankArtifact {
    pub schema_version: u32,
    pub provenance: Provenance,
    pub rank_tests: Option<RankTable>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateArtifact {
    pub schema_version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub sigma: Option<f64>,
    pub b: Option<Vec<Vec<f64>>>,
    pub n: usize,
    pub csv: String,
}

/// A Schrödinger problem: utility table, noise scale and both marginals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpfpProblem {
    pub phi: Vec<Vec<f64>>,
    pub sigma: f64,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpfpArtifact {
    pub schema_version: u32,
    pub config_hash: String,
    pub pi: Vec<Vec<f64>>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub iterations: usize,
    pub final_error: f64,
    pub marginal_error: f64,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Parses `"1,0;0,0.5"` into a matrix.
pub fn parse_matrix(s: &str) -> Result<Array2<f64>> {
    let rows: Vec<Vec<f64>> = s
        .split(';')
        .map(|r| {
            r.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| CliError::InvalidConfig(format!("bad matrix entry {v:?}"))))
                .collect()
        })
        .collect::<Result<_>>()?;
    let cols = rows.first().map_or(0, Vec::len);
    if cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(CliError::InvalidConfig(format!("matrix {s:?} is ragged or empty")));
    }
    Ok(Array2::from_shape_vec((rows.len(), cols), rows.concat()).expect("shape checked"))
}

fn matrix_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn estimate_text(art: &EstimateArtifact) -> String {
    let mut s = render_affinity(&affinity_table(art, None));
    for f in &art.failures {
        s.push_str(&format!("failed: {}: {}\n", f.stage, f.message));
    }
    s
}

pub fn run(cli: Cli) -> Result<Status> {
    match cli.command {
        Command::Estimate { data, out } => {
            let cfg = data.run_config()?;
            let (art, _) = estimate(&cfg)?;
            emit_artifact(&out.config(), &art.provenance.config_hash, "estimate", &art, Some(estimate_text(&art)))?;
            Ok(Status::from_failures(art.failures.len()))
        }
        Command::Saliency { estimate, out } => {
            let art: EstimateArtifact = read_json(&estimate)?;
            let (mut notes, mut failures) = (Vec::new(), Vec::new());
            let (saliency, shares) = saliency_stage(&art, None, &mut notes, &mut failures);
            let mut text = String::new();
            if let Some(s) = &saliency {
                text.push_str(&render_saliency(s));
            }
            if let Some(s) = &shares {
                text.push_str(&render_shares(s));
            }
            let result = SaliencyArtifact {
                schema_version: SCHEMA_VERSION,
                provenance: art.provenance.clone(),
                saliency,
                shares,
                notes,
            };
            emit_artifact(&out.config(), &result.provenance.config_hash, "saliency", &result, Some(text))?;
            Ok(Status::from_failures(failures.len()))
        }
        Command::Ranktest { estimate, alpha, out } => {
            let mut art: EstimateArtifact = read_json(&estimate)?;
            if let Some(a) = alpha {
                art.config.alpha = a;
                art.config.validate()?;
                art.provenance = Provenance::new(&art.config);
            }
            let mut notes = Vec::new();
            let rank_tests = rank_stage(&art, art.config.alpha, &mut notes);
            let text = rank_tests.as_ref().map(render_rank).unwrap_or_default()
                + &notes.iter().map(|n| format!("{n}\n")).collect::<String>();
            let failed = rank_tests
                .as_ref()
                .map_or(0, |t| t.rows.iter().filter(|r| r.error.is_some()).count());
            let result = RankArtifact {
                schema_version: SCHEMA_VERSION,
                provenance: art.provenance.clone(),
                rank_tests,
                notes,
            };
            emit_artifact(&out.config(), &result.provenance.config_hash, "ranktest", &result, Some(text))?;
            Ok(Status::from_failures(failed))
        }
        Command::Simulate { sigma, b, n, seed, out } => {
            let (sample, b_rows) = match (sigma, &b) {
                (Some(s), None) => (simulate_gaussian_1d(s, n, seed)?, None),
                (None, Some(b)) => {
                    let m = parse_matrix(b)?;
                    let spec = GaussianQuadraticSpec {
                        b_matrix: m.clone(),
                        n,
                        seed,
                    };
                    (simulate_gaussian(&spec)?, Some(matrix_rows(&m)))
                }
                _ => return Err(CliError::InvalidConfig("give exactly one of --sigma and --b".into())),
            };
            let mut art = SimulateArtifact {
                schema_version: SCHEMA_VERSION,
                seed,
                config_hash: String::new(),
                sigma,
                b: b_rows,
                n,
                csv: "sample.csv".into(),
            };
            art.config_hash = sha256_hex(&serde_json::to_vec(&art).expect("serializes"));
            let oc = out.config();
            crate::emit::prepare_dir(&oc, &art.config_hash)?;
            write_csv(&oc.dir.join("sample.csv"), &sample)?;
            let json_only = OutputConfig {
                formats: vec![Format::Json],
                ..oc
            };
            emit_artifact(&json_only, &art.config_hash, "simulate", &art, None)?;
            Ok(Status::Complete)
        }
        Command::Ipfp { input, tol, max_iter, out } => {
            let problem: IpfpProblem = read_json(&input)?;
            let d = IpfpConfig::default();
            let cfg = IpfpConfig {
                tol: tol.unwrap_or(d.tol),
                max_iter: max_iter.unwrap_or(d.max_iter),
                ..d
            };
            let hash = sha256_hex(&serde_json::to_vec(&(&problem, &cfg)).expect("serializes"));
            let rows = problem.phi.len();
            let cols = problem.phi.first().map_or(0, Vec::len);
            if problem.phi.iter().any(|r| r.len() != cols) {
                return Err(CliError::InvalidConfig("phi is ragged".into()));
            }
            let phi = Array2::from_shape_vec((rows, cols), problem.phi.concat()).expect("shape checked");
            let grid = |len: usize| Array2::from_shape_fn((len, 1), |(i, _)| i as f64);
            let p = DiscreteMarginal::new(Array1::from(problem.p.clone()), grid(problem.p.len()))?;
            let q = DiscreteMarginal::new(Array1::from(problem.q.clone()), grid(problem.q.len()))?;
            let sol = solve_ipfp(&phi, problem.sigma, &p, &q, &cfg)?;
            let art = IpfpArtifact {
                schema_version: SCHEMA_VERSION,
                config_hash: hash.clone(),
                pi: matrix_rows(&sol.coupling.pi),
                a: sol.potentials.a.to_vec(),
                b: sol.potentials.b.to_vec(),
                iterations: sol.report.iterations,
                final_error: sol.report.final_error,
                marginal_error: sol.coupling.marginal_error(),
            };
            let text = format!(
                "IPFP: {} iterations, marginal error {:.3e}\n",
                art.iterations, art.marginal_error
            );
            emit_artifact(&out.config(), &hash, "ipfp", &art, Some(text))?;
            Ok(Status::Complete)
        }
        Command::Report { data, estimate, out } => {
            let report = match estimate {
                None => run_pipeline(&data.run_config()?)?,
                Some(path) => {
                    let art: EstimateArtifact = read_json(&path)?;
                    let mut r = build_report(&art, None);
                    if art.config.bootstrap > 0 {
                        r.notes.push("bootstrap needs the data: rerun with --input".into());
                    }
                    r
                }
            };
            emit(&report, &out.config())?;
            Ok(Status::from_failures(report.failures.len()))
        }
    }
}
