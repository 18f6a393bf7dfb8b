//! Run configuration and its content hash.

use std::path::PathBuf;

use affinity_core::{FitConfig, IpfpConfig, SupportReduction};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Everything that determines the numbers in a report. Output location and
/// formats live in [`OutputConfig`] and do not enter the hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub input: PathBuf,
    pub x_cols: Vec<String>,
    pub y_cols: Vec<String>,
    /// Report `A = B/‖B‖` instead of `B`.
    pub sigma_normalize: bool,
    /// IPFP sup-norm tolerance on the marginals.
    pub tol: f64,
    /// IPFP iteration cap.
    pub max_iter: usize,
    pub moment_tol: f64,
    pub newton_max_iter: usize,
    /// Support points per side before centroid grouping; 0 keeps every point.
    pub max_support_points: usize,
    pub bootstrap: usize,
    pub alpha: f64,
    pub critical_value: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Text,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub formats: Vec<Format>,
    pub force: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let fit = FitConfig::default();
        Self {
            input: PathBuf::new(),
            x_cols: Vec::new(),
            y_cols: Vec::new(),
            sigma_normalize: false,
            tol: fit.ipfp.tol,
            max_iter: fit.ipfp.max_iter,
            moment_tol: fit.moment_tol,
            newton_max_iter: fit.max_iter,
            max_support_points: 2500,
            bootstrap: 0,
            alpha: 0.05,
            critical_value: 1.96,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::InvalidConfig(m));
        if self.x_cols.is_empty() || self.y_cols.is_empty() {
            return bad("both --x-cols and --y-cols need at least one column".into());
        }
        let mut all: Vec<&String> = self.x_cols.iter().chain(&self.y_cols).collect();
        all.sort();
        if let Some(w) = all.windows(2).find(|w| w[0] == w[1]) {
            return bad(format!("column `{}` is mapped twice", w[0]));
        }
        if !(self.tol > 0.0) || !(self.moment_tol > 0.0) {
            return bad("tolerances must be positive".into());
        }
        if self.max_iter == 0 || self.newton_max_iter == 0 {
            return bad("iteration caps must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must be in (0, 1), got {}", self.alpha));
        }
        if !(self.critical_value > 0.0) {
            return bad("critical value must be positive".into());
        }
        Ok(())
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            ipfp: IpfpConfig {
                tol: self.tol,
                max_iter: self.max_iter,
                ..IpfpConfig::default()
            },
            moment_tol: self.moment_tol,
            max_iter: self.newton_max_iter,
            support: if self.max_support_points == 0 {
                SupportReduction::None
            } else {
                SupportReduction::Cells {
                    max_points: self.max_support_points,
                }
            },
            ..FitConfig::default()
        }
    }

    /// SHA-256 of the canonical JSON encoding, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(&serde_json::to_value(self).expect("config serializes")).expect("value serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
