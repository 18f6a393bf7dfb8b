//! standardize → fit → saliency → covariance → rank sweep → bootstrap.

use affinity_core::{
    asymptotic_covariance, bootstrap_fit, fit_affinity, saliency, standardize, AffinityModel, BootstrapSummary,
    MatchedSample,
};
use log::{info, warn};

use crate::config::{RunConfig, SCHEMA_VERSION};
use crate::error::Result;
use crate::ingest::{ingest_csv, DropReport};
use crate::report::{
    affinity_table, rank_table, saliency_table, share_table, CovarianceSummary, EstimateArtifact, FitSummary,
    Provenance, RankTable, Report, SaliencyTable, ShareTable, StageFailure,
};

/// Ingests, standardizes and fits. Covariance failures are recorded in the
/// artifact; everything before them is fatal.
pub fn estimate(cfg: &RunConfig) -> Result<(EstimateArtifact, MatchedSample)> {
    cfg.validate()?;
    let (raw, ingestion) = ingest_csv(&cfg.input, &cfg.x_cols, &cfg.y_cols)?;
    estimate_sample(cfg, &raw, ingestion)
}

pub fn estimate_sample(cfg: &RunConfig, raw: &MatchedSample, ingestion: DropReport) -> Result<(EstimateArtifact, MatchedSample)> {
    let (sample, scaling) = standardize(raw)?;
    info!("fitting {} couples, {}×{} attributes", sample.n(), sample.dx(), sample.dy());
    let (model, report) = fit_affinity(&sample, &cfg.fit_config())?;
    let mut failures = Vec::new();
    let covariance = if report.degenerate {
        None
    } else {
        match asymptotic_covariance(&sample, &model, &report.coupling) {
            Ok(c) => {
                let n = c.n as f64;
                Some(CovarianceSummary {
                    b_cov: &c.f_inv.data / n,
                    theta: c.theta,
                    v_theta: c.v_theta,
                    s_x: c.s_x,
                    s_y: c.s_y,
                    n: c.n,
                })
            }
            Err(e) => {
                warn!("asymptotic covariance failed: {e}");
                failures.push(StageFailure {
                    stage: "covariance".into(),
                    message: e.to_string(),
                });
                None
            }
        }
    };
    let art = EstimateArtifact {
        schema_version: SCHEMA_VERSION,
        provenance: Provenance::new(cfg),
        config: cfg.clone(),
        ingestion,
        names_x: sample.attribute_names_x.clone(),
        names_y: sample.attribute_names_y.clone(),
        scaling,
        fit: FitSummary {
            n: sample.n(),
            sigma: model.sigma.is_finite().then_some(model.sigma),
            moment_gap: report.moment_gap,
            iterations: report.iterations,
            ipfp_iterations: report.ipfp_iterations,
            degenerate: report.degenerate,
        },
        b_hat: report.b_hat,
        covariance,
        failures,
    };
    Ok((art, sample))
}

/// Saliency on standardized attributes (unit variances), or a note when
/// the fit is degenerate.
pub fn saliency_stage(
    art: &EstimateArtifact,
    bootstrap: Option<&BootstrapSummary>,
    notes: &mut Vec<String>,
    failures: &mut Vec<StageFailure>,
) -> (Option<SaliencyTable>, Option<ShareTable>) {
    if art.fit.degenerate {
        notes.push("B̂ = 0: no saliency indices".into());
        return (None, None);
    }
    let model = AffinityModel::from_b(&art.b_hat);
    let ones_x = ndarray::Array1::ones(art.names_x.len());
    let ones_y = ndarray::Array1::ones(art.names_y.len());
    match saliency(&model, &ones_x, &ones_y) {
        Ok(s) => {
            if bootstrap.is_none() {
                notes.push("no bootstrap replicates: share standard deviations omitted".into());
            }
            (
                Some(saliency_table(&art.names_x, &art.names_y, &s)),
                Some(share_table(&s, bootstrap)),
            )
        }
        Err(e) => {
            failures.push(StageFailure {
                stage: "saliency".into(),
                message: e.to_string(),
            });
            (None, None)
        }
    }
}

pub fn rank_stage(art: &EstimateArtifact, alpha: f64, notes: &mut Vec<String>) -> Option<RankTable> {
    let d = art.names_x.len().min(art.names_y.len());
    if d < 2 {
        notes.push(format!("rank test skipped: min(dx, dy) = {d}, nothing to test below full rank"));
        return None;
    }
    match &art.covariance {
        Some(c) => Some(rank_table(c, alpha)),
        None => {
            notes.push("rank test skipped: no asymptotic covariance".into());
            None
        }
    }
}

/// Assembles a report from an estimate and an optional bootstrap.
pub fn build_report(art: &EstimateArtifact, bootstrap: Option<&BootstrapSummary>) -> Report {
    let mut notes = Vec::new();
    let mut failures = art.failures.clone();
    let affinity = affinity_table(art, bootstrap);
    if art.config.sigma_normalize && affinity.parameter == "B" {
        notes.push("B̂ = 0 cannot be normalized; reporting B".into());
    }
    let (saliency, shares) = saliency_stage(art, bootstrap, &mut notes, &mut failures);
    let rank_tests = rank_stage(art, art.config.alpha, &mut notes);
    if let Some(b) = bootstrap {
        for (rep, msg) in &b.failures {
            failures.push(StageFailure {
                stage: format!("bootstrap replicate {rep}"),
                message: msg.clone(),
            });
        }
    }
    Report {
        schema_version: SCHEMA_VERSION,
        provenance: art.provenance.clone(),
        config: art.config.clone(),
        ingestion: art.ingestion.clone(),
        fit: art.fit.clone(),
        affinity,
        saliency,
        shares,
        rank_tests,
        notes,
        failures,
    }
}

/// The whole analysis of one CSV file.
pub fn run_pipeline(cfg: &RunConfig) -> Result<Report> {
    let (art, sample) = estimate(cfg)?;
    let bootstrap = if cfg.bootstrap > 0 {
        info!("bootstrap: {} replicates", cfg.bootstrap);
        Some(bootstrap_fit(&sample, cfg.bootstrap, cfg.seed, &cfg.fit_config(), true)?)
    } else {
        None
    };
    Ok(build_report(&art, bootstrap.as_ref()))
}
