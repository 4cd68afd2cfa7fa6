//! Per-instance explanation report: scores with bootstrap and (optionally)
//! naive intervals.

use serde::Serialize;

use crate::bootstrap::{bootstrap_local, BootstrapConfig, BootstrapDistribution};
use crate::error::Result;
use crate::explain::{Explainer, ImportanceKind, NaiveInterval, ScoreKind};
use crate::neighborhood::QueryPoint;
use crate::polyfit::FitDiagnostics;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FeatureReport {
    pub name: String,
    pub kind: ScoreKind,
    pub score: f64,
    pub bootstrap_interval: Bounds,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub naive_interval: Option<NaiveInterval>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportDiagnostics {
    pub neighborhood_size: usize,
    pub subsample_size: usize,
    pub replicates: usize,
    pub failed_replicates: usize,
    pub log_odds: bool,
    pub fit: FitDiagnostics,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExplanationReport {
    pub features: Vec<FeatureReport>,
    pub diagnostics: ReportDiagnostics,
    pub warnings: Vec<String>,
}

/// Explains `query` and attaches percentile intervals. Naive intervals are
/// added when requested and the scores are gradients; otherwise a warning
/// says why they are missing.
pub fn build_report(
    explainer: &Explainer,
    query: &QueryPoint,
    boot: &BootstrapConfig,
    naive_ci: bool,
) -> Result<(ExplanationReport, BootstrapDistribution)> {
    boot.validate()?;
    let problem = explainer.local_problem(query)?;
    let outcome = bootstrap_local(explainer, &problem, boot)?;
    let mut naive = None;
    let mut extra_warnings = Vec::new();
    if naive_ci {
        if explainer.config().kind == ImportanceKind::Gradient {
            naive = Some(explainer.naive_intervals(&problem, boot.alpha)?);
        } else {
            extra_warnings.push("naive intervals are only available for gradient scores; omitted".to_string());
        }
    }
    let neighborhood_size = problem.len();
    let explanation = explainer.explain_local(problem)?;
    let features = explanation
        .scores
        .iter()
        .zip(&outcome.intervals)
        .enumerate()
        .map(|(j, (s, iv))| FeatureReport {
            name: s.feature.clone(),
            kind: s.kind,
            score: s.value,
            bootstrap_interval: Bounds {
                lower: iv.lower,
                upper: iv.upper,
            },
            naive_interval: naive.as_ref().and_then(|n| n[j]),
        })
        .collect();
    let mut warnings = explanation.warnings;
    warnings.extend(extra_warnings);
    if outcome.distribution.failed_replicates > 0 {
        warnings.push(format!(
            "{} of {} bootstrap replicates failed and were dropped",
            outcome.distribution.failed_replicates, boot.replicates
        ));
    }
    let report = ExplanationReport {
        features,
        diagnostics: ReportDiagnostics {
            neighborhood_size,
            subsample_size: boot.subsample_size(neighborhood_size),
            replicates: boot.replicates,
            failed_replicates: outcome.distribution.failed_replicates,
            log_odds: explainer.uses_log_odds(),
            fit: explanation.surrogate.diagnostics().clone(),
        },
        warnings,
    };
    Ok((report, outcome.distribution))
}
