//! Percentile intervals from repeated sub-neighborhood fits.
//!
//! Each replicate draws `floor(c * m)` members of the neighborhood uniformly
//! without replacement, refits the surrogate and records every feature's
//! score. Replicate `i` uses its own random stream keyed by `(seed, i)`.

use std::io::Write;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::{Explainer, LocalProblem};
use crate::neighborhood::QueryPoint;
use crate::rng::stream_rng;

/// Largest tolerated share of failed replicates.
pub const MAX_FAILED_SHARE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    /// Sub-neighborhood proportion `c` in (0, 1).
    pub fraction: f64,
    pub alpha: f64,
    pub seed: u64,
    /// Classical resampling with replacement instead of subsampling.
    pub with_replacement: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicates: 1000,
            fraction: 0.9,
            alpha: 0.05,
            seed: 0,
            with_replacement: false,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates < 2 {
            return Err(Error::Config("at least 2 bootstrap replicates are required".into()));
        }
        if !(self.fraction > 0.0 && self.fraction < 1.0) {
            return Err(Error::Config(format!(
                "bootstrap fraction must lie in (0, 1), got {}",
                self.fraction
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }

    /// `floor(c * m)`, robust to products like `0.57 * 100 = 56.999...`.
    pub fn subsample_size(&self, m: usize) -> usize {
        (self.fraction * m as f64 + 1e-9).floor() as usize
    }
}

/// Replicate scores, one row per successful replicate in replicate order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BootstrapDistribution {
    pub features: Vec<String>,
    pub scores: Vec<Vec<f64>>,
    pub replicates: usize,
    pub failed_replicates: usize,
}

impl BootstrapDistribution {
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.scores.iter().map(|r| r[j]).collect()
    }

    /// Percentile intervals at significance level `alpha`.
    pub fn intervals(&self, alpha: f64) -> Result<Vec<UncertaintyInterval>> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        self.features
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let mut col = self.column(j);
                col.sort_unstable_by(f64::total_cmp);
                Ok(UncertaintyInterval {
                    feature: name.clone(),
                    lower: percentile_sorted(&col, 100.0 * alpha / 2.0)?,
                    upper: percentile_sorted(&col, 100.0 * (1.0 - alpha / 2.0))?,
                    alpha,
                })
            })
            .collect()
    }

    /// Writes the score matrix as CSV, one named column per feature.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(&self.features)?;
        for row in &self.scores {
            w.write_record(row.iter().map(|x| x.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UncertaintyInterval {
    pub feature: String,
    pub lower: f64,
    pub upper: f64,
    pub alpha: f64,
}

impl UncertaintyInterval {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

#[derive(Clone, Debug)]
pub struct BootstrapOutcome {
    pub intervals: Vec<UncertaintyInterval>,
    pub distribution: BootstrapDistribution,
}

/// Runs the replicates on an already built local problem.
pub fn run_replicates(
    problem: &LocalProblem,
    features: &[String],
    weighted: bool,
    boot: &BootstrapConfig,
) -> Result<BootstrapDistribution> {
    boot.validate()?;
    let m = problem.len();
    let sub = boot.subsample_size(m);
    if sub < 2 {
        return Err(Error::Config(format!(
            "sub-neighborhood size floor({} * {m}) = {sub} is too small",
            boot.fraction
        )));
    }
    let rows: Vec<Option<Vec<f64>>> = (0..boot.replicates)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(boot.seed, i as u64);
            let subset: Vec<usize> = if boot.with_replacement {
                (0..sub).map(|_| rng.random_range(0..m)).collect()
            } else {
                index::sample(&mut rng, m, sub).into_vec()
            };
            let fit = problem.fit(Some(&subset), weighted).ok()?;
            let scores = problem.scores(&fit.coefficients);
            scores.iter().all(|s| s.is_finite()).then_some(scores)
        })
        .collect();
    let failed = rows.iter().filter(|r| r.is_none()).count();
    if failed as f64 > MAX_FAILED_SHARE * boot.replicates as f64 {
        return Err(Error::TooManyFailedReplicates {
            failed,
            total: boot.replicates,
        });
    }
    Ok(BootstrapDistribution {
        features: features.to_vec(),
        scores: rows.into_iter().flatten().collect(),
        replicates: boot.replicates,
        failed_replicates: failed,
    })
}

/// Bootstrap uncertainty intervals for every feature at `query`.
pub fn bootstrap_intervals(
    explainer: &Explainer,
    query: &QueryPoint,
    boot: &BootstrapConfig,
) -> Result<BootstrapOutcome> {
    boot.validate()?;
    let problem = explainer.local_problem(query)?;
    bootstrap_local(explainer, &problem, boot)
}

pub fn bootstrap_local(
    explainer: &Explainer,
    problem: &LocalProblem,
    boot: &BootstrapConfig,
) -> Result<BootstrapOutcome> {
    let distribution = run_replicates(
        problem,
        &explainer.feature_names(),
        explainer.config().weighted,
        boot,
    )?;
    let intervals = distribution.intervals(boot.alpha)?;
    Ok(BootstrapOutcome {
        intervals,
        distribution,
    })
}

/// Percentile `p` in [0, 100] by linear interpolation between closest ranks.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    percentile_sorted(&sorted, p)
}

/// [`percentile`] for data already sorted ascending.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::EmptySample);
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::Config(format!("percentile must lie in [0, 100], got {p}")));
    }
    let h = (sorted.len() - 1) as f64 * p / 100.0;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    Ok(match sorted.get(lo + 1) {
        Some(&next) if frac > 0.0 => sorted[lo] + frac * (next - sorted[lo]),
        _ => sorted[lo],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn percentile_examples() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&v, 50.0).unwrap(), 3.0);
        assert!((percentile(&v, 20.0).unwrap() - 1.8).abs() < 1e-12);
        assert_eq!(percentile(&[7.0], 13.0).unwrap(), 7.0);
        assert!(matches!(percentile(&[], 50.0), Err(Error::EmptySample)));
        assert!(percentile(&v, 101.0).is_err());
    }

    #[test]
    fn five_replicates_at_alpha_point_four() {
        let dist = BootstrapDistribution {
            features: vec!["x".into()],
            scores: [3.0, 1.0, 5.0, 2.0, 4.0].iter().map(|&s| vec![s]).collect(),
            replicates: 5,
            failed_replicates: 0,
        };
        let iv = &dist.intervals(0.4).unwrap()[0];
        assert!((iv.lower - 1.8).abs() < 1e-12);
        assert!((iv.upper - 4.2).abs() < 1e-12);
    }

    #[test]
    fn subsample_size_floors() {
        let cfg = |c| BootstrapConfig {
            fraction: c,
            ..Default::default()
        };
        assert_eq!(cfg(0.9).subsample_size(66), 59);
        assert_eq!(cfg(0.667).subsample_size(150), 100);
        assert_eq!(cfg(0.57).subsample_size(100), 57);
        assert_eq!(cfg(0.3).subsample_size(32), 9);
    }

    #[test]
    fn config_validation() {
        let ok = BootstrapConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            BootstrapConfig { replicates: 1, ..ok.clone() },
            BootstrapConfig { fraction: 1.0, ..ok.clone() },
            BootstrapConfig { fraction: 0.0, ..ok.clone() },
            BootstrapConfig { alpha: 0.0, ..ok.clone() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    proptest! {
        #[test]
        fn endpoints_are_min_and_max(v in prop::collection::vec(-1e3f64..1e3, 1..50)) {
            let min = v.iter().copied().fold(f64::INFINITY, f64::min);
            let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(percentile(&v, 0.0).unwrap(), min);
            prop_assert_eq!(percentile(&v, 100.0).unwrap(), max);
        }

        #[test]
        fn percentile_monotone_in_p(v in prop::collection::vec(-1e3f64..1e3, 1..50),
                                    a in 0.0f64..100.0, b in 0.0f64..100.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(percentile(&v, lo).unwrap() <= percentile(&v, hi).unwrap());
        }
    }
}
