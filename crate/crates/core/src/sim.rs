//! Synthetic ground truth and the Monte Carlo coverage/width sweep.
//!
//! The ground truth is
//! `S(x1, x2, a, b) = sin(a x1) cos(b x2) tan(1 / (1 + (x1 - x2)^2))`
//! with `x1, x2` in [-5, 5] and categorical `a, b` in {1, 2, 3}. The tan
//! argument stays in (0, 1], so S is finite everywhere on the domain.

use std::io::{Read, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap_local, BootstrapConfig};
use crate::data::{Column, FeatureSchema, FeatureSpec, OutputKind, QueryDataset, Value};
use crate::error::{Error, Result};
use crate::explain::{ExplainConfig, Explainer, ImportanceKind};
use crate::neighborhood::{BalanceMode, QueryPoint};
use crate::rng::{derive_seed, stream_rng};

pub const DOMAIN: (f64, f64) = (-5.0, 5.0);
/// Query points are drawn from the interior so neighborhoods stay two-sided.
pub const QUERY_DOMAIN: (f64, f64) = (-4.5, 4.5);
pub const CATEGORY_LABELS: [&str; 3] = ["1", "2", "3"];

/// Parameter sets with more failed points than this share are marked invalid.
pub const MAX_FAILED_POINT_SHARE: f64 = 0.1;

pub fn ground_truth_value(x1: f64, x2: f64, a: f64, b: f64) -> f64 {
    let u = 1.0 / (1.0 + (x1 - x2).powi(2));
    (a * x1).sin() * (b * x2).cos() * u.tan()
}

/// `(dS/dx1, dS/dx2)`.
pub fn ground_truth_gradient(x1: f64, x2: f64, a: f64, b: f64) -> (f64, f64) {
    let d = x1 - x2;
    let denom = 1.0 + d * d;
    let u = 1.0 / denom;
    let tan_u = u.tan();
    let sec2_u = 1.0 + tan_u * tan_u;
    // du/dx1 = -2d / (1 + d^2)^2 = -du/dx2
    let du = -2.0 * d / (denom * denom);
    let (sa, ca) = (a * x1).sin_cos();
    let (sb, cb) = (b * x2).sin_cos();
    let d1 = a * ca * cb * tan_u + sa * cb * sec2_u * du;
    let d2 = -b * sa * sb * tan_u - sa * cb * sec2_u * du;
    (d1, d2)
}

/// Category index (0, 1, 2) to its numeric value (1, 2, 3).
pub fn category_value(index: usize) -> f64 {
    (index + 1) as f64
}

/// Schema of the synthetic dataset; `a` and `b` have baseline category "1".
pub fn ground_truth_schema() -> FeatureSchema {
    FeatureSchema::new(
        vec![
            FeatureSpec::continuous("x1"),
            FeatureSpec::continuous("x2"),
            FeatureSpec::categorical("a", CATEGORY_LABELS, Some("1")),
            FeatureSpec::categorical("b", CATEGORY_LABELS, Some("1")),
        ],
        OutputKind::Raw,
    )
    .expect("static schema is valid")
}

/// Ground-truth importance scores at a query point in schema order:
/// `dS/dx1`, `dS/dx2`, then `S(x) - S(x with a = 1)` and `S(x) - S(x with b = 1)`.
pub fn ground_truth_scores(query: &QueryPoint) -> [f64; 4] {
    let (x1, x2, a, b) = unpack(query);
    let (g1, g2) = ground_truth_gradient(x1, x2, a, b);
    let s = ground_truth_value(x1, x2, a, b);
    [
        g1,
        g2,
        s - ground_truth_value(x1, x2, 1.0, b),
        s - ground_truth_value(x1, x2, a, 1.0),
    ]
}

fn unpack(query: &QueryPoint) -> (f64, f64, f64, f64) {
    let v = query.values();
    (
        v[0].as_number().unwrap_or(f64::NAN),
        v[1].as_number().unwrap_or(f64::NAN),
        v[2].as_category().map_or(f64::NAN, category_value),
        v[3].as_category().map_or(f64::NAN, category_value),
    )
}

/// Uniform sample of `n` points from the domain labeled with `S`.
pub fn generate_dataset(n: usize, seed: u64) -> Result<QueryDataset> {
    generate_dataset_with(n, seed, ground_truth_value)
}

/// Like [`generate_dataset`] with a user-supplied ground truth. Points where
/// the function is not finite are redrawn (up to 1000 times per row).
pub fn generate_dataset_with<F>(n: usize, seed: u64, truth: F) -> Result<QueryDataset>
where
    F: Fn(f64, f64, f64, f64) -> f64,
{
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = stream_rng(seed, 0);
    let (lo, hi) = DOMAIN;
    let mut x1 = Vec::with_capacity(n);
    let mut x2 = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let mut attempts = 0;
        loop {
            let p = (
                rng.random_range(lo..=hi),
                rng.random_range(lo..=hi),
                rng.random_range(0..3usize),
                rng.random_range(0..3usize),
            );
            let v = truth(p.0, p.1, category_value(p.2), category_value(p.3));
            if v.is_finite() {
                x1.push(p.0);
                x2.push(p.1);
                a.push(p.2);
                b.push(p.3);
                y.push(v);
                break;
            }
            attempts += 1;
            if attempts >= 1000 {
                return Err(Error::Config("ground truth is not finite on the domain".into()));
            }
        }
    }
    QueryDataset::new(
        ground_truth_schema(),
        vec![
            Column::Numeric(x1),
            Column::Numeric(x2),
            Column::Categorical(a),
            Column::Categorical(b),
        ],
        y,
    )
}

/// `count` query points uniform on the interior domain with uniform categories.
pub fn sample_query_points(count: usize, seed: u64) -> Vec<QueryPoint> {
    let schema = ground_truth_schema();
    let mut rng = stream_rng(seed, 1);
    let (lo, hi) = QUERY_DOMAIN;
    (0..count)
        .map(|_| {
            let values = vec![
                Value::Number(rng.random_range(lo..=hi)),
                Value::Number(rng.random_range(lo..=hi)),
                Value::Category(rng.random_range(0..3usize)),
                Value::Category(rng.random_range(0..3usize)),
            ];
            QueryPoint::new(&schema, values).expect("sampled point conforms to schema")
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetFeature {
    #[default]
    X1,
    X2,
}

impl TargetFeature {
    fn index(self) -> usize {
        match self {
            TargetFeature::X1 => 0,
            TargetFeature::X2 => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub degrees: Vec<u32>,
    pub neighborhood_sizes: Vec<usize>,
    pub fractions: Vec<f64>,
    pub n: usize,
    pub points: usize,
    pub replicates: usize,
    pub alpha: f64,
    pub seed: u64,
    pub target: TargetFeature,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            degrees: vec![1, 2, 3, 4],
            neighborhood_sizes: vec![32, 64, 128, 256],
            fractions: vec![0.3, 0.5, 0.7, 0.9],
            n: 2000,
            points: 250,
            replicates: 500,
            alpha: 0.05,
            seed: 0,
            target: TargetFeature::X1,
        }
    }
}

impl SweepGrid {
    pub fn parameter_sets(&self) -> Vec<(u32, usize, f64)> {
        let mut sets = Vec::new();
        for &k in &self.degrees {
            for &m in &self.neighborhood_sizes {
                for &c in &self.fractions {
                    sets.push((k, m, c));
                }
            }
        }
        sets
    }

    fn boot_config(&self, c: f64, seed: u64) -> BootstrapConfig {
        BootstrapConfig {
            replicates: self.replicates,
            fraction: c,
            alpha: self.alpha,
            seed,
            with_replacement: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.degrees.is_empty() || self.neighborhood_sizes.is_empty() || self.fractions.is_empty() {
            return Err(Error::Config("sweep grid lists must be nonempty".into()));
        }
        if self.points == 0 {
            return Err(Error::Config("sweep needs at least one query point".into()));
        }
        if self.degrees.contains(&0) {
            return Err(Error::Config("polynomial degree must be at least 1".into()));
        }
        for &m in &self.neighborhood_sizes {
            if m > self.n {
                return Err(Error::NeighborhoodTooLarge { m, n: self.n });
            }
            for &c in &self.fractions {
                let cfg = self.boot_config(c, 0);
                cfg.validate()?;
                if cfg.subsample_size(m) < 2 {
                    return Err(Error::Config(format!("floor({c} * {m}) is below 2")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Bootstrap,
    Naive,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Bootstrap => "bootstrap",
            Method::Naive => "naive",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRecord {
    pub method: Method,
    pub k: u32,
    pub m: usize,
    pub c: f64,
    pub avg_width: f64,
    pub coverage: f64,
    pub failed_points: usize,
    pub valid: bool,
}

/// An (average width, coverage) pair that can be Pareto-filtered.
pub trait Tradeoff {
    fn avg_width(&self) -> f64;
    fn coverage(&self) -> f64;
}

impl Tradeoff for SweepRecord {
    fn avg_width(&self) -> f64 {
        self.avg_width
    }
    fn coverage(&self) -> f64 {
        self.coverage
    }
}

/// Coverage rate and mean width of a set of intervals against known truths.
/// `None` entries are failed points: they count against coverage and are
/// left out of the width average.
pub fn summarize_coverage(intervals: &[Option<(f64, f64)>], truths: &[f64]) -> (f64, f64, usize) {
    let mut covered = 0usize;
    let mut width = 0.0;
    let mut ok = 0usize;
    for (iv, &t) in intervals.iter().zip(truths) {
        if let Some((lo, hi)) = *iv {
            ok += 1;
            width += hi - lo;
            if lo <= t && t <= hi {
                covered += 1;
            }
        }
    }
    let avg_width = if ok > 0 { width / ok as f64 } else { f64::NAN };
    let coverage = covered as f64 / intervals.len().max(1) as f64;
    (avg_width, coverage, intervals.len() - ok)
}

/// Bootstrap and naive `(lower, upper)` at one query point; `None` on failure.
type PointIntervals = (Option<(f64, f64)>, Option<(f64, f64)>);

/// Runs the full grid. Query points are drawn once and shared by every
/// parameter set. Records come back ordered by (method, k, m, c).
pub fn run_sweep(grid: &SweepGrid) -> Result<Vec<SweepRecord>> {
    grid.validate()?;
    let dataset = generate_dataset(grid.n, grid.seed)?;
    let queries = sample_query_points(grid.points, derive_seed(grid.seed, &[1]));
    let target = grid.target.index();
    let truths: Vec<f64> = queries.iter().map(|q| ground_truth_scores(q)[target]).collect();
    let sets = grid.parameter_sets();

    let mut explainers = Vec::with_capacity(sets.len());
    for &(k, m, _) in &sets {
        let cfg = ExplainConfig::new(k, m)
            .with_kind(ImportanceKind::Gradient)
            .weighted(true)
            .with_balance(BalanceMode::Strict);
        explainers.push(Explainer::new(&dataset, cfg)?);
    }

    let units: Vec<(usize, usize)> = (0..sets.len())
        .flat_map(|s| (0..queries.len()).map(move |i| (s, i)))
        .collect();
    let results: Vec<PointIntervals> = units
        .par_iter()
        .map(|&(s, i)| {
            let explainer = &explainers[s];
            let Ok(problem) = explainer.local_problem(&queries[i]) else {
                return (None, None);
            };
            let boot_cfg = grid.boot_config(sets[s].2, derive_seed(grid.seed, &[2, s as u64, i as u64]));
            let boot = bootstrap_local(explainer, &problem, &boot_cfg)
                .ok()
                .map(|o| (o.intervals[target].lower, o.intervals[target].upper));
            let naive = explainer
                .naive_intervals(&problem, grid.alpha)
                .ok()
                .and_then(|v| v[target])
                .map(|iv| (iv.lower, iv.upper));
            (boot, naive)
        })
        .collect();

    let p = queries.len();
    let mut records = Vec::with_capacity(2 * sets.len());
    for method in [Method::Bootstrap, Method::Naive] {
        for (s, &(k, m, c)) in sets.iter().enumerate() {
            let intervals: Vec<Option<(f64, f64)>> = results[s * p..(s + 1) * p]
                .iter()
                .map(|r| if method == Method::Bootstrap { r.0 } else { r.1 })
                .collect();
            let (avg_width, coverage, failed_points) = summarize_coverage(&intervals, &truths);
            records.push(SweepRecord {
                method,
                k,
                m,
                c,
                avg_width,
                coverage,
                failed_points,
                valid: failed_points as f64 <= MAX_FAILED_POINT_SHARE * p as f64,
            });
        }
    }
    records.sort_by(|a, b| {
        a.method
            .cmp(&b.method)
            .then(a.k.cmp(&b.k))
            .then(a.m.cmp(&b.m))
            .then(a.c.total_cmp(&b.c))
    });
    Ok(records)
}

/// Records not dominated by any other (another record with coverage >= and
/// width <=, at least one strictly).
pub fn pareto_frontier<T: Tradeoff + Clone>(records: &[T]) -> Vec<T> {
    records
        .iter()
        .filter(|r| {
            !records.iter().any(|o| {
                o.coverage() >= r.coverage()
                    && o.avg_width() <= r.avg_width()
                    && (o.coverage() > r.coverage() || o.avg_width() < r.avg_width())
            })
        })
        .cloned()
        .collect()
}

/// Frontier of the valid records of one method.
pub fn frontier_for(records: &[SweepRecord], method: Method) -> Vec<SweepRecord> {
    let subset: Vec<SweepRecord> = records
        .iter()
        .filter(|r| r.method == method && r.valid)
        .cloned()
        .collect();
    pareto_frontier(&subset)
}

/// Externally computed (width, coverage) result, e.g. from another method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExternalRecord {
    pub method: String,
    pub avg_width: f64,
    pub coverage: f64,
}

impl Tradeoff for ExternalRecord {
    fn avg_width(&self) -> f64 {
        self.avg_width
    }
    fn coverage(&self) -> f64 {
        self.coverage
    }
}

/// Reads a CSV with columns `method,avg_width,coverage`.
pub fn read_external_records<R: Read>(source: R) -> Result<Vec<ExternalRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let mut out = Vec::new();
    for rec in reader.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

const SWEEP_HEADER: [&str; 8] = ["method", "k", "m", "c", "avg_width", "coverage", "failed_points", "valid"];

fn write_record<W: Write>(w: &mut csv::Writer<W>, r: &SweepRecord) -> Result<()> {
    w.write_record([
        r.method.label().to_string(),
        r.k.to_string(),
        r.m.to_string(),
        r.c.to_string(),
        r.avg_width.to_string(),
        r.coverage.to_string(),
        r.failed_points.to_string(),
        r.valid.to_string(),
    ])?;
    Ok(())
}

pub fn write_sweep_csv<W: Write>(records: &[SweepRecord], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(SWEEP_HEADER)?;
    for r in records {
        write_record(&mut w, r)?;
    }
    w.flush()?;
    Ok(())
}

/// Frontier of each method, followed by the external rows unchanged (with
/// empty k, m, c and failure columns).
pub fn write_frontier_csv<W: Write>(
    records: &[SweepRecord],
    external: &[ExternalRecord],
    sink: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(SWEEP_HEADER)?;
    for method in [Method::Bootstrap, Method::Naive] {
        for r in frontier_for(records, method) {
            write_record(&mut w, &r)?;
        }
    }
    for e in external {
        w.write_record([
            e.method.clone(),
            String::new(),
            String::new(),
            String::new(),
            e.avg_width.to_string(),
            e.coverage.to_string(),
            String::new(),
            String::new(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
