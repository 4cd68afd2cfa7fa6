//! Neighborhood selection around a query point and proximity weights.
//!
//! Rows are ordered by the Euclidean distance between their numeric
//! (continuous/ordinal) features and those of the query; categorical features
//! only enter through class balancing. Ties are broken by row index.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::data::{header_lookup, Column, FeatureSchema, QueryDataset, Value};
use crate::error::{Error, Result};

/// A point in schema space whose prediction is being explained.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryPoint {
    values: Vec<Value>,
}

impl QueryPoint {
    pub fn new(schema: &FeatureSchema, values: Vec<Value>) -> Result<Self> {
        if values.len() != schema.len() {
            return Err(Error::Query(format!(
                "expected {} values, got {}",
                schema.len(),
                values.len()
            )));
        }
        for (spec, v) in schema.features.iter().zip(&values) {
            match (spec.kind.is_numeric(), *v) {
                (true, Value::Number(x)) if x.is_finite() => {}
                (false, Value::Category(c)) if c < spec.categories.len() => {}
                _ => {
                    return Err(Error::Query(format!(
                        "invalid value {v:?} for feature `{}`",
                        spec.name
                    )))
                }
            }
        }
        Ok(QueryPoint { values })
    }

    pub fn from_row(dataset: &QueryDataset, row: usize) -> Result<Self> {
        if row >= dataset.len() {
            return Err(Error::Query(format!(
                "row {row} out of range for dataset of {} rows",
                dataset.len()
            )));
        }
        Ok(QueryPoint {
            values: dataset.row(row),
        })
    }

    /// Parses `{"feature": value, ...}`. Numeric features accept numbers (or
    /// numeric strings); categorical features accept the category label, with
    /// bare numbers matched against labels by their textual form.
    pub fn from_json(schema: &FeatureSchema, json: &serde_json::Value) -> Result<Self> {
        let obj = json
            .as_object()
            .ok_or_else(|| Error::Query("query must be a JSON object".into()))?;
        if let Some(unknown) = obj.keys().find(|k| schema.feature_index(k).is_none()) {
            return Err(Error::Query(format!("unknown feature `{unknown}`")));
        }
        let mut values = Vec::with_capacity(schema.len());
        for spec in &schema.features {
            let v = obj
                .get(&spec.name)
                .ok_or_else(|| Error::Query(format!("missing feature `{}`", spec.name)))?;
            let text = match v {
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Number(n) => n.to_string(),
                other => {
                    return Err(Error::Query(format!(
                        "feature `{}`: unsupported value {other}",
                        spec.name
                    )))
                }
            };
            values.push(parse_cell(spec, &text).map_err(Error::Query)?);
        }
        QueryPoint::new(schema, values)
    }

    pub fn values(&self) -> &[Value] {
        &self.values
    }

    pub fn with_value(&self, feature: usize, value: Value) -> QueryPoint {
        let mut values = self.values.clone();
        values[feature] = value;
        QueryPoint { values }
    }
}

fn parse_cell(spec: &crate::data::FeatureSpec, text: &str) -> std::result::Result<Value, String> {
    if spec.kind.is_numeric() {
        text.trim()
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .map(Value::Number)
            .ok_or_else(|| format!("feature `{}`: `{text}` is not a finite number", spec.name))
    } else {
        spec.category_index(text.trim())
            .map(Value::Category)
            .ok_or_else(|| format!("feature `{}`: unknown category `{text}`", spec.name))
    }
}

/// Reads query instances from a CSV with one column per schema feature.
/// Extra columns (such as a model-output column) are ignored.
pub fn load_query_points<R: Read>(source: R, schema: &FeatureSchema) -> Result<Vec<QueryPoint>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let header = reader.headers()?.clone();
    let lookup = header_lookup(&header);
    let mut positions = Vec::with_capacity(schema.len());
    for spec in &schema.features {
        positions.push(*lookup.get(spec.name.as_str()).ok_or_else(|| Error::MissingColumn {
            column: spec.name.clone(),
        })?);
    }
    let mut points = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let mut values = Vec::with_capacity(schema.len());
        for (spec, &p) in schema.features.iter().zip(&positions) {
            let text = record.get(p).unwrap_or("");
            values.push(parse_cell(spec, text).map_err(|message| Error::Cell {
                row: i + 1,
                column: spec.name.clone(),
                message,
            })?);
        }
        points.push(QueryPoint::new(schema, values)?);
    }
    Ok(points)
}

/// How categorical class balance is enforced during selection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceMode {
    /// Plain m nearest rows.
    Off,
    /// Balanced selection; error if it cannot be completed.
    #[default]
    Strict,
    /// Balanced selection, topped up with the nearest remaining rows when the
    /// balanced scan runs out of candidates.
    BestEffort,
}

/// Proximity weight formula.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightFormula {
    /// `1 - (d - min) / (max - min)`.
    #[default]
    MinMax,
    /// `(1 - (d - min)) / (max - min)`; can go negative, kept for comparison runs.
    Unnormalized,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Neighborhood {
    /// Row indices into the dataset, ordered by (distance, index).
    pub members: Vec<usize>,
    pub distances: Vec<f64>,
    pub weights: Option<Vec<f64>>,
}

impl Neighborhood {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn with_weights(mut self, formula: WeightFormula) -> Self {
        self.weights = Some(compute_weights_with(&self.distances, formula));
        self
    }
}

/// Euclidean distance over the numeric features of every row.
pub fn distances_to(dataset: &QueryDataset, query: &QueryPoint) -> Vec<f64> {
    let mut sq = vec![0.0; dataset.len()];
    for (col, q) in dataset.columns().iter().zip(query.values()) {
        if let (Column::Numeric(v), Value::Number(qx)) = (col, *q) {
            for (acc, x) in sq.iter_mut().zip(v) {
                let d = x - qx;
                *acc += d * d;
            }
        }
    }
    sq.into_iter().map(f64::sqrt).collect()
}

/// Selects `m` rows around `query`.
///
/// Distances are taken on the numeric columns as stored in `dataset`, so pass
/// standardized data to get standardized distances.
///
/// With balancing on, every categorical feature whose query category differs
/// from the baseline is balanced: a row is accepted only if, for each such
/// feature, it holds the baseline or the query category and that class has
/// fewer than `ceil(m / 2)` members so far. Rows in neither class are skipped.
pub fn select_neighborhood(
    dataset: &QueryDataset,
    query: &QueryPoint,
    m: usize,
    balance: BalanceMode,
) -> Result<Neighborhood> {
    let n = dataset.len();
    if m == 0 {
        return Err(Error::Config("neighborhood size must be positive".into()));
    }
    if m > n {
        return Err(Error::NeighborhoodTooLarge { m, n });
    }
    if query.values().len() != dataset.schema().len() {
        return Err(Error::Dimension {
            expected: dataset.schema().len(),
            actual: query.values().len(),
        });
    }
    let dist = distances_to(dataset, query);
    let by_distance = |a: &usize, b: &usize| dist[*a].total_cmp(&dist[*b]).then(a.cmp(b));

    let balanced = balanced_features(dataset, query);
    if balance == BalanceMode::Off || balanced.is_empty() {
        let mut idx: Vec<usize> = (0..n).collect();
        if m < n {
            idx.select_nth_unstable_by(m - 1, by_distance);
            idx.truncate(m);
        }
        idx.sort_unstable_by(by_distance);
        return Ok(finish(idx, &dist));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(by_distance);

    let quota = m.div_ceil(2);
    // counts[f] = [baseline, query class]
    let mut counts = vec![[0usize; 2]; balanced.len()];
    let mut chosen = Vec::with_capacity(m);
    let mut taken = vec![false; n];
    for &row in &order {
        if chosen.len() == m {
            break;
        }
        let mut slots = Vec::with_capacity(balanced.len());
        let accept = balanced.iter().all(|b| {
            let c = b.codes[row];
            let slot = if c == b.baseline {
                0
            } else if c == b.query {
                1
            } else {
                return false;
            };
            slots.push(slot);
            counts[slots.len() - 1][slot] < quota
        });
        if accept {
            for (f, &slot) in slots.iter().enumerate() {
                counts[f][slot] += 1;
            }
            taken[row] = true;
            chosen.push(row);
        }
    }

    if chosen.len() < m {
        match balance {
            BalanceMode::Strict => return Err(infeasible(dataset, &balanced, m, chosen.len())),
            _ => {
                for &row in &order {
                    if chosen.len() == m {
                        break;
                    }
                    if !taken[row] {
                        chosen.push(row);
                    }
                }
                chosen.sort_unstable_by(by_distance);
            }
        }
    }
    Ok(finish(chosen, &dist))
}

struct BalancedFeature<'a> {
    feature: usize,
    codes: &'a [usize],
    baseline: usize,
    query: usize,
}

fn balanced_features<'a>(dataset: &'a QueryDataset, query: &QueryPoint) -> Vec<BalancedFeature<'a>> {
    let schema = dataset.schema();
    dataset
        .columns()
        .iter()
        .enumerate()
        .filter_map(|(j, col)| {
            let Column::Categorical(codes) = col else {
                return None;
            };
            let baseline = schema.features[j].baseline_index()?;
            let q = query.values()[j].as_category()?;
            (q != baseline).then_some(BalancedFeature {
                feature: j,
                codes,
                baseline,
                query: q,
            })
        })
        .collect()
}

fn infeasible(dataset: &QueryDataset, balanced: &[BalancedFeature], m: usize, got: usize) -> Error {
    let need = m / 2;
    let schema = dataset.schema();
    for b in balanced {
        let base = b.codes.iter().filter(|&&c| c == b.baseline).count();
        let query = b.codes.iter().filter(|&&c| c == b.query).count();
        if base < need || query < need {
            return Error::BalanceInfeasible {
                feature: schema.features[b.feature].name.clone(),
                message: format!(
                    "need {need} rows per class for m = {m}; baseline class has {base}, query class has {query}"
                ),
            };
        }
    }
    Error::BalanceInfeasible {
        feature: schema.features[balanced[0].feature].name.clone(),
        message: format!("joint class quotas only admit {got} of {m} rows"),
    }
}

fn finish(members: Vec<usize>, dist: &[f64]) -> Neighborhood {
    let distances = members.iter().map(|&i| dist[i]).collect();
    Neighborhood {
        members,
        distances,
        weights: None,
    }
}

/// Min-max proximity weights: nearest row gets 1, farthest gets 0. If all
/// distances are equal every weight is 1.
pub fn compute_weights(distances: &[f64]) -> Vec<f64> {
    compute_weights_with(distances, WeightFormula::MinMax)
}

pub fn compute_weights_with(distances: &[f64], formula: WeightFormula) -> Vec<f64> {
    let min = distances.iter().copied().fold(f64::INFINITY, f64::min);
    let max = distances.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if range.is_nan() || range <= 0.0 {
        return vec![1.0; distances.len()];
    }
    distances
        .iter()
        .map(|&d| match formula {
            WeightFormula::MinMax => 1.0 - (d - min) / range,
            WeightFormula::Unnormalized => (1.0 - (d - min)) / range,
        })
        .collect()
}
