//! Dataset ingestion, feature schema and the preprocessing transforms
//! (standardization, one-hot encoding, log-odds) applied before local regression.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Name of the model-output column in dataset CSV files.
pub const DEFAULT_OUTPUT_COLUMN: &str = "f";

/// Clamp applied to probabilities before the log-odds transform.
pub const LOG_ODDS_EPS: f64 = 1e-6;

/// Sample standard deviations below this are treated as a constant column.
pub const CONSTANT_COLUMN_TOL: f64 = 1e-12;

/// Default perturbation step, as a multiple of the feature's sample stddev.
pub const DEFAULT_DELTA_SCALE: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Continuous,
    Ordinal,
    Categorical,
}

impl FeatureKind {
    /// Continuous and ordinal features are both treated as real-valued.
    pub fn is_numeric(self) -> bool {
        !matches!(self, FeatureKind::Categorical)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    #[default]
    Raw,
    Probability,
}

/// One feature of the model input.
///
/// `delta` and `baseline` may be left out of a schema file; they are filled
/// in from the data when a [`QueryDataset`] is built (half the sample stddev
/// and the most frequent category, respectively).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<String>,
}

impl FeatureSpec {
    pub fn continuous(name: impl Into<String>) -> Self {
        FeatureSpec {
            name: name.into(),
            kind: FeatureKind::Continuous,
            delta: None,
            categories: Vec::new(),
            baseline: None,
        }
    }

    pub fn ordinal(name: impl Into<String>) -> Self {
        FeatureSpec {
            kind: FeatureKind::Ordinal,
            ..FeatureSpec::continuous(name)
        }
    }

    pub fn categorical<S: Into<String>>(
        name: impl Into<String>,
        categories: impl IntoIterator<Item = S>,
        baseline: Option<&str>,
    ) -> Self {
        FeatureSpec {
            name: name.into(),
            kind: FeatureKind::Categorical,
            delta: None,
            categories: categories.into_iter().map(Into::into).collect(),
            baseline: baseline.map(str::to_owned),
        }
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = Some(delta);
        self
    }

    pub fn category_index(&self, label: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == label)
    }

    /// Index of the baseline category, once resolved.
    pub fn baseline_index(&self) -> Option<usize> {
        self.baseline.as_deref().and_then(|b| self.category_index(b))
    }

    fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Schema("feature names must be nonempty".into()));
        }
        match self.kind {
            FeatureKind::Categorical => {
                if self.delta.is_some() {
                    return Err(Error::Schema(format!(
                        "categorical feature `{}` must not declare a delta",
                        self.name
                    )));
                }
                if self.categories.len() < 2 {
                    return Err(Error::Schema(format!(
                        "categorical feature `{}` needs at least 2 categories",
                        self.name
                    )));
                }
                let distinct: HashSet<&str> = self.categories.iter().map(String::as_str).collect();
                if distinct.len() != self.categories.len() {
                    return Err(Error::Schema(format!(
                        "categorical feature `{}` has duplicate categories",
                        self.name
                    )));
                }
                if let Some(b) = &self.baseline {
                    if self.category_index(b).is_none() {
                        return Err(Error::Schema(format!(
                            "baseline `{b}` of feature `{}` is not a declared category",
                            self.name
                        )));
                    }
                }
            }
            _ => {
                if let Some(d) = self.delta {
                    if !(d.is_finite() && d > 0.0) {
                        return Err(Error::Schema(format!(
                            "feature `{}` has non-positive delta {d}",
                            self.name
                        )));
                    }
                }
                if !self.categories.is_empty() || self.baseline.is_some() {
                    return Err(Error::Schema(format!(
                        "numeric feature `{}` must not declare categories or a baseline",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSchema {
    pub features: Vec<FeatureSpec>,
    #[serde(default)]
    pub output_kind: OutputKind,
}

impl FeatureSchema {
    pub fn new(features: Vec<FeatureSpec>, output_kind: OutputKind) -> Result<Self> {
        let schema = FeatureSchema {
            features,
            output_kind,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let schema: FeatureSchema = serde_json::from_str(text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::Schema("schema declares no features".into()));
        }
        let mut seen = HashSet::new();
        for f in &self.features {
            f.validate()?;
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Schema(format!("duplicate feature name `{}`", f.name)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }
}

/// A single cell of a dataset row or query point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Value {
    Number(f64),
    /// Index into the feature's declared categories.
    Category(usize),
}

impl Value {
    pub fn as_number(self) -> Option<f64> {
        match self {
            Value::Number(x) => Some(x),
            Value::Category(_) => None,
        }
    }

    pub fn as_category(self) -> Option<usize> {
        match self {
            Value::Category(c) => Some(c),
            Value::Number(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Column {
    Numeric(Vec<f64>),
    Categorical(Vec<usize>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, row: usize) -> Value {
        match self {
            Column::Numeric(v) => Value::Number(v[row]),
            Column::Categorical(v) => Value::Category(v[row]),
        }
    }
}

/// Immutable table of model inputs and the model's outputs on them.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryDataset {
    schema: FeatureSchema,
    columns: Vec<Column>,
    outputs: Vec<f64>,
}

impl QueryDataset {
    /// Validates the table and fills in defaulted deltas and baselines.
    pub fn new(mut schema: FeatureSchema, columns: Vec<Column>, outputs: Vec<f64>) -> Result<Self> {
        schema.validate()?;
        if outputs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if columns.len() != schema.len() {
            return Err(Error::Dimension {
                expected: schema.len(),
                actual: columns.len(),
            });
        }
        for (j, (spec, col)) in schema.features.iter().zip(&columns).enumerate() {
            if col.len() != outputs.len() {
                return Err(Error::Dimension {
                    expected: outputs.len(),
                    actual: col.len(),
                });
            }
            match (spec.kind.is_numeric(), col) {
                (true, Column::Numeric(v)) => {
                    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                        return Err(cell_error(i, &spec.name, "non-finite value"));
                    }
                }
                (false, Column::Categorical(v)) => {
                    if let Some(i) = v.iter().position(|&c| c >= spec.categories.len()) {
                        return Err(cell_error(i, &spec.name, "category index out of range"));
                    }
                }
                _ => {
                    return Err(Error::Schema(format!(
                        "column {j} does not match the kind of feature `{}`",
                        spec.name
                    )))
                }
            }
        }
        for (i, &y) in outputs.iter().enumerate() {
            if !y.is_finite() {
                return Err(cell_error(i, DEFAULT_OUTPUT_COLUMN, "non-finite output"));
            }
            if schema.output_kind == OutputKind::Probability && !(0.0..=1.0).contains(&y) {
                return Err(cell_error(i, DEFAULT_OUTPUT_COLUMN, "probability outside [0, 1]"));
            }
        }
        resolve_defaults(&mut schema, &columns);
        Ok(QueryDataset {
            schema,
            columns,
            outputs,
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, j: usize) -> &Column {
        &self.columns[j]
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn row(&self, i: usize) -> Vec<Value> {
        self.columns.iter().map(|c| c.value(i)).collect()
    }

    /// Copy of the dataset restricted to the given rows, in that order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<QueryDataset> {
        let columns = self
            .columns
            .iter()
            .map(|c| match c {
                Column::Numeric(v) => Column::Numeric(rows.iter().map(|&i| v[i]).collect()),
                Column::Categorical(v) => Column::Categorical(rows.iter().map(|&i| v[i]).collect()),
            })
            .collect();
        let outputs = rows.iter().map(|&i| self.outputs[i]).collect();
        QueryDataset::new(self.schema.clone(), columns, outputs)
    }
}

fn cell_error(row: usize, column: &str, message: impl Into<String>) -> Error {
    Error::Cell {
        row: row + 1,
        column: column.to_owned(),
        message: message.into(),
    }
}

fn resolve_defaults(schema: &mut FeatureSchema, columns: &[Column]) {
    for (spec, col) in schema.features.iter_mut().zip(columns) {
        match col {
            Column::Numeric(v) if spec.delta.is_none() => {
                let (_, sd) = mean_and_sample_stddev(v);
                let sd = if sd < CONSTANT_COLUMN_TOL { 1.0 } else { sd };
                spec.delta = Some(DEFAULT_DELTA_SCALE * sd);
            }
            Column::Categorical(v) if spec.baseline.is_none() => {
                let mut counts = vec![0usize; spec.categories.len()];
                for &c in v {
                    counts[c] += 1;
                }
                // first category wins ties
                let best = counts
                    .iter()
                    .enumerate()
                    .fold(0, |best, (i, &n)| if n > counts[best] { i } else { best });
                spec.baseline = Some(spec.categories[best].clone());
            }
            _ => {}
        }
    }
}

/// Reads a comma-delimited CSV with a header row. Columns are matched to the
/// schema by name; the model output is read from `output_column`.
pub fn load_dataset_with<R: Read>(
    source: R,
    schema: FeatureSchema,
    output_column: &str,
) -> Result<QueryDataset> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let header = reader.headers()?.clone();
    let position = |name: &str| header.iter().position(|h| h == name);

    let mut feature_cols = Vec::with_capacity(schema.len());
    for spec in &schema.features {
        feature_cols.push(position(&spec.name).ok_or_else(|| Error::MissingColumn {
            column: spec.name.clone(),
        })?);
    }
    let output_col = position(output_column).ok_or_else(|| Error::MissingColumn {
        column: output_column.to_owned(),
    })?;

    let mut columns: Vec<Column> = schema
        .features
        .iter()
        .map(|f| {
            if f.kind.is_numeric() {
                Column::Numeric(Vec::new())
            } else {
                Column::Categorical(Vec::new())
            }
        })
        .collect();
    let mut outputs = Vec::new();

    for (i, record) in reader.records().enumerate() {
        let record = record?;
        for ((spec, &src), col) in schema.features.iter().zip(&feature_cols).zip(columns.iter_mut()) {
            let raw = record.get(src).unwrap_or("");
            match col {
                Column::Numeric(v) => v.push(parse_number(raw).ok_or_else(|| {
                    cell_error(i, &spec.name, format!("`{raw}` is not a finite number"))
                })?),
                Column::Categorical(v) => v.push(spec.category_index(raw).ok_or_else(|| {
                    cell_error(i, &spec.name, format!("unknown category `{raw}`"))
                })?),
            }
        }
        let raw = record.get(output_col).unwrap_or("");
        let y = parse_number(raw)
            .ok_or_else(|| cell_error(i, output_column, format!("`{raw}` is not a finite number")))?;
        if schema.output_kind == OutputKind::Probability && !(0.0..=1.0).contains(&y) {
            return Err(cell_error(i, output_column, format!("probability {y} outside [0, 1]")));
        }
        outputs.push(y);
    }
    QueryDataset::new(schema, columns, outputs)
}

pub fn load_dataset<R: Read>(source: R, schema: FeatureSchema) -> Result<QueryDataset> {
    load_dataset_with(source, schema, DEFAULT_OUTPUT_COLUMN)
}

fn parse_number(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|x| x.is_finite())
}

/// Writes the dataset in the format read by [`load_dataset`].
pub fn write_dataset<W: Write>(dataset: &QueryDataset, sink: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    let schema = dataset.schema();
    let mut header: Vec<&str> = schema.features.iter().map(|f| f.name.as_str()).collect();
    header.push(DEFAULT_OUTPUT_COLUMN);
    writer.write_record(&header)?;
    for i in 0..dataset.len() {
        let mut record: Vec<String> = Vec::with_capacity(header.len());
        for (spec, col) in schema.features.iter().zip(dataset.columns()) {
            record.push(match col.value(i) {
                Value::Number(x) => x.to_string(),
                Value::Category(c) => spec.categories[c].clone(),
            });
        }
        record.push(dataset.outputs()[i].to_string());
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Mean and sample (n - 1) standard deviation; the stddev of a single value is 0.
pub fn mean_and_sample_stddev(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|x| (x - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub stddev: f64,
}

/// Per-feature location and scale; `None` for categorical features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub columns: Vec<Option<ColumnStats>>,
}

impl StandardizationStats {
    /// Identity transform (mean 0, stddev 1) for every numeric feature.
    pub fn identity(schema: &FeatureSchema) -> Self {
        StandardizationStats {
            columns: schema
                .features
                .iter()
                .map(|f| {
                    f.kind.is_numeric().then_some(ColumnStats {
                        mean: 0.0,
                        stddev: 1.0,
                    })
                })
                .collect(),
        }
    }

    pub fn stddev(&self, feature: usize) -> f64 {
        self.columns[feature].map_or(1.0, |s| s.stddev)
    }

    pub fn forward(&self, feature: usize, x: f64) -> f64 {
        match self.columns[feature] {
            Some(s) => (x - s.mean) / s.stddev,
            None => x,
        }
    }

    pub fn inverse(&self, feature: usize, z: f64) -> f64 {
        match self.columns[feature] {
            Some(s) => z * s.stddev + s.mean,
            None => z,
        }
    }

    /// Maps a row of raw values into standardized units.
    pub fn apply(&self, values: &[Value]) -> Vec<Value> {
        values
            .iter()
            .enumerate()
            .map(|(j, v)| match *v {
                Value::Number(x) => Value::Number(self.forward(j, x)),
                c => c,
            })
            .collect()
    }
}

/// Centers and scales every continuous/ordinal column. Categorical columns,
/// outputs and the schema (including raw-unit deltas) are unchanged.
pub fn standardize(dataset: &QueryDataset) -> (QueryDataset, StandardizationStats) {
    let mut stats = Vec::with_capacity(dataset.columns.len());
    let columns = dataset
        .columns
        .iter()
        .map(|col| match col {
            Column::Numeric(v) => {
                let (mean, sd) = mean_and_sample_stddev(v);
                let stddev = if sd < CONSTANT_COLUMN_TOL { 1.0 } else { sd };
                stats.push(Some(ColumnStats { mean, stddev }));
                Column::Numeric(v.iter().map(|x| (x - mean) / stddev).collect())
            }
            Column::Categorical(v) => {
                stats.push(None);
                Column::Categorical(v.clone())
            }
        })
        .collect();
    let standardized = QueryDataset {
        schema: dataset.schema.clone(),
        columns,
        outputs: dataset.outputs.clone(),
    };
    (standardized, StandardizationStats { columns: stats })
}

/// One column of the numeric design table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EncodedColumn {
    pub name: String,
    pub feature: usize,
    /// Category index for one-hot indicator columns.
    pub category: Option<usize>,
}

impl EncodedColumn {
    pub fn is_binary(&self) -> bool {
        self.category.is_some()
    }
}

/// Layout of the numeric encoding of a schema: numeric features map to one
/// column, a categorical feature with L categories to L - 1 indicators
/// (baseline category encoded as all zeros).
#[derive(Clone, Debug, PartialEq)]
pub struct Encoding {
    columns: Vec<EncodedColumn>,
    /// Range of encoded columns belonging to each feature.
    spans: Vec<std::ops::Range<usize>>,
}

impl Encoding {
    /// Requires resolved baselines (as held by any [`QueryDataset`]).
    pub fn new(schema: &FeatureSchema) -> Self {
        let mut columns = Vec::new();
        let mut spans = Vec::with_capacity(schema.len());
        for (j, spec) in schema.features.iter().enumerate() {
            let start = columns.len();
            if spec.kind.is_numeric() {
                columns.push(EncodedColumn {
                    name: spec.name.clone(),
                    feature: j,
                    category: None,
                });
            } else {
                let baseline = spec.baseline_index().unwrap_or(0);
                for (c, label) in spec.categories.iter().enumerate() {
                    if c != baseline {
                        columns.push(EncodedColumn {
                            name: format!("{}={}", spec.name, label),
                            feature: j,
                            category: Some(c),
                        });
                    }
                }
            }
            spans.push(start..columns.len());
        }
        Encoding { columns, spans }
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[EncodedColumn] {
        &self.columns
    }

    pub fn span(&self, feature: usize) -> std::ops::Range<usize> {
        self.spans[feature].clone()
    }

    pub fn binary_mask(&self) -> Vec<bool> {
        self.columns.iter().map(EncodedColumn::is_binary).collect()
    }

    /// Indicator columns of each categorical feature; at most one of them is 1.
    pub fn exclusive_groups(&self) -> Vec<Vec<usize>> {
        self.spans
            .iter()
            .filter(|s| self.columns[s.start..s.end].iter().any(EncodedColumn::is_binary))
            .map(|s| s.clone().collect())
            .collect()
    }

    pub fn encode_into(&self, values: &[Value], out: &mut [f64]) {
        for (j, span) in self.spans.iter().enumerate() {
            match values[j] {
                Value::Number(x) => out[span.start] = x,
                Value::Category(c) => {
                    for col in span.clone() {
                        out[col] = if self.columns[col].category == Some(c) { 1.0 } else { 0.0 };
                    }
                }
            }
        }
    }

    pub fn encode(&self, values: &[Value]) -> Vec<f64> {
        let mut out = vec![0.0; self.width()];
        self.encode_into(values, &mut out);
        out
    }
}

/// Row-major numeric design table produced by [`encode_one_hot`].
#[derive(Clone, Debug, PartialEq)]
pub struct DesignTable {
    pub encoding: Encoding,
    rows: usize,
    values: Vec<f64>,
}

impl DesignTable {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn width(&self) -> usize {
        self.encoding.width()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.values[i * w..(i + 1) * w]
    }
}

pub fn encode_one_hot(dataset: &QueryDataset) -> DesignTable {
    let encoding = Encoding::new(dataset.schema());
    let w = encoding.width();
    let mut values = vec![0.0; dataset.len() * w];
    let mut row = Vec::with_capacity(dataset.columns.len());
    for i in 0..dataset.len() {
        row.clear();
        row.extend(dataset.columns.iter().map(|c| c.value(i)));
        encoding.encode_into(&row, &mut values[i * w..(i + 1) * w]);
    }
    DesignTable {
        encoding,
        rows: dataset.len(),
        values,
    }
}

/// `p -> ln(p / (1 - p))` after clamping `p` to `[eps, 1 - eps]`.
pub fn to_log_odds(p: f64) -> f64 {
    let limit = ((1.0 - LOG_ODDS_EPS) / LOG_ODDS_EPS).ln();
    if p >= 1.0 - LOG_ODDS_EPS {
        limit
    } else if p <= LOG_ODDS_EPS {
        -limit
    } else {
        p.ln() - (-p).ln_1p()
    }
}

/// Logistic function, the inverse of [`to_log_odds`] on the clamped range.
pub fn from_log_odds(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Builds a name → index lookup for the header of a CSV of query instances.
pub(crate) fn header_lookup(header: &csv::StringRecord) -> HashMap<&str, usize> {
    header.iter().enumerate().map(|(i, h)| (h, i)).collect()
}
