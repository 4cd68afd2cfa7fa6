//! Local feature-importance scores from a polynomial surrogate fitted around
//! the query point, plus closed-form (naive) confidence intervals for
//! gradient scores.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{
    encode_one_hot, from_log_odds, standardize, to_log_odds, DesignTable, OutputKind, QueryDataset,
    StandardizationStats, Value,
};
use crate::error::{Error, Result};
use crate::neighborhood::{select_neighborhood, BalanceMode, Neighborhood, QueryPoint, WeightFormula};
use crate::polyfit::{
    dot, expand_basis_with_groups, solve_least_squares, LeastSquares, MonomialBasis,
    PolynomialSurrogate,
};

/// Score requested for continuous/ordinal features. Categorical features
/// always use the baseline difference.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceKind {
    Gradient,
    #[default]
    FunctionDifference,
}

/// Score actually reported for a feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Gradient,
    FunctionDifference,
    BaselineDifference,
}

/// Denominator of the residual variance estimate used by naive intervals.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualDof {
    /// `m - d - 1`, with `d` the number of input features.
    #[default]
    FeaturesPlusOne,
    /// `m - rank`, the number of residual degrees of freedom of the fit.
    Parameters,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainConfig {
    pub degree: u32,
    pub neighborhood_size: usize,
    pub kind: ImportanceKind,
    pub weighted: bool,
    pub balance: BalanceMode,
    pub weight_formula: WeightFormula,
    /// Per-feature perturbation steps in raw units, overriding the schema.
    pub delta_overrides: BTreeMap<String, f64>,
    /// Report gradients per standardized unit instead of per raw unit.
    pub standardized_units: bool,
    pub residual_dof: ResidualDof,
}

impl ExplainConfig {
    pub fn new(degree: u32, neighborhood_size: usize) -> Self {
        ExplainConfig {
            degree,
            neighborhood_size,
            kind: ImportanceKind::default(),
            weighted: true,
            balance: BalanceMode::default(),
            weight_formula: WeightFormula::default(),
            delta_overrides: BTreeMap::new(),
            standardized_units: false,
            residual_dof: ResidualDof::default(),
        }
    }

    pub fn with_kind(mut self, kind: ImportanceKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn weighted(mut self, weighted: bool) -> Self {
        self.weighted = weighted;
        self
    }

    pub fn with_balance(mut self, balance: BalanceMode) -> Self {
        self.balance = balance;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImportanceScore {
    pub feature: String,
    pub kind: ScoreKind,
    pub value: f64,
}

/// `estimate ± z * standard_error`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NaiveInterval {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub alpha: f64,
    pub standard_error: f64,
    pub residual_dof: f64,
    /// `X^T X` was singular and its pseudo-inverse was used.
    pub pseudo_inverse: bool,
}

impl NaiveInterval {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    fn scaled(self, factor: f64) -> Self {
        let estimate = self.estimate * factor;
        let standard_error = self.standard_error * factor.abs();
        let half = (self.upper - self.lower) / 2.0 * factor.abs();
        NaiveInterval {
            estimate,
            lower: estimate - half,
            upper: estimate + half,
            standard_error,
            ..self
        }
    }
}

/// Two-sided standard normal critical value for significance level `alpha`.
pub fn z_critical(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let normal = Normal::standard();
    Ok(normal.inverse_cdf(1.0 - alpha / 2.0))
}

/// Closed-form interval for the partial derivative of an ordinary
/// least-squares surrogate along `column` at `point`: variance
/// `v^T (X^T X)^-1 v * RSS / dof` with `v` the derivative loading.
pub fn naive_interval(
    surrogate: &PolynomialSurrogate,
    point: &[f64],
    column: usize,
    alpha: f64,
    residual_dof: f64,
) -> Result<NaiveInterval> {
    if residual_dof.is_nan() || residual_dof <= 0.0 {
        return Err(Error::Config(format!(
            "naive interval needs positive residual degrees of freedom, got {residual_dof}"
        )));
    }
    let z = z_critical(alpha)?;
    let v = surrogate.derivative_loading(column, point)?;
    let estimate = dot(&v, surrogate.coefficients());
    let diag = surrogate.diagnostics();
    let sigma2 = diag.rss / residual_dof;
    let variance = surrogate.solution().inverse_gram_form(&v) * sigma2;
    let standard_error = variance.max(0.0).sqrt();
    Ok(NaiveInterval {
        estimate,
        lower: estimate - z * standard_error,
        upper: estimate + z * standard_error,
        alpha,
        standard_error,
        residual_dof,
        pseudo_inverse: diag.effective_rank < diag.terms,
    })
}

/// How one feature's score is read off the surrogate coefficients.
#[derive(Clone, Debug)]
enum Probe {
    /// `beta . v`
    Linear(Vec<f64>),
    /// `h(beta . plus) - h(beta . minus)`, `h` the logistic function.
    LogisticDifference { plus: Vec<f64>, minus: Vec<f64> },
}

impl Probe {
    fn score(&self, coefficients: &[f64]) -> f64 {
        match self {
            Probe::Linear(v) => dot(v, coefficients),
            Probe::LogisticDifference { plus, minus } => {
                from_log_odds(dot(plus, coefficients)) - from_log_odds(dot(minus, coefficients))
            }
        }
    }
}

/// Everything needed to fit surrogates around one query point: the
/// neighborhood, its design matrix and targets, and the score probes.
#[derive(Clone, Debug)]
pub struct LocalProblem {
    pub neighborhood: Neighborhood,
    /// Encoded, standardized query point.
    pub point: Vec<f64>,
    design: DMatrix<f64>,
    targets: Vec<f64>,
    probes: Vec<Probe>,
    kinds: Vec<ScoreKind>,
}

impl LocalProblem {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn kinds(&self) -> &[ScoreKind] {
        &self.kinds
    }

    /// Fits on a subset of neighborhood positions (all of them for `None`).
    /// Weights come from the full neighborhood when `weighted` is set.
    pub fn fit(&self, subset: Option<&[usize]>, weighted: bool) -> Result<LeastSquares> {
        let weights = if weighted {
            self.neighborhood.weights.as_deref()
        } else {
            None
        };
        let solution = match subset {
            None => solve_least_squares(&self.design, &self.targets, weights)?,
            Some(rows) => {
                let design = self.design.select_rows(rows.iter());
                let targets: Vec<f64> = rows.iter().map(|&i| self.targets[i]).collect();
                let w: Option<Vec<f64>> = weights.map(|w| rows.iter().map(|&i| w[i]).collect());
                solve_least_squares(&design, &targets, w.as_deref())?
            }
        };
        let diag = &solution.diagnostics;
        if diag.effective_rank < 2 {
            return Err(Error::RankCollapse {
                rank: diag.effective_rank,
                terms: diag.terms,
            });
        }
        Ok(solution)
    }

    pub fn scores(&self, coefficients: &[f64]) -> Vec<f64> {
        self.probes.iter().map(|p| p.score(coefficients)).collect()
    }
}

/// Result of explaining one query point.
#[derive(Clone, Debug)]
pub struct Explanation {
    pub scores: Vec<ImportanceScore>,
    pub surrogate: PolynomialSurrogate,
    pub neighborhood: Neighborhood,
    pub warnings: Vec<String>,
}

/// Preprocessed dataset plus configuration; explains any number of query
/// points. Immutable and shareable across threads.
#[derive(Clone, Debug)]
pub struct Explainer {
    config: ExplainConfig,
    standardized: QueryDataset,
    stats: StandardizationStats,
    table: DesignTable,
    basis: Arc<MonomialBasis>,
    targets: Vec<f64>,
    log_odds: bool,
    /// Raw-unit perturbation step per feature (numeric features only).
    deltas: Vec<Option<f64>>,
}

impl Explainer {
    pub fn new(dataset: &QueryDataset, config: ExplainConfig) -> Result<Self> {
        let schema = dataset.schema();
        if config.degree < 1 {
            return Err(Error::Config("polynomial degree must be at least 1".into()));
        }
        if config.neighborhood_size == 0 {
            return Err(Error::Config("neighborhood size must be positive".into()));
        }
        if config.neighborhood_size > dataset.len() {
            return Err(Error::NeighborhoodTooLarge {
                m: config.neighborhood_size,
                n: dataset.len(),
            });
        }
        let log_odds = schema.output_kind == OutputKind::Probability;
        if log_odds && config.kind == ImportanceKind::Gradient {
            return Err(Error::Config(
                "gradient scores are unavailable for probability outputs (log-odds fit); use function differences"
                    .into(),
            ));
        }
        for (name, &d) in &config.delta_overrides {
            let j = schema
                .feature_index(name)
                .ok_or_else(|| Error::Config(format!("delta override for unknown feature `{name}`")))?;
            if !schema.features[j].kind.is_numeric() {
                return Err(Error::Config(format!(
                    "delta override for categorical feature `{name}`"
                )));
            }
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::Config(format!("delta override for `{name}` must be positive")));
            }
        }
        let deltas = schema
            .features
            .iter()
            .map(|f| {
                f.kind
                    .is_numeric()
                    .then(|| config.delta_overrides.get(&f.name).copied().or(f.delta).unwrap_or(1.0))
            })
            .collect();

        let (standardized, stats) = standardize(dataset);
        let table = encode_one_hot(&standardized);
        let enc = &table.encoding;
        let basis = Arc::new(expand_basis_with_groups(
            enc.width(),
            config.degree,
            &enc.binary_mask(),
            &enc.exclusive_groups(),
        ));
        let targets = if log_odds {
            dataset.outputs().iter().map(|&p| to_log_odds(p)).collect()
        } else {
            dataset.outputs().to_vec()
        };
        Ok(Explainer {
            config,
            standardized,
            stats,
            table,
            basis,
            targets,
            log_odds,
            deltas,
        })
    }

    pub fn config(&self) -> &ExplainConfig {
        &self.config
    }

    pub fn stats(&self) -> &StandardizationStats {
        &self.stats
    }

    pub fn basis(&self) -> &Arc<MonomialBasis> {
        &self.basis
    }

    pub fn dataset(&self) -> &QueryDataset {
        &self.standardized
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.standardized
            .schema()
            .features
            .iter()
            .map(|f| f.name.clone())
            .collect()
    }

    /// Whether outputs are fitted on the log-odds scale.
    pub fn uses_log_odds(&self) -> bool {
        self.log_odds
    }

    /// Builds the neighborhood, design matrix and score probes for `query`
    /// (given in raw units).
    pub fn local_problem(&self, query: &QueryPoint) -> Result<LocalProblem> {
        let schema = self.standardized.schema();
        let std_values = self.stats.apply(query.values());
        let std_query = QueryPoint::new(schema, std_values.clone())?;
        let mut neighborhood = select_neighborhood(
            &self.standardized,
            &std_query,
            self.config.neighborhood_size,
            self.config.balance,
        )?;
        if self.config.weighted {
            neighborhood = neighborhood.with_weights(self.config.weight_formula);
        }
        let rows: Vec<&[f64]> = neighborhood.members.iter().map(|&i| self.table.row(i)).collect();
        let design = self.basis.design_matrix(&rows)?;
        let targets = neighborhood.members.iter().map(|&i| self.targets[i]).collect();

        let enc = &self.table.encoding;
        let point = enc.encode(&std_values);
        let phi = |x: &[f64]| self.basis.evaluate_terms(x);
        let mut probes = Vec::with_capacity(schema.len());
        let mut kinds = Vec::with_capacity(schema.len());
        for (j, spec) in schema.features.iter().enumerate() {
            let span = enc.span(j);
            let (plus, minus, kind) = if spec.kind.is_numeric() {
                let col = span.start;
                let sd = self.stats.stddev(j);
                if self.config.kind == ImportanceKind::Gradient {
                    let scale = if self.config.standardized_units { 1.0 } else { 1.0 / sd };
                    let v = self.basis.derivative_terms(col, &point)?;
                    probes.push(Probe::Linear(v.into_iter().map(|x| x * scale).collect()));
                    kinds.push(ScoreKind::Gradient);
                    continue;
                }
                let step = self.deltas[j].unwrap_or(1.0) / sd;
                let mut up = point.clone();
                let mut down = point.clone();
                up[col] += step;
                down[col] -= step;
                (phi(&up)?, phi(&down)?, ScoreKind::FunctionDifference)
            } else {
                let mut base = point.clone();
                for c in span {
                    base[c] = 0.0;
                }
                (phi(&point)?, phi(&base)?, ScoreKind::BaselineDifference)
            };
            probes.push(if self.log_odds {
                Probe::LogisticDifference { plus, minus }
            } else {
                Probe::Linear(plus.iter().zip(&minus).map(|(a, b)| a - b).collect())
            });
            kinds.push(kind);
        }
        Ok(LocalProblem {
            neighborhood,
            point,
            design,
            targets,
            probes,
            kinds,
        })
    }

    fn warnings(&self, problem: &LocalProblem, fit: &LeastSquares) -> Vec<String> {
        let mut warnings = Vec::new();
        if problem.len() < self.basis.len() {
            warnings.push(format!(
                "neighborhood size {} is below the number of polynomial terms {}",
                problem.len(),
                self.basis.len()
            ));
        }
        if fit.diagnostics.ill_conditioned {
            warnings.push(format!(
                "ill-conditioned local fit (rank {} of {} terms)",
                fit.diagnostics.effective_rank, fit.diagnostics.terms
            ));
        }
        warnings
    }

    pub fn explain(&self, query: &QueryPoint) -> Result<Explanation> {
        let problem = self.local_problem(query)?;
        self.explain_local(problem)
    }

    pub fn explain_local(&self, problem: LocalProblem) -> Result<Explanation> {
        let fit = problem.fit(None, self.config.weighted)?;
        let values = problem.scores(&fit.coefficients);
        let warnings = self.warnings(&problem, &fit);
        let scores = self
            .standardized
            .schema()
            .features
            .iter()
            .zip(values)
            .zip(problem.kinds())
            .map(|((f, value), &kind)| ImportanceScore {
                feature: f.name.clone(),
                kind,
                value,
            })
            .collect();
        Ok(Explanation {
            scores,
            surrogate: PolynomialSurrogate::from_solution(self.basis.clone(), fit)?,
            neighborhood: problem.neighborhood,
            warnings,
        })
    }

    /// Naive intervals for the gradient of every numeric feature (`None` for
    /// categorical features), from an unweighted fit on the same
    /// neighborhood.
    pub fn naive_intervals(
        &self,
        problem: &LocalProblem,
        alpha: f64,
    ) -> Result<Vec<Option<NaiveInterval>>> {
        if self.config.kind != ImportanceKind::Gradient {
            return Err(Error::Config(
                "naive intervals are only defined for gradient scores".into(),
            ));
        }
        let fit = problem.fit(None, false)?;
        let m = problem.len() as f64;
        let dof = match self.config.residual_dof {
            ResidualDof::FeaturesPlusOne => m - self.standardized.schema().len() as f64 - 1.0,
            ResidualDof::Parameters => m - fit.diagnostics.effective_rank as f64,
        };
        let surrogate = PolynomialSurrogate::from_solution(self.basis.clone(), fit)?;
        let schema = self.standardized.schema();
        let enc = &self.table.encoding;
        schema
            .features
            .iter()
            .enumerate()
            .map(|(j, f)| {
                if !f.kind.is_numeric() {
                    return Ok(None);
                }
                let interval = naive_interval(&surrogate, &problem.point, enc.span(j).start, alpha, dof)?;
                let factor = if self.config.standardized_units {
                    1.0
                } else {
                    1.0 / self.stats.stddev(j)
                };
                Ok(Some(interval.scaled(factor)))
            })
            .collect()
    }

    /// Query point in raw units with categorical feature `j` set to its baseline.
    pub fn baseline_query(&self, query: &QueryPoint, feature: usize) -> Option<QueryPoint> {
        let base = self.standardized.schema().features[feature].baseline_index()?;
        Some(query.with_value(feature, Value::Category(base)))
    }
}
