//! Local polynomial feature-importance explanations with bootstrap
//! uncertainty intervals, computed from a fixed set of model queries.

pub mod bootstrap;
pub mod data;
pub mod error;
pub mod explain;
pub mod neighborhood;
pub mod polyfit;
pub mod report;
pub mod rng;
pub mod sim;

pub use bootstrap::{
    bootstrap_intervals, bootstrap_local, percentile, BootstrapConfig, BootstrapDistribution,
    BootstrapOutcome, UncertaintyInterval,
};
pub use data::{
    encode_one_hot, load_dataset, load_dataset_with, standardize, Column, FeatureKind,
    FeatureSchema, FeatureSpec, OutputKind, QueryDataset, StandardizationStats, Value,
};
pub use error::{Error, Result};
pub use explain::{
    naive_interval, z_critical, ExplainConfig, Explainer, Explanation, ImportanceKind,
    ImportanceScore, NaiveInterval, ResidualDof, ScoreKind,
};
pub use neighborhood::{
    compute_weights, select_neighborhood, BalanceMode, Neighborhood, QueryPoint, WeightFormula,
};
pub use polyfit::{expand_basis, fit, FitDiagnostics, MonomialBasis, PolynomialSurrogate};
pub use report::{build_report, ExplanationReport, FeatureReport};
