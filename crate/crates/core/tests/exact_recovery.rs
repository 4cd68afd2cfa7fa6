use lpboot::bootstrap::{bootstrap_intervals, BootstrapConfig};
use lpboot::data::{Column, FeatureSchema, FeatureSpec, OutputKind, QueryDataset, Value};
use lpboot::explain::{ExplainConfig, Explainer, ImportanceKind, ScoreKind};
use lpboot::neighborhood::QueryPoint;
use lpboot::rng::stream_rng;
use rand::Rng;

fn uniform(n: usize, seed: u64, lo: f64, hi: f64) -> Vec<f64> {
    let mut rng = stream_rng(seed, 0);
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn boot(seed: u64) -> BootstrapConfig {
    BootstrapConfig {
        replicates: 100,
        seed,
        ..Default::default()
    }
}

fn check_exact(explainer: &Explainer, query: &QueryPoint, expected: &[f64]) {
    let exp = explainer.explain(query).unwrap();
    for (s, e) in exp.scores.iter().zip(expected) {
        assert!((s.value - e).abs() < 1e-6, "{}: {} vs {}", s.feature, s.value, e);
    }
    let outcome = bootstrap_intervals(explainer, query, &boot(3)).unwrap();
    for iv in &outcome.intervals {
        assert!(iv.width() <= 1e-6, "{} width {}", iv.feature, iv.width());
    }
    assert!(exp.surrogate.diagnostics().rss < 1e-16);
}

// y = 2 - x + 0.5 x^2
#[test]
fn one_feature_quadratic() {
    let x = uniform(120, 1, -3.0, 3.0);
    let y: Vec<f64> = x.iter().map(|&x| 2.0 - x + 0.5 * x * x).collect();
    let schema = FeatureSchema::new(vec![FeatureSpec::continuous("x").with_delta(0.25)], OutputKind::Raw).unwrap();
    let ds = QueryDataset::new(schema.clone(), vec![Column::Numeric(x)], y).unwrap();
    let q = QueryPoint::new(&schema, vec![Value::Number(0.7)]).unwrap();

    let grad = Explainer::new(&ds, ExplainConfig::new(2, 50).with_kind(ImportanceKind::Gradient)).unwrap();
    check_exact(&grad, &q, &[-1.0 + 0.7]);

    // (x+d) - (x-d) differences of a quadratic are exactly 2 d f'(x)
    let diff = Explainer::new(&ds, ExplainConfig::new(2, 50)).unwrap();
    check_exact(&diff, &q, &[2.0 * 0.25 * (-1.0 + 0.7)]);
}

// y = x1 x2 + x1^2 - 3 x2 + 0.2 x2^3
#[test]
fn two_feature_cubic() {
    let x1 = uniform(200, 2, -2.0, 2.0);
    let x2 = uniform(200, 3, -2.0, 2.0);
    let y: Vec<f64> = x1
        .iter()
        .zip(&x2)
        .map(|(&a, &b)| a * b + a * a - 3.0 * b + 0.2 * b * b * b)
        .collect();
    let schema = FeatureSchema::new(
        vec![FeatureSpec::continuous("x1"), FeatureSpec::continuous("x2")],
        OutputKind::Raw,
    )
    .unwrap();
    let ds = QueryDataset::new(schema.clone(), vec![Column::Numeric(x1), Column::Numeric(x2)], y).unwrap();
    let (a, b) = (0.4, -0.6);
    let q = QueryPoint::new(&schema, vec![Value::Number(a), Value::Number(b)]).unwrap();
    let ex = Explainer::new(&ds, ExplainConfig::new(3, 80).with_kind(ImportanceKind::Gradient)).unwrap();
    check_exact(&ex, &q, &[b + 2.0 * a, a - 3.0 + 0.6 * b * b]);
}

// y = 1 + 2 x1 - x2 + 0.5 x1 x2 + 3 [g=q] - 2 [g=r] + x1 [g=q]
#[test]
fn mixed_features_with_categorical() {
    let n = 300;
    let x1 = uniform(n, 4, -2.0, 2.0);
    let x2 = uniform(n, 5, -2.0, 2.0);
    let g: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let (a, b) = (x1[i], x2[i]);
            let q = (g[i] == 1) as u8 as f64;
            let r = (g[i] == 2) as u8 as f64;
            1.0 + 2.0 * a - b + 0.5 * a * b + 3.0 * q - 2.0 * r + a * q
        })
        .collect();
    let schema = FeatureSchema::new(
        vec![
            FeatureSpec::continuous("x1"),
            FeatureSpec::continuous("x2"),
            FeatureSpec::categorical("g", ["p", "q", "r"], Some("p")),
        ],
        OutputKind::Raw,
    )
    .unwrap();
    let ds = QueryDataset::new(
        schema.clone(),
        vec![Column::Numeric(x1), Column::Numeric(x2), Column::Categorical(g)],
        y,
    )
    .unwrap();
    let ex = Explainer::new(&ds, ExplainConfig::new(2, 90).with_kind(ImportanceKind::Gradient)).unwrap();
    let (a, b) = (0.3, -0.2);
    for (cat, expected) in [
        (1, [2.0 + 0.5 * b + 1.0, -1.0 + 0.5 * a, 3.0 + a]),
        (2, [2.0 + 0.5 * b, -1.0 + 0.5 * a, -2.0]),
        (0, [2.0 + 0.5 * b, -1.0 + 0.5 * a, 0.0]),
    ] {
        let q = QueryPoint::new(&schema, vec![Value::Number(a), Value::Number(b), Value::Category(cat)]).unwrap();
        check_exact(&ex, &q, &expected);
        let exp = ex.explain(&q).unwrap();
        assert_eq!(exp.scores[2].kind, ScoreKind::BaselineDifference);
    }
}

#[test]
fn naive_intervals_collapse_on_exact_data() {
    let x = uniform(100, 6, -1.0, 1.0);
    let y: Vec<f64> = x.iter().map(|&x| 4.0 * x - 1.0).collect();
    let schema = FeatureSchema::new(vec![FeatureSpec::continuous("x")], OutputKind::Raw).unwrap();
    let ds = QueryDataset::new(schema.clone(), vec![Column::Numeric(x)], y).unwrap();
    let ex = Explainer::new(&ds, ExplainConfig::new(1, 40).with_kind(ImportanceKind::Gradient)).unwrap();
    let q = QueryPoint::new(&schema, vec![Value::Number(0.1)]).unwrap();
    let problem = ex.local_problem(&q).unwrap();
    let iv = ex.naive_intervals(&problem, 0.05).unwrap()[0].unwrap();
    assert!((iv.estimate - 4.0).abs() < 1e-9);
    assert!(iv.width() < 1e-9);
}
