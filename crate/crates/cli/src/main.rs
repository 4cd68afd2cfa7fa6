use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lpboot::data::{load_dataset_with, write_dataset, DEFAULT_OUTPUT_COLUMN};
use lpboot::neighborhood::load_query_points;
use lpboot::sim::{
    generate_dataset, ground_truth_schema, read_external_records, run_sweep, write_frontier_csv,
    write_sweep_csv, SweepGrid, TargetFeature,
};
use lpboot::{
    build_report, BalanceMode, BootstrapConfig, Error, ExplainConfig, Explainer, FeatureSchema,
    ImportanceKind, QueryDataset, QueryPoint, ResidualDof,
};
use serde::Serialize;
use serde_json::{json, Value as Json};
use sha2::{Digest, Sha256};

/// Exit code for runs that completed with some per-instance failures.
const EXIT_WARNING: u8 = 3;
const EXIT_ERROR: u8 = 1;
/// Features with a smaller share of successful instances are flagged.
const MIN_SUCCESS_SHARE: f64 = 0.8;

#[derive(Parser)]
#[command(name = "lpboot", version, about = "Local polynomial explanations with bootstrap uncertainty intervals")]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true, env = "LPBOOT_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Explain one instance.
    Explain(ExplainArgs),
    /// Average |score| and interval width per feature over many instances.
    Summarize(SummarizeArgs),
    /// Write the synthetic benchmark dataset and its schema.
    Simulate(SimulateArgs),
    /// Coverage/width sweep over a hyperparameter grid.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum KindArg {
    Gradient,
    #[value(name = "function_difference", alias = "function-difference")]
    FunctionDifference,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum BalanceArg {
    Strict,
    #[value(name = "best_effort", alias = "best-effort")]
    BestEffort,
    Off,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum DofArg {
    /// m - d - 1
    Features,
    /// m - rank
    Parameters,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum TargetArg {
    X1,
    X2,
}

#[derive(Args, Serialize)]
struct ModelArgs {
    /// Dataset CSV: one column per schema feature plus the output column.
    #[arg(long)]
    data: PathBuf,
    /// Feature schema JSON.
    #[arg(long)]
    schema: PathBuf,
    #[arg(long, default_value = DEFAULT_OUTPUT_COLUMN)]
    output_column: String,
    /// Polynomial degree.
    #[arg(long)]
    k: u32,
    /// Neighborhood size.
    #[arg(long)]
    m: usize,
    /// Sub-neighborhood proportion.
    #[arg(long, default_value_t = 0.9)]
    c: f64,
    /// Bootstrap replicates.
    #[arg(long = "B", default_value_t = 1000)]
    b: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Distance-weighted fits.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    weighted: bool,
    #[arg(long, value_enum, default_value_t = KindArg::FunctionDifference)]
    kind: KindArg,
    /// Also report closed-form intervals (gradient scores only).
    #[arg(long)]
    naive_ci: bool,
    #[arg(long, value_enum, default_value_t = BalanceArg::Strict)]
    balance: BalanceArg,
    /// Per-feature perturbation step in raw units, as NAME=VALUE.
    #[arg(long = "delta", value_parser = parse_delta)]
    deltas: Vec<(String, f64)>,
    /// Report gradients per standardized unit.
    #[arg(long)]
    standardized_units: bool,
    /// Residual degrees of freedom for naive intervals.
    #[arg(long, value_enum, default_value_t = DofArg::Features)]
    dof: DofArg,
}

#[derive(Args)]
struct ExplainArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Inline JSON object keyed by feature name, or a row index into --data.
    #[arg(long)]
    query: String,
    /// Output JSON path (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the replicate score matrix to this CSV.
    #[arg(long)]
    replicates_out: Option<PathBuf>,
}

#[derive(Args)]
struct SummarizeArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// CSV of query instances with one column per schema feature.
    #[arg(long)]
    queries: PathBuf,
    /// Output summary CSV; a `.manifest.json` sidecar is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_data: PathBuf,
    #[arg(long)]
    out_schema: PathBuf,
}

#[derive(Args, Serialize)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    k_list: Vec<u32>,
    #[arg(long, value_delimiter = ',', default_value = "32,64,128,256")]
    m_list: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0.3,0.5,0.7,0.9")]
    c_list: Vec<f64>,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    /// Query points per parameter set.
    #[arg(long, default_value_t = 250)]
    p: usize,
    #[arg(long = "B", default_value_t = 500)]
    b: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Gradient whose coverage is measured.
    #[arg(long, value_enum, default_value_t = TargetArg::X1)]
    target: TargetArg,
    /// Directory for sweep.csv, frontier.csv and manifest.json.
    #[arg(long)]
    out_dir: PathBuf,
    /// External (method,avg_width,coverage) CSV appended to the frontier output.
    #[arg(long)]
    merge: Option<PathBuf>,
}

fn parse_delta(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s
        .split_once('=')
        .ok_or_else(|| format!("expected NAME=VALUE, got `{s}`"))?;
    let v: f64 = value
        .trim()
        .parse()
        .map_err(|e| format!("bad delta value `{value}`: {e}"))?;
    Ok((name.trim().to_string(), v))
}

#[derive(Serialize)]
struct RunManifest {
    command: &'static str,
    tool_version: &'static str,
    hyperparameters: Json,
    /// Input path to sha256 of its bytes.
    inputs: BTreeMap<String, String>,
}

impl RunManifest {
    fn new(command: &'static str, hyperparameters: Json, inputs: &[&Path]) -> Result<Self, Error> {
        let mut digests = BTreeMap::new();
        for p in inputs {
            let bytes = fs::read(p)?;
            digests.insert(p.display().to_string(), hex::encode(Sha256::digest(&bytes)));
        }
        Ok(RunManifest {
            command,
            tool_version: env!("CARGO_PKG_VERSION"),
            hyperparameters,
            inputs: digests,
        })
    }
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Error> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

impl ModelArgs {
    fn load(&self) -> Result<QueryDataset, Error> {
        let schema = FeatureSchema::from_json(&fs::read_to_string(&self.schema)?)?;
        load_dataset_with(File::open(&self.data)?, schema, &self.output_column)
    }

    fn explain_config(&self) -> ExplainConfig {
        let mut cfg = ExplainConfig::new(self.k, self.m)
            .with_kind(match self.kind {
                KindArg::Gradient => ImportanceKind::Gradient,
                KindArg::FunctionDifference => ImportanceKind::FunctionDifference,
            })
            .weighted(self.weighted)
            .with_balance(match self.balance {
                BalanceArg::Strict => BalanceMode::Strict,
                BalanceArg::BestEffort => BalanceMode::BestEffort,
                BalanceArg::Off => BalanceMode::Off,
            });
        cfg.delta_overrides = self.deltas.iter().cloned().collect();
        cfg.standardized_units = self.standardized_units;
        cfg.residual_dof = match self.dof {
            DofArg::Features => ResidualDof::FeaturesPlusOne,
            DofArg::Parameters => ResidualDof::Parameters,
        };
        cfg
    }

    fn boot_config(&self, seed: u64) -> BootstrapConfig {
        BootstrapConfig {
            replicates: self.b,
            fraction: self.c,
            alpha: self.alpha,
            seed,
            with_replacement: false,
        }
    }

    fn hyperparameters(&self) -> Json {
        json!({
            "k": self.k,
            "m": self.m,
            "c": self.c,
            "B": self.b,
            "alpha": self.alpha,
            "seed": self.seed,
            "weighted": self.weighted,
            "kind": self.kind,
            "naive_ci": self.naive_ci,
            "balance": self.balance,
            "delta_overrides": self.deltas.iter().cloned().collect::<BTreeMap<_, _>>(),
            "standardized_units": self.standardized_units,
            "dof": self.dof,
            "output_column": self.output_column,
        })
    }
}

fn parse_query(text: &str, dataset: &QueryDataset) -> Result<QueryPoint, Error> {
    let trimmed = text.trim();
    if let Ok(row) = trimmed.parse::<usize>() {
        if row >= dataset.len() {
            return Err(Error::Query(format!(
                "row index {row} is out of range for a dataset of {} rows",
                dataset.len()
            )));
        }
        return QueryPoint::from_row(dataset, row);
    }
    let json: Json = serde_json::from_str(trimmed)
        .map_err(|e| Error::Query(format!("query is neither a row index nor JSON: {e}")))?;
    QueryPoint::from_json(dataset.schema(), &json)
}

fn cmd_explain(args: &ExplainArgs) -> Result<u8, Error> {
    let m = &args.model;
    let dataset = m.load()?;
    let query = parse_query(&args.query, &dataset)?;
    let explainer = Explainer::new(&dataset, m.explain_config())?;
    let (report, distribution) = build_report(&explainer, &query, &m.boot_config(m.seed), m.naive_ci)?;
    let mut hyper = m.hyperparameters();
    hyper["query"] = json!(args.query);
    let manifest = RunManifest::new("explain", hyper, &[&m.data, &m.schema])?;
    let output = json!({ "manifest": manifest, "report": report });
    match &args.out {
        Some(path) => write_json(path, &output)?,
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            serde_json::to_writer_pretty(&mut w, &output)?;
            writeln!(w)?;
        }
    }
    if let Some(path) = &args.replicates_out {
        distribution.write_csv(BufWriter::new(File::create(path)?))?;
        write_json(&sidecar(path), &manifest)?;
    }
    Ok(0)
}

#[derive(Serialize)]
struct SummaryRow {
    feature: String,
    mean_abs_score: f64,
    mean_width: f64,
    successes: usize,
    instances: usize,
    flagged: bool,
}

fn cmd_summarize(args: &SummarizeArgs) -> Result<u8, Error> {
    use rayon::prelude::*;
    let m = &args.model;
    let dataset = m.load()?;
    let queries = load_query_points(File::open(&args.queries)?, dataset.schema())?;
    let explainer = Explainer::new(&dataset, m.explain_config())?;
    let results: Vec<_> = queries
        .par_iter()
        .map(|q| build_report(&explainer, q, &m.boot_config(m.seed), false))
        .collect();

    let names = explainer.feature_names();
    let d = names.len();
    let mut abs_sum = vec![0.0; d];
    let mut width_sum = vec![0.0; d];
    let mut successes = 0usize;
    let mut failures = 0usize;
    for (i, r) in results.iter().enumerate() {
        match r {
            Ok((report, _)) => {
                successes += 1;
                for (j, f) in report.features.iter().enumerate() {
                    abs_sum[j] += f.score.abs();
                    width_sum[j] += f.bootstrap_interval.upper - f.bootstrap_interval.lower;
                }
            }
            Err(e) => {
                failures += 1;
                eprintln!("{}", json!({ "instance": i, "error": error_json(e) }));
            }
        }
    }
    let instances = queries.len();
    let flagged = (successes as f64) < MIN_SUCCESS_SHARE * instances as f64;
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&args.out)?));
    for (j, name) in names.iter().enumerate() {
        let mean = |s: f64| if successes > 0 { s / successes as f64 } else { f64::NAN };
        w.serialize(SummaryRow {
            feature: name.clone(),
            mean_abs_score: mean(abs_sum[j]),
            mean_width: mean(width_sum[j]),
            successes,
            instances,
            flagged,
        })?;
    }
    w.flush()?;
    let mut hyper = m.hyperparameters();
    hyper["queries"] = json!(args.queries.display().to_string());
    let manifest = RunManifest::new("summarize", hyper, &[&m.data, &m.schema, &args.queries])?;
    write_json(&sidecar(&args.out), &manifest)?;
    Ok(if failures > 0 { EXIT_WARNING } else { 0 })
}

fn cmd_simulate(args: &SimulateArgs) -> Result<u8, Error> {
    let dataset = generate_dataset(args.n, args.seed)?;
    let mut w = BufWriter::new(File::create(&args.out_data)?);
    write_dataset(&dataset, &mut w)?;
    w.flush()?;
    fs::write(&args.out_schema, ground_truth_schema().to_json()? + "\n")?;
    let manifest = RunManifest::new("simulate", json!({ "n": args.n, "seed": args.seed }), &[])?;
    write_json(&sidecar(&args.out_data), &manifest)?;
    Ok(0)
}

fn cmd_sweep(args: &SweepArgs) -> Result<u8, Error> {
    let grid = SweepGrid {
        degrees: args.k_list.clone(),
        neighborhood_sizes: args.m_list.clone(),
        fractions: args.c_list.clone(),
        n: args.n,
        points: args.p,
        replicates: args.b,
        alpha: args.alpha,
        seed: args.seed,
        target: match args.target {
            TargetArg::X1 => TargetFeature::X1,
            TargetArg::X2 => TargetFeature::X2,
        },
    };
    grid.validate()?;
    let external = match &args.merge {
        Some(p) => read_external_records(File::open(p)?)?,
        None => Vec::new(),
    };
    let records = run_sweep(&grid)?;
    fs::create_dir_all(&args.out_dir)?;
    let mut w = BufWriter::new(File::create(args.out_dir.join("sweep.csv"))?);
    write_sweep_csv(&records, &mut w)?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(args.out_dir.join("frontier.csv"))?);
    write_frontier_csv(&records, &external, &mut w)?;
    w.flush()?;
    let inputs: Vec<&Path> = args.merge.iter().map(PathBuf::as_path).collect();
    let manifest = RunManifest::new("sweep", serde_json::to_value(&grid)?, &inputs)?;
    write_json(&args.out_dir.join("manifest.json"), &manifest)?;
    let invalid = records.iter().filter(|r| !r.valid).count();
    if invalid > 0 {
        eprintln!("{}", json!({ "warning": format!("{invalid} parameter sets exceeded the failed-point limit") }));
        return Ok(EXIT_WARNING);
    }
    Ok(0)
}

fn error_json(e: &Error) -> Json {
    json!({ "kind": e.kind(), "message": e.to_string() })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("{}", json!({ "error": { "kind": "config", "message": e.to_string() } }));
            return ExitCode::from(EXIT_ERROR);
        }
    }
    let result = match &cli.command {
        Command::Explain(a) => cmd_explain(a),
        Command::Summarize(a) => cmd_summarize(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("{}", json!({ "error": error_json(&e) }));
            ExitCode::from(EXIT_ERROR)
        }
    }
}
