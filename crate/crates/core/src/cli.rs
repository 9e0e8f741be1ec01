//! Command-line surface: argument parsing, matrix ingestion, report
//! serialization and the four commands `screen`, `simulate`, `bench` and
//! `null-calibrate`.
//!
//! Reports are JSON objects with lexicographically sorted keys and
//! shortest round-trip floats, so re-serializing a parsed report reproduces
//! it byte for byte. Every output file is written to a temporary sibling
//! and renamed into place on success.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use crate::emtest::EmConfig;
use crate::error::{Error, Result};
use crate::evalmetrics::{bench_case, BenchOptions, BenchSummary};
use crate::families::{Family, FamilyKind, Theta};
use crate::screening::{
    chisq_gof_screen, downsample_counts, screen_batched, DataKind, DataMatrix, PValueMethod, ScreenReport,
};
use crate::simulate::{gen_homogeneous, generate, CaseId, SimDataset, SimScenario};

/// Significance levels tabulated by `null-calibrate`.
pub const NULL_LEVELS: [f64; 3] = [0.10, 0.05, 0.01];

#[derive(Debug, Clone, Parser)]
#[command(name = "emscreen", version, about = "EM-test feature screening for clustering")]
pub struct RunConfig {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Screen the features of a data matrix.
    Screen(ScreenArgs),
    /// Write a simulated benchmark dataset.
    Simulate(SimulateArgs),
    /// Replicate a simulation scenario and summarize screening and clustering.
    Bench(BenchArgs),
    /// Empirical type-I error of the screen on homogeneous data.
    NullCalibrate(NullArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputFormat {
    /// Guess from the file extension (`.mtx` is MatrixMarket, else CSV).
    Auto,
    Csv,
    Mtx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PValueArg {
    Chisq,
    Montecarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScreenMethodArg {
    /// EM-test statistic with threshold and BH rules.
    Em,
    /// Chi-square goodness-of-fit baseline (BH rule only).
    ChisqGof,
}

/// Settings shared by every command that runs the EM-test.
#[derive(Debug, Clone, Args)]
pub struct EmArgs {
    /// Number of mixture components G.
    #[arg(short = 'G', long = "components", default_value_t = 5)]
    pub g: usize,
    /// EM iterations K per initial value.
    #[arg(short = 'K', long = "iterations", default_value_t = 100)]
    pub k: usize,
    /// Penalty weight on log mixing proportions.
    #[arg(long, default_value_t = 1e-5)]
    pub lambda: f64,
    /// Number of initial mixing-proportion vectors (uniform plus random).
    #[arg(long, default_value_t = 3)]
    pub initials: usize,
    /// Quantile-seeded starts per initial.
    #[arg(long, default_value_t = 3)]
    pub inner_starts: usize,
    /// Relative convergence tolerance of EM.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Threshold exponent: retain features with statistic ≥ n^vartheta.
    #[arg(long, default_value_t = 0.35)]
    pub vartheta: f64,
    /// FDR level of the BH rule.
    #[arg(long, default_value_t = 0.01)]
    pub fdr: f64,
    #[arg(long = "pvalue", value_enum, default_value_t = PValueArg::Chisq)]
    pub pvalue: PValueArg,
    /// Monte-Carlo draws per feature for `--pvalue montecarlo`.
    #[arg(long, default_value_t = 1000)]
    pub n_mc: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads (0 = all cores). Never changes numeric output.
    #[arg(long, env = "EMSCREEN_THREADS", default_value_t = 0)]
    pub threads: usize,
}

impl EmArgs {
    pub fn em_config(&self) -> Result<EmConfig> {
        if self.g < 2 {
            return Err(Error::InvalidConfig(format!("G must be at least 2, got {}", self.g)));
        }
        if self.initials < 1 {
            return Err(Error::InvalidConfig("at least one initial is required".into()));
        }
        let mut cfg = EmConfig::with_initials(self.g, self.initials, self.seed);
        cfg.k = self.k;
        cfg.lambda = self.lambda;
        cfg.inner_starts = self.inner_starts;
        cfg.tol = self.tol;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn pvalue_method(&self) -> PValueMethod {
        match self.pvalue {
            PValueArg::Chisq => PValueMethod::ChiSq,
            PValueArg::Montecarlo => PValueMethod::MonteCarlo { n_mc: self.n_mc },
        }
    }

    fn validate_levels(&self) -> Result<()> {
        if !(self.vartheta > 0.0 && self.vartheta < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "vartheta must lie in (0, 1), got {}",
                self.vartheta
            )));
        }
        if !(self.fdr > 0.0 && self.fdr < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "fdr must lie in (0, 1), got {}",
                self.fdr
            )));
        }
        if self.pvalue == PValueArg::Montecarlo && self.n_mc < 1000 {
            return Err(Error::InvalidConfig(format!(
                "n-mc must be at least 1000, got {}",
                self.n_mc
            )));
        }
        Ok(())
    }

    fn echo(&self, map: &mut Map<String, Value>) {
        map.insert("G".into(), json!(self.g));
        map.insert("K".into(), json!(self.k));
        map.insert("lambda".into(), json!(self.lambda));
        map.insert("initials".into(), json!(self.initials));
        map.insert("inner_starts".into(), json!(self.inner_starts));
        map.insert("tol".into(), json!(self.tol));
        map.insert("vartheta".into(), json!(self.vartheta));
        map.insert("fdr".into(), json!(self.fdr));
        map.insert(
            "pvalue_method".into(),
            json!(match self.pvalue {
                PValueArg::Chisq => "chisq",
                PValueArg::Montecarlo => "montecarlo",
            }),
        );
        map.insert("n_mc".into(), json!(self.n_mc));
        map.insert("seed".into(), json!(self.seed));
    }
}

#[derive(Debug, Clone, Args)]
pub struct ScreenArgs {
    /// Input matrix (CSV with a header row, or MatrixMarket coordinate).
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = InputFormat::Auto)]
    pub format: InputFormat,
    /// Flip the orientation (CSV: features as rows; mtx: samples as rows).
    #[arg(long)]
    pub transpose: bool,
    /// Report path; stdout when absent.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// poisson, negbin or normal.
    #[arg(short, long, default_value = "negbin")]
    pub family: String,
    #[arg(long, value_enum, default_value_t = ScreenMethodArg::Em)]
    pub method: ScreenMethodArg,
    /// Thin every sample to this total count before screening.
    #[arg(long)]
    pub downsample: Option<u64>,
    /// With --downsample, drop samples whose total is below the target
    /// instead of failing.
    #[arg(long)]
    pub drop_shallow: bool,
    /// CSV column holding batch labels (excluded from the features).
    #[arg(long)]
    pub batch_column: Option<String>,
    /// Include elapsed seconds in the report (breaks byte-identity).
    #[arg(long)]
    pub wallclock: bool,
    #[command(flatten)]
    pub em: EmArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Scenario: nb-{high,med,low}-{low,high}, case1..case6, normal-balanced
    /// or normal-unbalanced.
    #[arg(short, long)]
    pub case: String,
    #[arg(short, long, default_value_t = 500)]
    pub p: usize,
    #[arg(short, long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output directory for data.csv, labels.csv and truth.json.
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(short, long)]
    pub case: String,
    #[arg(short, long, default_value_t = 500)]
    pub p: usize,
    #[arg(short, long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    /// Summary CSV path; stdout when absent.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Also write per-replication results as JSON.
    #[arg(long)]
    pub per_rep: Option<PathBuf>,
    /// Standardize columns before k-means.
    #[arg(long)]
    pub standardize: bool,
    #[arg(long, default_value_t = 10)]
    pub kmeans_restarts: usize,
    /// Skip the chi-square goodness-of-fit baseline.
    #[arg(long)]
    pub no_chisq: bool,
    #[command(flatten)]
    pub em: EmArgs,
}

#[derive(Debug, Clone, Args)]
pub struct NullArgs {
    #[arg(short, long, default_value = "poisson")]
    pub family: String,
    /// Mean of the homogeneous model.
    #[arg(long, default_value_t = 3.0)]
    pub mean: f64,
    /// Second parameter: NB size r, or normal variance.
    #[arg(long, default_value_t = 1.0)]
    pub shape: f64,
    #[arg(short, long, default_value_t = 500)]
    pub n: usize,
    /// Number of homogeneous features.
    #[arg(short, long, default_value_t = 2000)]
    pub p: usize,
    /// Table path (CSV); stdout when absent.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub em: EmArgs,
}

/// Exit code for an error: 2 for input problems, 3 for internal failures.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_input_error() {
        2
    } else {
        3
    }
}

/// Execute a parsed command.
pub fn run(config: &RunConfig) -> Result<()> {
    let threads = match &config.command {
        Command::Screen(a) => a.em.threads,
        Command::Bench(a) => a.em.threads,
        Command::NullCalibrate(a) => a.em.threads,
        Command::Simulate(_) => 1,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    pool.install(|| match &config.command {
        Command::Screen(a) => run_screen(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Bench(a) => run_bench(a),
        Command::NullCalibrate(a) => run_null(a),
    })
}

fn run_screen(args: &ScreenArgs) -> Result<()> {
    let started = Instant::now();
    let family = Family::new(FamilyKind::from_str(&args.family)?);
    args.em.validate_levels()?;
    let cfg = args.em.em_config()?;
    let format = resolve_format(args.format, &args.input);
    if args.batch_column.is_some() && format == InputFormat::Mtx {
        return Err(Error::InvalidConfig("--batch-column needs CSV input".into()));
    }
    let (mut data, mut batch) = ingest_with_batch(&args.input, format, args.transpose, args.batch_column.as_deref())?;
    data.validate_for(&family).map_err(|e| match e {
        // Sample i sits on file line i + 2 of a samples-as-rows CSV.
        Error::InvalidCell { row, column, msg } if format == InputFormat::Csv && !args.transpose => {
            Error::InvalidCell {
                row: row + 1,
                column,
                msg,
            }
        }
        e => e,
    })?;
    if let Some(target) = args.downsample {
        if args.drop_shallow {
            let keep: Vec<usize> = (0..data.n())
                .filter(|&i| data.row(i).iter().sum::<f64>() >= target as f64)
                .collect();
            data = data.select_rows(&keep);
            batch = batch.map(|b| keep.iter().map(|&i| b[i]).collect());
        }
        data = downsample_counts(&data, target, args.em.seed)?;
    }
    let report = match args.method {
        ScreenMethodArg::Em => {
            let batch = batch.unwrap_or_else(|| vec![0; data.n()]);
            screen_batched(
                &data,
                &batch,
                &family,
                &cfg,
                args.em.vartheta,
                args.em.fdr,
                args.em.pvalue_method(),
            )?
        }
        ScreenMethodArg::ChisqGof => chisq_gof_screen(&data, &family, args.em.fdr)?,
    };

    let mut config = Map::new();
    config.insert("command".into(), json!("screen"));
    config.insert("input".into(), json!(args.input.display().to_string()));
    config.insert(
        "format".into(),
        json!(if format == InputFormat::Mtx { "mtx" } else { "csv" }),
    );
    config.insert("transpose".into(), json!(args.transpose));
    config.insert("family".into(), json!(family.kind().name()));
    config.insert(
        "method".into(),
        json!(match args.method {
            ScreenMethodArg::Em => "em",
            ScreenMethodArg::ChisqGof => "chisq-gof",
        }),
    );
    config.insert("downsample".into(), json!(args.downsample));
    config.insert("drop_shallow".into(), json!(args.drop_shallow));
    config.insert("batch_column".into(), json!(args.batch_column));
    args.em.echo(&mut config);
    let mut value = report_json(&report, data.n(), Value::Object(config));
    if args.wallclock {
        value["wallclock"] = json!(started.elapsed().as_secs_f64());
    }
    write_output(args.output.as_deref(), &to_json_text(&value)?)
}

fn resolve_format(format: InputFormat, path: &Path) -> InputFormat {
    match format {
        InputFormat::Auto => {
            if path
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("mtx"))
            {
                InputFormat::Mtx
            } else {
                InputFormat::Csv
            }
        }
        f => f,
    }
}

/// JSON form of a screening report.
///
/// `per_feature` entries carry the 0-based `index`, `name`, `statistic`,
/// `pvalue`, `pvalue_adjusted`, `flag` (boundary or degenerate) and
/// `degenerate`; `selected_threshold` and `selected_fdr` list 0-based
/// indices.
pub fn report_json(report: &ScreenReport, n: usize, config: Value) -> Value {
    let per_feature: Vec<Value> = report
        .features
        .iter()
        .map(|f| {
            json!({
                "index": f.index,
                "name": f.name,
                "statistic": f.statistic,
                "pvalue": f.pvalue,
                "pvalue_adjusted": f.pvalue_adjusted,
                "flag": f.boundary_flag,
                "degenerate": f.degenerate,
            })
        })
        .collect();
    json!({
        "config": config,
        "n": n,
        "p": report.features.len(),
        "threshold": report.threshold,
        "per_feature": per_feature,
        "selected_threshold": report.selected_threshold,
        "selected_fdr": report.selected_fdr,
    })
}

/// Pretty-printed JSON with a trailing newline.
pub fn to_json_text(value: &Value) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn run_simulate(args: &SimulateArgs) -> Result<()> {
    let case = CaseId::from_str(&args.case)?;
    let scenario = SimScenario::new(case, args.p, args.n, args.seed);
    let ds = generate(&scenario)?;
    fs::create_dir_all(&args.out)?;
    let files = [
        (args.out.join("data.csv"), data_csv(&ds.data)),
        (args.out.join("labels.csv"), labels_csv(&ds.labels)),
        (args.out.join("truth.json"), to_json_text(&truth_json(&ds))?),
    ];
    write_files_atomically(&files)
}

/// CSV text with a header of feature names and one sample per row.
pub fn data_csv(data: &DataMatrix) -> String {
    let mut out = String::new();
    let names: Vec<String> = (0..data.p()).map(|j| data.feature_name(j)).collect();
    out.push_str(&names.join(","));
    out.push('\n');
    for i in 0..data.n() {
        let row: Vec<String> = data.row(i).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn labels_csv(labels: &[usize]) -> String {
    let mut out = String::from("label\n");
    for l in labels {
        out.push_str(&l.to_string());
        out.push('\n');
    }
    out
}

fn truth_json(ds: &SimDataset) -> Value {
    let sc = &ds.scenario;
    json!({
        "case": sc.case.name(),
        "family": sc.case.family_kind().name(),
        "n": sc.n,
        "p": sc.p,
        "G": sc.g,
        "s": sc.s,
        "seed": sc.seed,
        "alpha_true": sc.alpha_true,
        "relevant": ds.relevant,
        "relevant_names": ds.relevant.iter().map(|&j| ds.data.feature_name(j)).collect::<Vec<_>>(),
        "means": ds.truth.means,
        "dispersion": ds.truth.dispersion,
        "dispersion_kind": if sc.case.family_kind() == FamilyKind::NegBin { "size" } else { "sd" },
    })
}

fn run_bench(args: &BenchArgs) -> Result<()> {
    args.em.validate_levels()?;
    let case = CaseId::from_str(&args.case)?;
    let cfg = args.em.em_config()?;
    let scenario = SimScenario::new(case, args.p, args.n, args.em.seed);
    let opts = BenchOptions {
        vartheta: args.em.vartheta,
        fdr: args.em.fdr,
        reps: args.reps,
        pvalue_method: args.em.pvalue_method(),
        kmeans_restarts: args.kmeans_restarts,
        standardize: args.standardize,
        chisq_baseline: !args.no_chisq,
    };
    let summary = bench_case(&scenario, &cfg, &opts)?;
    let csv = bench_csv(&summary);
    let mut files: Vec<(PathBuf, String)> = Vec::new();
    if let Some(path) = &args.per_rep {
        let mut config = Map::new();
        config.insert("command".into(), json!("bench"));
        config.insert("case".into(), json!(case.name()));
        config.insert("n".into(), json!(args.n));
        config.insert("p".into(), json!(args.p));
        config.insert("reps".into(), json!(args.reps));
        config.insert("standardize".into(), json!(args.standardize));
        config.insert("kmeans_restarts".into(), json!(args.kmeans_restarts));
        config.insert("chisq_baseline".into(), json!(!args.no_chisq));
        args.em.echo(&mut config);
        let value = json!({
            "config": Value::Object(config),
            "per_rep": serde_json::to_value(&summary.per_rep).map_err(|e| Error::Internal(e.to_string()))?,
            "summary": serde_json::to_value(&summary.rows).map_err(|e| Error::Internal(e.to_string()))?,
        });
        files.push((path.clone(), to_json_text(&value)?));
    }
    match &args.output {
        Some(path) => files.push((path.clone(), csv)),
        None => print!("{csv}"),
    }
    write_files_atomically(&files)
}

/// Long-format summary: `case,n,p,reps,metric,method,mean,sd`.
pub fn bench_csv(summary: &BenchSummary) -> String {
    let mut out = String::from("case,n,p,reps,metric,method,mean,sd\n");
    for r in &summary.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            summary.case, summary.n, summary.p, summary.reps, r.metric, r.method, r.mean, r.sd
        ));
    }
    out
}

/// Rejection counts of raw p-values at each of [`NULL_LEVELS`].
pub fn null_table(pvalues: &[f64]) -> Vec<(f64, usize, f64)> {
    NULL_LEVELS
        .iter()
        .map(|&level| {
            let rejected = pvalues.iter().filter(|p| **p <= level).count();
            (level, rejected, rejected as f64 / pvalues.len().max(1) as f64)
        })
        .collect()
}

fn run_null(args: &NullArgs) -> Result<()> {
    args.em.validate_levels()?;
    let kind = FamilyKind::from_str(&args.family)?;
    let family = Family::new(kind);
    let theta = match kind {
        FamilyKind::Poisson => Theta::new(&[args.mean]),
        _ => Theta::new(&[args.mean, args.shape]),
    };
    family.check_theta(&theta)?;
    let cfg = args.em.em_config()?;
    let data = gen_homogeneous(kind, &theta, args.n, args.p, args.em.seed)?;
    let batch = vec![0; data.n()];
    let report = screen_batched(
        &data,
        &batch,
        &family,
        &cfg,
        args.em.vartheta,
        args.em.fdr,
        args.em.pvalue_method(),
    )?;
    let pvalues: Vec<f64> = report.features.iter().map(|f| f.pvalue).collect();
    let mut out = String::from("family,n,p,level,rejected,rate\n");
    for (level, rejected, rate) in null_table(&pvalues) {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            kind.name(),
            args.n,
            args.p,
            level,
            rejected,
            rate
        ));
    }
    write_output(args.output.as_deref(), &out)
}

/// Read a data matrix. CSV files have a header row of feature names and one
/// sample per row; MatrixMarket coordinate files have features as rows.
/// `transpose` flips either convention.
pub fn ingest(path: &Path, format: InputFormat, transpose: bool) -> Result<DataMatrix> {
    ingest_with_batch(path, format, transpose, None).map(|(d, _)| d)
}

fn ingest_with_batch(
    path: &Path,
    format: InputFormat,
    transpose: bool,
    batch_column: Option<&str>,
) -> Result<(DataMatrix, Option<Vec<usize>>)> {
    match resolve_format(format, path) {
        InputFormat::Mtx => Ok((read_mtx(path, transpose)?, None)),
        _ => read_csv(path, transpose, batch_column),
    }
}

fn infer_kind(values: &[f64]) -> DataKind {
    if values.iter().all(|v| *v >= 0.0 && v.fract() == 0.0) {
        DataKind::Count
    } else {
        DataKind::Continuous
    }
}

fn parse_cell(text: &str) -> Option<f64> {
    let t = text.trim();
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn read_csv(path: &Path, transpose: bool, batch_column: Option<&str>) -> Result<(DataMatrix, Option<Vec<usize>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(csv_error)?;
    let header: Vec<String> = reader
        .headers()
        .map_err(csv_error)?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let batch_idx = match batch_column {
        Some(name) => Some(
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::InvalidConfig(format!("batch column '{name}' not found")))?,
        ),
        None => None,
    };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut batch_raw: Vec<String> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let mut row = Vec::with_capacity(header.len());
        for (c, cell) in record.iter().enumerate() {
            if Some(c) == batch_idx {
                batch_raw.push(cell.trim().to_string());
                continue;
            }
            match parse_cell(cell) {
                Some(v) => row.push(v),
                None => {
                    return Err(Error::InvalidCell {
                        row: line,
                        column: header[c].clone(),
                        msg: format!("'{cell}' is not a finite number"),
                    })
                }
            }
        }
        rows.push(row);
    }
    let names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(c, _)| Some(*c) != batch_idx)
        .map(|(_, h)| h.clone())
        .collect();
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let kind = infer_kind(&flat);
    let data = if transpose {
        if batch_idx.is_some() {
            return Err(Error::InvalidConfig(
                "--batch-column cannot be combined with --transpose".into(),
            ));
        }
        // Rows are features; the header names samples and is discarded.
        DataMatrix::from_columns(rows, None, kind)?
    } else {
        DataMatrix::from_rows(&rows, Some(names), kind)?
    };
    let batch = batch_idx.map(|_| {
        let mut labels = batch_raw.clone();
        labels.sort();
        labels.dedup();
        batch_raw
            .iter()
            .map(|b| labels.binary_search(b).expect("label present"))
            .collect()
    });
    Ok((data, batch))
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => Error::Parse {
            line,
            msg: format!("expected {expected_len} fields, found {len}"),
        },
        other => Error::Parse {
            line,
            msg: format!("{other:?}"),
        },
    }
}

fn read_mtx(path: &Path, transpose: bool) -> Result<DataMatrix> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    let header = header?;
    let tokens: Vec<String> = header.split_whitespace().map(|t| t.to_ascii_lowercase()).collect();
    if tokens.len() < 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" || tokens[2] != "coordinate" {
        return Err(Error::Parse {
            line: 1,
            msg: "expected a '%%MatrixMarket matrix coordinate' header".into(),
        });
    }
    if !matches!(tokens[3].as_str(), "integer" | "real") || tokens[4] != "general" {
        return Err(Error::Parse {
            line: 1,
            msg: format!("unsupported MatrixMarket type '{} {}'", tokens[3], tokens[4]),
        });
    }
    let mut size: Option<(usize, usize, usize)> = None;
    let mut values: Vec<f64> = Vec::new();
    let mut seen: Vec<bool> = Vec::new();
    let mut entries = 0usize;
    for (idx, line) in lines {
        let line = line?;
        let lineno = idx + 1;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let parts: Vec<&str> = t.split_whitespace().collect();
        let bad = |msg: String| Error::Parse { line: lineno, msg };
        match size {
            None => {
                if parts.len() != 3 {
                    return Err(bad("expected 'rows cols entries'".into()));
                }
                let nums: Vec<usize> = parts
                    .iter()
                    .map(|p| p.parse::<usize>().map_err(|_| bad(format!("invalid size '{p}'"))))
                    .collect::<Result<_>>()?;
                size = Some((nums[0], nums[1], nums[2]));
                values = vec![0.0; nums[0] * nums[1]];
                seen = vec![false; nums[0] * nums[1]];
            }
            Some((nr, nc, _)) => {
                if parts.len() != 3 {
                    return Err(bad("expected 'row col value'".into()));
                }
                let i: usize = parts[0]
                    .parse()
                    .map_err(|_| bad(format!("invalid row '{}'", parts[0])))?;
                let j: usize = parts[1]
                    .parse()
                    .map_err(|_| bad(format!("invalid column '{}'", parts[1])))?;
                if i == 0 || j == 0 || i > nr || j > nc {
                    return Err(bad(format!("entry ({i}, {j}) outside {nr} × {nc}")));
                }
                let v = parse_cell(parts[2]).ok_or_else(|| Error::InvalidCell {
                    row: i,
                    column: j.to_string(),
                    msg: format!("'{}' is not a finite number", parts[2]),
                })?;
                let k = (i - 1) * nc + (j - 1);
                if seen[k] {
                    return Err(bad(format!("duplicate entry ({i}, {j})")));
                }
                seen[k] = true;
                values[k] = v;
                entries += 1;
            }
        }
    }
    let (nr, nc, nnz) = size.ok_or(Error::Parse {
        line: 1,
        msg: "missing size line".into(),
    })?;
    if entries != nnz {
        return Err(Error::DimensionMismatch {
            expected: nnz,
            actual: entries,
        });
    }
    let kind = infer_kind(&values);
    let rows: Vec<Vec<f64>> = values.chunks(nc.max(1)).take(nr).map(<[f64]>::to_vec).collect();
    if transpose {
        DataMatrix::from_rows(&rows, None, kind)
    } else {
        DataMatrix::from_columns(rows, None, kind)
    }
}

fn temp_path(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp-{}", std::process::id()))
}

/// Write all files to temporaries, then rename them into place. On failure
/// the temporaries are removed and no target is touched.
pub fn write_files_atomically(files: &[(PathBuf, String)]) -> Result<()> {
    let mut written: Vec<(PathBuf, &Path)> = Vec::new();
    for (path, text) in files {
        let tmp = temp_path(path);
        let res = fs::File::create(&tmp).and_then(|mut f| {
            f.write_all(text.as_bytes())?;
            f.sync_all()
        });
        if let Err(e) = res {
            let _ = fs::remove_file(&tmp);
            for (t, _) in &written {
                let _ = fs::remove_file(t);
            }
            return Err(e.into());
        }
        written.push((tmp, path));
    }
    for (tmp, path) in &written {
        fs::rename(tmp, path)?;
    }
    Ok(())
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_files_atomically(&[(p.to_path_buf(), text.to_string())]),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

/// Parse a report back into a canonical JSON value (sorted keys).
pub fn parse_report(text: &str) -> Result<Value> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        msg: e.to_string(),
    })
}

/// Map a JSON report's selected index list back to a vector.
pub fn selected_from_report(report: &Value, key: &str) -> Vec<usize> {
    report[key]
        .as_array()
        .map(|a| a.iter().filter_map(|v| v.as_u64().map(|x| x as usize)).collect())
        .unwrap_or_default()
}
