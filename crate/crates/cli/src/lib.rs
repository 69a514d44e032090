//! Subcommand implementations behind the `xattr` binary.
//!
//! Every command returns an [`Outcome`] or a [`CliError`]; `main` only maps them
//! to exit codes. Outputs never carry timestamps, and per-sample work is merged
//! in manifest order, so the worker count cannot change any output byte.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use xattr_core::attribution::{ImportanceDocument, ImportanceScores, Method};
use xattr_core::bench::{assemble, process_sample, read_manifest, BenchReport, BenchmarkRecord};
use xattr_core::eval::{build_report, evaluate_sample, EvalConfig, MethodRun};
use xattr_core::json::to_pretty;
use xattr_core::model::{forward_with_capture, load_weights, Chain, ModelConfig, WeightSet};
use xattr_core::Error;

pub const WORKERS_ENV: &str = "XATTR_WORKERS";

/// Exit status of a finished command.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Ran to completion but produced nothing usable.
    Empty,
}

impl Outcome {
    pub fn code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::Empty => 1,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::DegenerateLabels => 1,
            _ => 2,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "xattr", version, about = "Cross-attention attribution for TCR-epitope models")]
pub struct Cli {
    /// Worker threads; the XATTR_WORKERS environment variable takes precedence.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Annotate manifest rows with residue contact distances from structure files.
    BuildBench(BuildBenchArgs),
    /// Compute importance scores for every benchmark record.
    Explain(ExplainArgs),
    /// Score explanations against distances and by perturbation.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct BuildBenchArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub structures: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Weight file written by the model's save routine.
    #[arg(long, conflicts_with = "seed")]
    pub weights: Option<PathBuf>,
    /// Seed for randomly initialised weights with the default configuration.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub bench: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Comma-separated subset of qcai, gradcam, rollout, rawattn.
    #[arg(long, default_value = "qcai")]
    pub methods: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub bench: PathBuf,
    #[arg(long)]
    pub scores: PathBuf,
    /// Contact thresholds in Å.
    #[arg(long, default_value = "3.4,4,5,6")]
    pub thresholds: String,
    /// BRHR fractions.
    #[arg(long, default_value = "0.25,0.30,0.40,0.50")]
    pub hit_fractions: String,
    /// Perturbation depths for cdr3a, cdr3b and epitope.
    #[arg(long, default_value = "4,4,7")]
    pub k: String,
    /// Methods to evaluate; defaults to those recorded by `explain`.
    #[arg(long)]
    pub methods: Option<String>,
    /// Evaluate raw scores instead of smoothing them first.
    #[arg(long)]
    pub no_smooth: bool,
    /// Model override; by default the model recorded in the score directory's run.json.
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub out: PathBuf,
}

/// What `explain` used, so `evaluate` can rebuild the same model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub seed: Option<u64>,
    pub weights: Option<PathBuf>,
    pub config: ModelConfig,
    pub methods: Vec<Method>,
    pub records: Vec<String>,
}

/// Parses and runs a command line, printing errors to stderr. Returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(o) => o.code(),
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

pub fn dispatch(cli: &Cli) -> CliResult<Outcome> {
    let workers = worker_count(cli.workers)?;
    match &cli.command {
        Command::BuildBench(a) => cmd_build_bench(a, workers),
        Command::Explain(a) => cmd_explain(a, workers),
        Command::Evaluate(a) => cmd_evaluate(a, workers),
    }
}

pub fn worker_count(flag: usize) -> CliResult<usize> {
    let n = match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::usage(format!("{WORKERS_ENV}={v:?} is not a worker count")))?,
        Err(_) => flag,
    };
    if n == 0 {
        return Err(CliError::usage("worker count must be at least 1"));
    }
    Ok(n)
}

/// Order-preserving parallel map on a pool of `workers` threads.
fn par_map<T, R, F>(workers: usize, items: &[T], f: F) -> CliResult<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if workers == 1 {
        return Ok(items.iter().map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::usage(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(|| items.par_iter().map(f).collect()))
}

fn require_dir(path: &Path, what: &str) -> CliResult<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::usage(format!("{what} directory {} does not exist", path.display())))
    }
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::usage(format!("cannot create {}: {e}", path.display())))
}

pub fn cmd_build_bench(args: &BuildBenchArgs, workers: usize) -> CliResult<Outcome> {
    if !args.manifest.is_file() {
        return Err(CliError::usage(format!("manifest {} does not exist", args.manifest.display())));
    }
    require_dir(&args.structures, "structures")?;
    let samples = read_manifest(&args.manifest)?;
    let outcomes = par_map(workers, &samples, |s| process_sample(s, &args.structures))?;
    let (records, report) = assemble(&samples, outcomes);

    let dir = args.out.join("records");
    create_dir(&dir)?;
    for r in &records {
        write_file(&dir.join(format!("{}.json", r.sample.pdb)), &to_pretty(r)?)?;
    }
    write_file(&args.out.join("report.json"), &to_pretty(&report)?)?;
    for e in &report.exclusions {
        eprintln!("excluded {}: {}", e.pdb, e.reason);
    }
    Ok(if records.is_empty() {
        Outcome::Empty
    } else {
        Outcome::Success
    })
}

/// Records of a built benchmark, in manifest order.
pub fn load_records(bench: &Path) -> CliResult<Vec<BenchmarkRecord>> {
    require_dir(bench, "benchmark")?;
    let report: BenchReport = read_json(&bench.join("report.json"))?;
    report
        .record_ids
        .iter()
        .map(|id| read_json(&bench.join("records").join(format!("{id}.json"))))
        .collect()
}

pub fn parse_methods(list: &str) -> CliResult<Vec<Method>> {
    let mut out = Vec::new();
    for name in list.split(',').filter(|s| !s.trim().is_empty()) {
        let m: Method = name.parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(CliError::usage("no methods given; valid methods: qcai, gradcam, rollout, rawattn"));
    }
    Ok(out)
}

fn parse_list<T: std::str::FromStr>(list: &str, what: &str) -> CliResult<Vec<T>> {
    list.split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| CliError::usage(format!("invalid {what} {s:?} in {list:?}")))
        })
        .collect()
}

/// Loads or generates weights. Exactly one of `weights` and `seed` must be set.
pub fn resolve_model(model: &ModelArgs) -> CliResult<(WeightSet, RunInfoModel)> {
    match (&model.weights, model.seed) {
        (Some(p), None) => {
            let w = load_weights(p)?;
            Ok((
                w,
                RunInfoModel {
                    seed: None,
                    weights: Some(p.clone()),
                },
            ))
        }
        (None, Some(seed)) => Ok((
            WeightSet::init_random(&ModelConfig::default().with_seed(seed))?,
            RunInfoModel {
                seed: Some(seed),
                weights: None,
            },
        )),
        (Some(_), Some(_)) => Err(CliError::usage("give either --weights or --seed, not both")),
        (None, None) => Err(CliError::usage("a model is required: pass --weights FILE or --seed N")),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunInfoModel {
    pub seed: Option<u64>,
    pub weights: Option<PathBuf>,
}

pub fn score_file(dir: &Path, pdb: &str, method: Method) -> PathBuf {
    dir.join(format!("{pdb}_{method}.json"))
}

pub fn cmd_explain(args: &ExplainArgs, workers: usize) -> CliResult<Outcome> {
    let methods = parse_methods(&args.methods)?;
    let records = load_records(&args.bench)?;
    let (weights, source) = resolve_model(&args.model)?;

    let docs = par_map(workers, &records, |r| -> CliResult<Vec<ImportanceDocument>> {
        let input = r.sample.to_input()?;
        let bundle = forward_with_capture(&input, &weights)?;
        methods
            .iter()
            .map(|m| Ok(ImportanceDocument::new(&r.sample.pdb, &m.explain(&bundle)?)))
            .collect()
    })?;
    create_dir(&args.out)?;
    for (r, docs) in records.iter().zip(docs) {
        for d in docs? {
            write_file(&score_file(&args.out, &r.sample.pdb, d.method), &to_pretty(&d)?)?;
        }
    }
    let info = RunInfo {
        seed: source.seed,
        weights: source.weights,
        config: weights.config,
        methods,
        records: records.iter().map(|r| r.sample.pdb.clone()).collect(),
    };
    write_file(&args.out.join("run.json"), &to_pretty(&info)?)?;
    Ok(if records.is_empty() {
        Outcome::Empty
    } else {
        Outcome::Success
    })
}

fn eval_config(args: &EvaluateArgs) -> CliResult<EvalConfig> {
    let k: Vec<usize> = parse_list(&args.k, "k")?;
    if k.len() != 3 {
        return Err(CliError::usage(format!("--k needs three values (cdr3a,cdr3b,epitope), got {:?}", args.k)));
    }
    let cfg = EvalConfig {
        thresholds: parse_list(&args.thresholds, "threshold")?,
        hit_fractions: parse_list(&args.hit_fractions, "hit fraction")?,
        k: Chain::ALL.into_iter().zip(k).collect(),
        smooth: !args.no_smooth,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_evaluate(args: &EvaluateArgs, workers: usize) -> CliResult<Outcome> {
    let cfg = eval_config(args)?;
    let records = load_records(&args.bench)?;
    require_dir(&args.scores, "scores")?;
    let run_path = args.scores.join("run.json");
    let info: Option<RunInfo> = if run_path.is_file() { Some(read_json(&run_path)?) } else { None };

    let methods = match (&args.methods, &info) {
        (Some(list), _) => parse_methods(list)?,
        (None, Some(i)) => i.methods.clone(),
        (None, None) => return Err(CliError::usage("no run.json in the score directory; pass --methods")),
    };
    let weights = if args.model.weights.is_some() || args.model.seed.is_some() {
        resolve_model(&args.model)?.0
    } else {
        let i = info.as_ref().ok_or_else(|| {
            CliError::usage("no run.json in the score directory; pass --weights or --seed")
        })?;
        resolve_model(&ModelArgs {
            weights: i.weights.clone(),
            seed: i.seed,
        })?
        .0
    };

    let mut runs = Vec::new();
    for &method in &methods {
        let scores = records
            .iter()
            .map(|r| {
                let doc: ImportanceDocument = read_json(&score_file(&args.scores, &r.sample.pdb, method))?;
                Ok(doc.scores())
            })
            .collect::<CliResult<Vec<ImportanceScores>>>()?;
        let pairs: Vec<(&BenchmarkRecord, &ImportanceScores)> = records.iter().zip(&scores).collect();
        let evals = par_map(workers, &pairs, |(r, s)| evaluate_sample(r, s, &weights, &cfg))?
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
        runs.push(MethodRun { method, scores, evals });
    }
    let report = build_report(&records, &runs, &cfg)?;
    report.write(&args.out)?;
    let any_auc = runs.iter().flat_map(|r| &r.evals).any(|e| e.values.keys().any(|(_, m)| m.starts_with("AUC@")));
    Ok(if records.is_empty() || !any_auc {
        Outcome::Empty
    } else {
        Outcome::Success
    })
}
