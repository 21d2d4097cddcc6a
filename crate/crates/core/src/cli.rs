//! `entail-guard` command line.
//!
//! Exit codes: 0 success, 1 input or usage error, 2 backend error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::dataset::{self, Sample, TaskKind};
use crate::detector::{
    self, BackendSet, CacheStats, Decision, DetectError, DetectOptions, DetectionConfig, Direction,
    Mode, QueryCache, Verdict,
};
use crate::error::{Error, Result};
use crate::metrics::{self, EvalReport};
use crate::nli::{LocalBackend, LocalOptions, MockBackend, NliBackend, RemoteBackend, TruncationPolicy};
use crate::report::{self, ColumnKey, ComparisonTable, Format};

pub const MODEL_DIR_ENV: &str = "ENTAIL_GUARD_MODEL_DIR";
pub const MANIFEST_FILE: &str = "run-manifest.json";

#[derive(Debug, Parser)]
#[command(name = "entail-guard", version, about = "Zero-shot hallucination detection via entailment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Label every sample in a dataset file.
    Detect(DetectArgs),
    /// Score a prediction file against gold annotations.
    Evaluate(EvaluateArgs),
    /// Compare unidirectional and bidirectional entailment.
    Compare(CompareArgs),
    /// Re-run a detect invocation from its manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Uni,
    Bi,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Uni => Mode::Unidirectional,
            ModeArg::Bi => Mode::Bidirectional,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DirectionArg {
    #[value(name = "hyp2src")]
    Hyp2src,
    #[value(name = "src2hyp")]
    Src2hyp,
}

impl From<DirectionArg> for Direction {
    fn from(d: DirectionArg) -> Self {
        match d {
            DirectionArg::Hyp2src => Direction::HypToSrc,
            DirectionArg::Src2hyp => Direction::SrcToHyp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecisionArg {
    Threshold,
    Argmax,
}

impl From<DecisionArg> for Decision {
    fn from(d: DecisionArg) -> Self {
        match d {
            DecisionArg::Threshold => Decision::Threshold,
            DecisionArg::Argmax => Decision::Argmax,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatArg {
    Md,
    Csv,
    Json,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Md => Format::Md,
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }
    }
}

/// Where each backend kind finds its model, table or server.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
pub struct BackendArgs {
    /// Mock lookup table (JSON).
    #[arg(long)]
    pub mock_table: Option<PathBuf>,
    /// Local model directory (model.onnx, tokenizer.json, labels.json).
    #[arg(long, env = MODEL_DIR_ENV)]
    pub model_dir: Option<PathBuf>,
    /// Remote server base URL.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Mark the remote backend as multilingual.
    #[arg(long)]
    pub multilingual: bool,
    /// Override the local model's positional limit.
    #[arg(long)]
    pub max_length: Option<usize>,
    /// Over-length handling for the local backend.
    #[arg(long, value_enum, default_value = "premise")]
    pub truncation: TruncationArg,
    /// Remote request timeout in seconds.
    #[arg(long, default_value_t = 30)]
    pub timeout_secs: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TruncationArg {
    #[default]
    Premise,
    Error,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct RunArgs {
    /// Decision threshold on the hallucination score.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Direction used by unidirectional mode.
    #[arg(long, value_enum, default_value = "hyp2src")]
    pub direction: DirectionArg,
    #[arg(long, value_enum, default_value = "threshold")]
    pub decision: DecisionArg,
    /// Backend for MT samples (defaults to --backend).
    #[arg(long)]
    pub backend_mt: Option<String>,
    /// Record failures and continue instead of aborting.
    #[arg(long)]
    pub lenient: bool,
    /// Concurrent backend batches.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Print query-cache statistics.
    #[arg(long)]
    pub stats: bool,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct DetectArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// mock | local | remote, optionally `kind:location`.
    #[arg(long)]
    pub backend: String,
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    #[arg(long)]
    pub output: PathBuf,
    /// Manifest path (defaults to run-manifest.json next to the output).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    /// Repeat to add one table row per backend.
    #[arg(long, required = true)]
    backend: Vec<String>,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Write predictions here instead of the manifest's output path.
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Everything needed to reproduce a detect run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub started_at: String,
    pub finished_at: String,
    pub args: DetectArgs,
    pub config: DetectionConfig,
    pub samples: usize,
    pub dropped_records: usize,
    pub failures: Vec<String>,
    pub cache: CacheStats,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Detect(a) => cmd_detect(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::Replay(a) => cmd_replay(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Nli(_) | Error::Detect(DetectError::Backend { .. }) => 2,
        _ => 1,
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn load_samples(path: &Path, strict: bool) -> Result<(Vec<Sample>, usize)> {
    let parsed = dataset::parse_dataset(&read(path)?, strict).map_err(|e| {
        Error::Usage(format!("{}: {e}", path.display()))
    })?;
    for d in &parsed.dropped {
        log::warn!("{}: dropped record {}: {}", path.display(), d.index, d.error);
    }
    Ok((parsed.samples, parsed.dropped.len()))
}

/// Builds a backend from `kind[:location]`, filling the location from flags.
pub fn open_backend(spec: &str, args: &BackendArgs) -> Result<Arc<dyn NliBackend>> {
    let (kind, location) = match spec.split_once(':') {
        Some((k, rest)) if k == "mock" || k == "local" || k == "remote" => (k, Some(rest)),
        _ => (spec, None),
    };
    let backend: Arc<dyn NliBackend> = match kind {
        "mock" => {
            let table = location.map(PathBuf::from).or_else(|| args.mock_table.clone());
            match table {
                Some(path) => Arc::new(MockBackend::load(&path)?),
                None => Arc::new(MockBackend::fallback_only()),
            }
        }
        "local" => {
            let dir = location
                .map(PathBuf::from)
                .or_else(|| args.model_dir.clone())
                .ok_or_else(|| {
                    Error::Usage(format!("local backend needs --model-dir or {MODEL_DIR_ENV}"))
                })?;
            let options = LocalOptions {
                max_length: args.max_length,
                truncation: match args.truncation {
                    TruncationArg::Premise => TruncationPolicy::Premise,
                    TruncationArg::Error => TruncationPolicy::Error,
                },
                ..LocalOptions::default()
            };
            Arc::new(LocalBackend::load_with(&dir, options)?)
        }
        "remote" => {
            let url = location
                .map(str::to_string)
                .or_else(|| args.endpoint.clone())
                .ok_or_else(|| Error::Usage("remote backend needs --endpoint".into()))?;
            Arc::new(RemoteBackend::new(
                &url,
                args.multilingual,
                Duration::from_secs(args.timeout_secs),
            )?)
        }
        other => {
            return Err(Error::Usage(format!(
                "unknown backend {other:?} (expected mock, local or remote)"
            )))
        }
    };
    Ok(backend)
}

fn backend_set(primary: &str, run: &RunArgs) -> Result<BackendSet> {
    let main = open_backend(primary, &run.backend)?;
    let mut set = BackendSet::uniform(main);
    if let Some(mt) = &run.backend_mt {
        set = set.with_task(TaskKind::MT, open_backend(mt, &run.backend)?);
    }
    Ok(set)
}

fn detection_config(mode: Mode, run: &RunArgs, set: &BackendSet) -> DetectionConfig {
    DetectionConfig {
        mode,
        threshold: run.threshold,
        unidirectional_direction: run.direction.into(),
        decision: run.decision.into(),
        backend_by_task: set.descriptors(),
    }
}

fn detect_options(run: &RunArgs) -> DetectOptions {
    DetectOptions {
        strict: !run.lenient,
        jobs: run.jobs.max(1),
        batch_size: run.batch_size.max(1),
    }
}

fn print_stats(stats: &CacheStats) {
    println!(
        "backend_calls={} queries={} unique_pairs={}",
        stats.backend_calls, stats.queries, stats.unique_pairs
    );
}

fn split_outcomes(outcomes: Vec<detector::SampleOutcome>) -> (Vec<Verdict>, Vec<String>) {
    let mut verdicts = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(v) => verdicts.push(v),
            Err(f) => {
                eprintln!("sample {}: {}", f.sample_id, f.error);
                failures.push(format!("{}: {}", f.sample_id, f.error));
            }
        }
    }
    (verdicts, failures)
}

fn cmd_detect(args: &DetectArgs) -> Result<i32> {
    let started_at = chrono::Utc::now().to_rfc3339();
    let strict = !args.run.lenient;
    let (samples, dropped) = load_samples(&args.input, strict)?;
    let set = backend_set(&args.backend, &args.run)?;
    let config = detection_config(args.mode.into(), &args.run, &set);
    let cache = QueryCache::new();
    let outcomes = detector::detect_all(&samples, &set, &config, &cache, detect_options(&args.run))?;
    let (verdicts, failures) = split_outcomes(outcomes);

    write(&args.output, &dataset::serialize_predictions(&verdicts))?;
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        started_at,
        finished_at: chrono::Utc::now().to_rfc3339(),
        args: args.clone(),
        config,
        samples: samples.len(),
        dropped_records: dropped,
        failures: failures.clone(),
        cache: cache.stats(),
    };
    let manifest_path = args.manifest.clone().unwrap_or_else(|| {
        args.output
            .parent()
            .unwrap_or_else(|| Path::new(""))
            .join(MANIFEST_FILE)
    });
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    write(&manifest_path, &json)?;

    println!("predictions={} failures={}", verdicts.len(), failures.len());
    if args.run.stats {
        print_stats(&cache.stats());
    }
    Ok(if failures.is_empty() { 0 } else { 2 })
}

fn cmd_replay(args: &ReplayArgs) -> Result<i32> {
    let manifest: RunManifest = serde_json::from_str(&read(&args.manifest)?)
        .map_err(|e| Error::Usage(format!("{}: {e}", args.manifest.display())))?;
    let mut detect = manifest.args;
    if let Some(out) = &args.output {
        detect.output = out.clone();
        detect.manifest = None;
    }
    cmd_detect(&detect)
}

fn format_for(explicit: Option<FormatArg>, path: Option<&Path>) -> Format {
    explicit.map(Format::from).unwrap_or_else(|| {
        path.and_then(|p| p.extension())
            .and_then(|e| e.to_str())
            .and_then(|e| e.parse().ok())
            .unwrap_or(Format::Md)
    })
}

fn fmt_rho(b: &metrics::Breakdown) -> String {
    match (b.spearman_rho, &b.spearman_unavailable) {
        (Some(rho), _) => format!("{rho:.6}"),
        (None, Some(why)) => format!("unavailable ({why})"),
        (None, None) => "unavailable".to_string(),
    }
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<i32> {
    let verdicts = dataset::parse_predictions(&read(&args.pred)?)
        .map_err(|e| Error::Usage(format!("{}: {e}", args.pred.display())))?;
    let (golds, _) = load_samples(&args.gold, true)?;
    let report = metrics::evaluate(&verdicts, &golds)?;

    println!("accuracy={:.6}", report.accuracy());
    println!("spearman={}", fmt_rho(&report.overall));
    for (task, b) in &report.per_task {
        println!("accuracy[{task}]={:.6} spearman[{task}]={}", b.accuracy, fmt_rho(b));
    }
    if report.gold_label_inconsistencies > 0 {
        log::warn!(
            "{} gold labels disagree with the annotator majority",
            report.gold_label_inconsistencies
        );
    }

    if let Some(path) = &args.report {
        let format = format_for(args.format, Some(path));
        write(path, &render_eval(&report, format))?;
    }
    Ok(0)
}

/// Evaluation report as text. JSON carries the full report.
pub fn render_eval(report: &EvalReport, format: Format) -> String {
    let row = report.run.backends.join("+");
    let table = report::per_task_table(&row, report);
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
        Format::Csv => report::render(&table, Format::Csv),
        Format::Md => {
            let mut s = format!(
                "accuracy: {:.6}\n\nspearman: {}\n\nn: {}\n\n",
                report.accuracy(),
                fmt_rho(&report.overall),
                report.n()
            );
            s.push_str(&report::render(&table, Format::Md));
            s
        }
    }
}

fn cmd_compare(args: &CompareArgs) -> Result<i32> {
    let strict = !args.run.lenient;
    let (samples, _) = load_samples(&args.input, strict)?;
    let (golds, _) = load_samples(&args.gold, true)?;
    let options = detect_options(&args.run);

    let mut pooled = BTreeMap::new();
    let mut by_task: BTreeMap<TaskKind, BTreeMap<(String, ColumnKey), f64>> = BTreeMap::new();
    let mut total = CacheStats {
        queries: 0,
        backend_calls: 0,
        unique_pairs: 0,
    };
    let mut any_failure = false;
    for spec in &args.backend {
        let set = backend_set(spec, &args.run)?;
        let row = set
            .get(TaskKind::DM)
            .map(|b| b.descriptor().identity.clone())
            .unwrap_or_else(|| spec.clone());
        let cache = QueryCache::new();
        for mode in [Mode::Unidirectional, Mode::Bidirectional] {
            let config = detection_config(mode, &args.run, &set);
            let outcomes = detector::detect_all(&samples, &set, &config, &cache, options)?;
            let (verdicts, failures) = split_outcomes(outcomes);
            any_failure |= !failures.is_empty();
            let report = metrics::evaluate(&verdicts, &golds)?;
            println!("{row} {mode}: accuracy={:.6}", report.accuracy());
            for (task, b) in &report.per_task {
                by_task
                    .entry(*task)
                    .or_default()
                    .insert((row.clone(), ColumnKey::Mode(mode)), b.accuracy);
            }
            pooled.insert((row.clone(), ColumnKey::Mode(mode)), report);
        }
        let s = cache.stats();
        total.queries += s.queries;
        total.backend_calls += s.backend_calls;
        total.unique_pairs += s.unique_pairs;
    }

    let mut tables: Vec<ComparisonTable> = vec![report::build_comparison(&pooled)
        .with_caption("All tasks: evaluation on (Uni vs Bi) directional entailment")];
    for (task, cells) in &by_task {
        tables.push(
            report::table_from_cells(cells)
                .with_caption(format!("{task}: evaluation on (Uni vs Bi) directional entailment")),
        );
    }
    let format = format_for(args.format, Some(&args.output));
    let text = match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&tables).expect("tables serialize");
            s.push('\n');
            s
        }
        f => tables
            .iter()
            .map(|t| report::render(t, f))
            .collect::<Vec<_>>()
            .join("\n"),
    };
    write(&args.output, &text)?;
    if args.run.stats {
        print_stats(&total);
    }
    Ok(if any_failure { 2 } else { 0 })
}
