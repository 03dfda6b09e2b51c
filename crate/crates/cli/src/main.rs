//! `fimscan`: scan a C/C++ corpus for anomalous lines and evaluate the
//! ranking against labels.
//!
//! Exit codes: 0 success, 2 configuration or input-schema error, 3 backend
//! failure, 1 anything else.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context as _};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fimscan::analytics::{overlap_csv, records_csv, report_csv, sweep_curves_csv, AnalyticsError, EvaluationReport};
use fimscan::context::{build_brace_index, select_context, Strategy};
use fimscan::corpus::{load_functions, load_labels, read_labels, sample_negatives, Corpus, FunctionSpan, LineLabel};
use fimscan::fim::{Backend, JudgmentCache, MockBackend, MockTable, RemoteBackend, SentinelConfig};
use fimscan::harness::{
    all_line_targets, evaluate, label_targets, manifest, scan, sweep, sweep_configs, EvalInputs, PipelineError,
    ScanConfig, ScanError, SweepError, Target, DEFAULT_K_VALUES, SWEEP_SIZES,
};
use fimscan::scoring::{AnomalyRecord, FilterSet, ScoreFn};

#[derive(Parser)]
#[command(
    name = "fimscan",
    version,
    about = "Line-level anomaly scanning with fill-in-the-middle code models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score lines of a corpus and write one record per line.
    Scan(ScanArgs),
    /// Compute ROC-AUC, Top-k and Mann-Whitney P for a record stream.
    Evaluate(EvaluateArgs),
    /// Scan and evaluate at several context sizes and compare exact matches.
    Sweep(SweepArgs),
    /// Print the context window chosen for one line.
    Context(ContextArgs),
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum Format {
    /// JSON Lines for records, JSON for reports.
    Structured,
    /// CSV.
    Tabular,
}

#[derive(Args)]
struct InputArgs {
    /// Source file or directory.
    #[arg(long)]
    corpus: PathBuf,
    /// Line labels (JSON Lines).
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Function spans (JSON Lines); enables Top-k.
    #[arg(long)]
    functions: Option<PathBuf>,
    /// Add N seeded non-vulnerable lines to the labelled targets.
    #[arg(long, value_name = "N")]
    sample_negatives: Option<usize>,
    /// Scan every non-blank line instead of only labelled ones.
    #[arg(long)]
    all_lines: bool,
    /// Inference server URL, or `mock:PATH` for a scripted table.
    #[arg(long)]
    backend: String,
    /// Sentinel profile: codellama, starcoder or deepseek.
    #[arg(long, default_value = "codellama")]
    sentinels: String,
    #[arg(long, default_value = "hybrid")]
    score: ScoreFn,
    /// Disable the empty-prefix filter.
    #[arg(long)]
    no_m1: bool,
    /// Disable the comment filter.
    #[arg(long)]
    no_m2: bool,
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "FIMSCAN_CACHE_DIR", default_value = ".fimscan-cache")]
    cache_dir: PathBuf,
    /// Keep judgments in memory only.
    #[arg(long)]
    no_cache: bool,
    #[arg(long, value_enum, default_value = "structured")]
    format: Format,
}

#[derive(Args)]
struct ScanArgs {
    #[command(flatten)]
    input: InputArgs,
    /// `fixed:N`, `mcs`, `mcs:LIMIT` or `mcs:LIMIT:FALLBACK`.
    #[arg(long, default_value = "mcs")]
    strategy: String,
    /// Output file; stdout when absent. A manifest is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Records written by `scan` (JSON Lines).
    #[arg(long)]
    records: PathBuf,
    /// Labels overriding those stored in the records.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    functions: Option<PathBuf>,
    /// Comma-separated k values; requires --functions.
    #[arg(long, value_delimiter = ',')]
    topk: Option<Vec<usize>>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "structured")]
    format: Format,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Fixed context sizes, comma-separated; defaults to 100,200,300,400,500.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    sizes: Option<Vec<usize>>,
    /// Also run the compound-statement strategy.
    #[arg(long)]
    mcs: bool,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_K_VALUES)]
    topk: Vec<usize>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ContextArgs {
    #[arg(long)]
    file: PathBuf,
    #[arg(long)]
    line: usize,
    #[arg(long, default_value = "mcs")]
    strategy: String,
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

type CmdResult = Result<(), Failure>;

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 2,
        error: e.into(),
    }
}

fn other_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 1,
        error: e.into(),
    }
}

fn scan_failure(e: ScanError) -> Failure {
    let code = match &e {
        ScanError::Backend { .. } => 3,
        ScanError::UnknownFile { .. } | ScanError::Context(_) | ScanError::InvalidParallelism => 2,
        _ => 1,
    };
    Failure { code, error: e.into() }
}

fn analytics_failure(e: AnalyticsError) -> Failure {
    config_err(e)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Scan(args) => cmd_scan(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Context(args) => cmd_context(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn parse_strategy(s: &str) -> Result<Strategy, Failure> {
    s.parse::<Strategy>().map_err(config_err)
}

fn build_backend(descriptor: &str, sentinels: &SentinelConfig) -> Result<Box<dyn Backend>, Failure> {
    if let Some(path) = descriptor.strip_prefix("mock:") {
        let table = MockTable::load(path).map_err(config_err)?;
        return Ok(Box::new(MockBackend::new(table)));
    }
    if descriptor.starts_with("http://") || descriptor.starts_with("https://") {
        return Ok(Box::new(RemoteBackend::new(
            descriptor,
            sentinels.stop_sequences.clone(),
        )));
    }
    Err(config_err(anyhow!(
        "backend must be an http(s) URL or mock:PATH, got {descriptor:?}"
    )))
}

/// Everything a scan needs, loaded and validated.
struct Prepared {
    corpus: Corpus,
    labels: Vec<LineLabel>,
    functions: Option<Vec<FunctionSpan>>,
    targets: Vec<Target>,
    backend: Box<dyn Backend>,
    cache: JudgmentCache,
    base: ScanConfig,
}

fn prepare(input: &InputArgs, strategy: Strategy) -> Result<Prepared, Failure> {
    let corpus = Corpus::load_dir(&input.corpus).map_err(config_err)?;
    if corpus.is_empty() {
        return Err(config_err(anyhow!("no C/C++ sources under {}", input.corpus.display())));
    }
    let mut labels = match &input.labels {
        Some(p) => load_labels(p, &corpus).map_err(config_err)?,
        None => Vec::new(),
    };
    let functions = match &input.functions {
        Some(p) => Some(load_functions(p, Some(&corpus)).map_err(config_err)?),
        None => None,
    };
    if let Some(n) = input.sample_negatives {
        let negatives = sample_negatives(&corpus, &labels, n, input.seed).map_err(config_err)?;
        labels.extend(negatives);
    }
    let targets = if input.all_lines || labels.is_empty() {
        all_line_targets(&corpus, &labels)
    } else {
        label_targets(&labels)
    };
    let sentinels = SentinelConfig::profile(&input.sentinels).map_err(config_err)?;
    let backend = build_backend(&input.backend, &sentinels)?;
    let cache = if input.no_cache {
        JudgmentCache::in_memory()
    } else {
        JudgmentCache::open_dir(&input.cache_dir).map_err(other_err)?
    };
    for c in cache.corrupt_entries() {
        eprintln!("warning: {c}; record dropped");
    }
    if input.parallelism == 0 {
        return Err(config_err(anyhow!("--parallelism must be at least 1")));
    }
    let base = ScanConfig {
        strategy,
        score_fn: input.score,
        filters: FilterSet {
            m1: !input.no_m1,
            m2: !input.no_m2,
        },
        sentinels,
        parallelism: input.parallelism,
        seed: input.seed,
    };
    Ok(Prepared {
        corpus,
        labels,
        functions,
        targets,
        backend,
        cache,
        base,
    })
}

fn records_text(records: &[AnomalyRecord], format: Format) -> String {
    match format {
        Format::Structured => records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect(),
        Format::Tabular => records_csv(records),
    }
}

fn report_text(report: &EvaluationReport, format: Format) -> String {
    match format {
        Format::Structured => report.to_json() + "\n",
        Format::Tabular => report_csv(report),
    }
}

fn write_out(path: Option<&Path>, text: &str) -> CmdResult {
    match path {
        Some(p) => fs::write(p, text)
            .with_context(|| format!("writing {}", p.display()))
            .map_err(other_err),
        None => io::stdout().write_all(text.as_bytes()).map_err(other_err),
    }
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn cmd_scan(args: ScanArgs) -> CmdResult {
    let strategy = parse_strategy(&args.strategy)?;
    let p = prepare(&args.input, strategy)?;
    let records = scan(&p.corpus, &p.targets, &p.base, p.backend.as_ref(), &p.cache).map_err(scan_failure)?;
    write_out(args.out.as_deref(), &records_text(&records, args.input.format))?;
    if let Some(out) = &args.out {
        let m = manifest(&p.corpus, &p.base, p.backend.as_ref());
        let text = serde_json::to_string_pretty(&m).expect("manifest serializes") + "\n";
        write_out(Some(&sidecar(out, ".manifest.json")), &text)?;
    }
    let stats = p.cache.stats();
    eprintln!(
        "scanned {} lines ({} cached, {} computed)",
        records.len(),
        stats.hits,
        stats.misses
    );
    Ok(())
}

fn read_records(path: &Path) -> Result<Vec<AnomalyRecord>, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(config_err)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .with_context(|| format!("{}:{}: not a scan record", path.display(), i + 1))
                .map_err(config_err)
        })
        .collect()
}

fn cmd_evaluate(args: EvaluateArgs) -> CmdResult {
    let records = read_records(&args.records)?;
    let labels = match &args.labels {
        Some(p) => read_labels(p).map_err(config_err)?,
        None => Vec::new(),
    };
    let functions = match (&args.functions, &args.topk) {
        (Some(p), _) => Some(load_functions(p, None).map_err(config_err)?),
        (None, Some(_)) => return Err(config_err(anyhow!("--topk needs --functions"))),
        (None, None) => None,
    };
    let k_values = args.topk.clone().unwrap_or_else(|| DEFAULT_K_VALUES.to_vec());
    let descriptor = args
        .records
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let report =
        evaluate(&records, &labels, functions.as_deref(), &k_values, &descriptor).map_err(analytics_failure)?;
    if let Some(out) = &args.out {
        write_out(Some(out), &report_text(&report, args.format))?;
    }
    println!("{}", report.summary());
    Ok(())
}

fn slug(descriptor: &str) -> String {
    let strategy = descriptor.split('|').next().unwrap_or(descriptor);
    strategy.replace(':', "-")
}

fn cmd_sweep(args: SweepArgs) -> CmdResult {
    let p = prepare(&args.input, Strategy::mcs())?;
    let sizes = args.sizes.clone().unwrap_or_else(|| SWEEP_SIZES.to_vec());
    let configs = sweep_configs(&p.base, &sizes, args.mcs.then(Strategy::mcs)).map_err(config_err)?;
    if configs.is_empty() {
        return Err(config_err(SweepError::NoConfigs));
    }
    let inputs = EvalInputs {
        labels: &p.labels,
        functions: p.functions.as_deref(),
        k_values: &args.topk,
    };
    let outcome =
        sweep(&p.corpus, &p.targets, &configs, p.backend.as_ref(), &p.cache, inputs).map_err(|e| match e {
            SweepError::Config {
                source: PipelineError::Scan(ScanError::Backend { .. }),
                ..
            } => Failure {
                code: 3,
                error: e.into(),
            },
            SweepError::Config {
                source: PipelineError::Scan(ScanError::Cache(_)),
                ..
            } => other_err(e),
            e => config_err(e),
        })?;
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))
        .map_err(other_err)?;
    let format = args.input.format;
    let (report_ext, records_ext) = match format {
        Format::Structured => ("json", "jsonl"),
        Format::Tabular => ("csv", "csv"),
    };
    for (i, run) in outcome.runs.iter().enumerate() {
        let stem = format!("{:02}-{}", i + 1, slug(&run.report.config_descriptor));
        let dir = &args.out_dir;
        write_out(
            Some(&dir.join(format!("report-{stem}.{report_ext}"))),
            &report_text(&run.report, format),
        )?;
        write_out(
            Some(&dir.join(format!("records-{stem}.{records_ext}"))),
            &records_text(&run.records, format),
        )?;
        println!("{}", run.report.summary());
    }
    let overlap_json = serde_json::to_string_pretty(&outcome.overlap).expect("matrix serializes") + "\n";
    write_out(Some(&args.out_dir.join("overlap.json")), &overlap_json)?;
    write_out(Some(&args.out_dir.join("overlap.csv")), &overlap_csv(&outcome.overlap))?;
    write_out(
        Some(&args.out_dir.join("curves.csv")),
        &sweep_curves_csv(outcome.reports()),
    )?;
    Ok(())
}

fn cmd_context(args: ContextArgs) -> CmdResult {
    let strategy = parse_strategy(&args.strategy)?;
    let file = fimscan::corpus::load_source(&args.file).map_err(config_err)?;
    let index = build_brace_index(&file);
    let window = select_context(&file, &index, args.line, strategy).map_err(config_err)?;
    let text = serde_json::to_string_pretty(&window).expect("window serializes") + "\n";
    write_out(None, &text)
}
