//! Scan → score → filter → evaluate orchestration.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{
    self, effective_label, exact_match_overlap, exact_match_rates, exact_match_set, group_medians, label_in_function,
    mann_whitney_u, roc_auc, top_k_accuracy, AnalyticsError, EvaluationReport, OverlapMatrix, RunManifest, TopKTable,
};
use crate::context::{self, build_brace_index, select_context, BraceIndex, ContextError, ContextWindow, Strategy};
use crate::corpus::{Corpus, FunctionSpan, Label, LineLabel, SourceFile};
use crate::fim::{
    assemble_prompt, Backend, BackendError, CacheError, CacheKey, JudgmentCache, ModelJudgment, SentinelConfig,
};
use crate::scoring::{apply_filters, score_record, AnomalyRecord, FilterSet, ScoreError, ScoreFn};

/// Context sizes of the standard fixed-window sweep.
pub const SWEEP_SIZES: [usize; 5] = [100, 200, 300, 400, 500];
pub const DEFAULT_K_VALUES: [usize; 2] = [5, 10];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub strategy: Strategy,
    pub score_fn: ScoreFn,
    pub filters: FilterSet,
    pub sentinels: SentinelConfig,
    /// Worker threads for backend calls; does not affect output.
    pub parallelism: usize,
    pub seed: u64,
}

impl ScanConfig {
    pub fn new(strategy: Strategy, sentinels: SentinelConfig) -> Self {
        ScanConfig {
            strategy,
            score_fn: ScoreFn::Hybrid,
            filters: FilterSet::ALL,
            sentinels,
            parallelism: 1,
            seed: 0,
        }
    }

    /// Encodes everything that affects results; parallelism is excluded.
    pub fn descriptor(&self) -> String {
        format!(
            "{}|{}|m1={},m2={}|{}|seed={}",
            self.strategy.descriptor(),
            self.score_fn,
            self.filters.m1 as u8,
            self.filters.m2 as u8,
            self.sentinels.backend_id,
            self.seed
        )
    }
}

/// A line to scan, with its ground-truth label when known.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Target {
    pub file: String,
    pub line: usize,
    pub label: Option<Label>,
}

/// Targets for exactly the labelled lines, in (file, line) order.
pub fn label_targets(labels: &[LineLabel]) -> Vec<Target> {
    let mut targets: Vec<Target> = labels
        .iter()
        .map(|l| Target {
            file: l.file.clone(),
            line: l.line_no,
            label: Some(l.label),
        })
        .collect();
    targets.sort();
    targets
}

/// Every non-blank line of the corpus, labelled where a label exists.
pub fn all_line_targets(corpus: &Corpus, labels: &[LineLabel]) -> Vec<Target> {
    let by_line: HashMap<(&str, usize), Label> = labels.iter().map(|l| (l.key(), l.label)).collect();
    corpus
        .non_blank_lines()
        .into_iter()
        .map(|(file, line)| {
            let label = by_line.get(&(file.as_str(), line)).copied();
            Target { file, line, label }
        })
        .collect()
}

#[derive(Debug, Error)]
pub enum ScanError {
    #[error("target {file}:{line}: file not in corpus")]
    UnknownFile { file: String, line: usize },
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error("{file}:{line}: {source}")]
    Backend {
        file: String,
        line: usize,
        #[source]
        source: BackendError,
    },
    #[error("{file}:{line}: {source}")]
    Score {
        file: String,
        line: usize,
        #[source]
        source: ScoreError,
    },
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error("parallelism must be at least 1")]
    InvalidParallelism,
    #[error("thread pool: {0}")]
    Pool(String),
}

impl ScanError {
    pub fn is_backend(&self) -> bool {
        matches!(self, ScanError::Backend { .. })
    }
}

/// Wraps a judgment with the number of context reductions it needed, so a
/// cache hit can rebuild the window the backend actually saw.
#[derive(Debug, Clone)]
struct Judged {
    judgment: ModelJudgment,
    window: ContextWindow,
}

/// Asks the backend, walking the shrink chain on context overflow.
fn judge_with_shrink(
    backend: &dyn Backend,
    file: &SourceFile,
    index: &BraceIndex,
    mut window: ContextWindow,
    truth: &str,
    sentinels: &SentinelConfig,
) -> Result<Judged, BackendError> {
    let mut shrinks = 0;
    loop {
        let prompt = assemble_prompt(&window, truth, sentinels);
        match backend.judge(&prompt) {
            Ok(mut judgment) => {
                judgment.context_shrinks = shrinks;
                return Ok(Judged { judgment, window });
            }
            Err(BackendError::ContextOverflow(msg)) => match context::shrink(file, index, &window) {
                Some(next) => {
                    window = next;
                    shrinks += 1;
                }
                None => return Err(BackendError::ContextOverflow(msg)),
            },
            Err(e) => return Err(e),
        }
    }
}

fn scan_one(
    corpus: &Corpus,
    indexes: &HashMap<&str, BraceIndex>,
    target: &Target,
    config: &ScanConfig,
    backend: &dyn Backend,
    backend_id: &str,
    cache: &JudgmentCache,
) -> Result<AnomalyRecord, ScanError> {
    let unknown = || ScanError::UnknownFile {
        file: target.file.clone(),
        line: target.line,
    };
    let file = corpus.get(&target.file).ok_or_else(unknown)?;
    let index = indexes.get(target.file.as_str()).ok_or_else(unknown)?;
    let initial = select_context(file, index, target.line, config.strategy)?;
    let truth = file.line(target.line).expect("line validated by context selection");
    let key = CacheKey::new(
        &file.digest,
        target.line,
        &config.strategy,
        &config.sentinels,
        backend_id,
    );

    let mut fresh_window = None;
    let judgment = cache.get_or_compute(&key, || {
        judge_with_shrink(backend, file, index, initial.clone(), truth, &config.sentinels)
            .map(|j| {
                fresh_window = Some(j.window);
                j.judgment
            })
            .map_err(|source| ScanError::Backend {
                file: target.file.clone(),
                line: target.line,
                source,
            })
    })?;
    let window = match fresh_window {
        Some(w) => w,
        None => {
            let mut w = initial;
            for _ in 0..judgment.context_shrinks {
                w = context::shrink(file, index, &w).unwrap_or(w);
            }
            w
        }
    };

    let record =
        score_record(&window, truth, &judgment, target.label, config.score_fn).map_err(|source| ScanError::Score {
            file: target.file.clone(),
            line: target.line,
            source,
        })?;
    Ok(apply_filters(
        record,
        &window,
        truth,
        &judgment.generated,
        config.filters,
    ))
}

/// Scores every target. Output is sorted by (file, line) and independent of
/// `config.parallelism`; any failure aborts the whole run.
pub fn scan(
    corpus: &Corpus,
    targets: &[Target],
    config: &ScanConfig,
    backend: &dyn Backend,
    cache: &JudgmentCache,
) -> Result<Vec<AnomalyRecord>, ScanError> {
    if config.parallelism == 0 {
        return Err(ScanError::InvalidParallelism);
    }
    let mut indexes: HashMap<&str, BraceIndex> = HashMap::new();
    for t in targets {
        if let Some(file) = corpus.get(&t.file) {
            indexes
                .entry(file.path.as_str())
                .or_insert_with(|| build_brace_index(file));
        }
    }
    let backend_id = backend.id();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| ScanError::Pool(e.to_string()))?;
    let mut records = pool.install(|| {
        targets
            .par_iter()
            .map(|t| scan_one(corpus, &indexes, t, config, backend, &backend_id, cache))
            .collect::<Result<Vec<_>, _>>()
    })?;
    records.sort_by(|a, b| (&a.file, a.line_no).cmp(&(&b.file, b.line_no)));
    Ok(records)
}

pub fn manifest(corpus: &Corpus, config: &ScanConfig, backend: &dyn Backend) -> RunManifest {
    RunManifest {
        config_descriptor: config.descriptor(),
        backend_id: backend.id(),
        seed: config.seed,
        corpus_digests: corpus.digests(),
    }
}

/// Overrides record labels with `labels` where one exists.
pub fn attach_labels(records: &[AnomalyRecord], labels: &[LineLabel]) -> Vec<AnomalyRecord> {
    let by_line: HashMap<(&str, usize), Label> = labels.iter().map(|l| (l.key(), l.label)).collect();
    records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if let Some(&label) = by_line.get(&(r.file.as_str(), r.line_no)) {
                r.label = Some(label);
            }
            r
        })
        .collect()
}

fn scores_of(records: &[AnomalyRecord], label: Label) -> Vec<f64> {
    records
        .iter()
        .filter(|r| effective_label(r) == label)
        .map(|r| r.score)
        .collect()
}

/// Functions that contain at least one vulnerable label.
pub fn vulnerable_functions(functions: &[FunctionSpan], labels: &[LineLabel]) -> Vec<FunctionSpan> {
    functions
        .iter()
        .filter(|f| {
            labels
                .iter()
                .any(|l| l.label == Label::Vulnerable && label_in_function(l, f))
        })
        .cloned()
        .collect()
}

/// `labels` plus the labels carried by records that `labels` does not cover.
fn merged_labels(records: &[AnomalyRecord], labels: &[LineLabel]) -> Vec<LineLabel> {
    let known: HashMap<(&str, usize), ()> = labels.iter().map(|l| (l.key(), ())).collect();
    let mut out = labels.to_vec();
    for r in records {
        if let Some(label) = r.label {
            if !known.contains_key(&(r.file.as_str(), r.line_no)) {
                out.push(LineLabel {
                    file: r.file.clone(),
                    line_no: r.line_no,
                    label,
                    function_id: None,
                });
            }
        }
    }
    out
}

/// Builds the evaluation report for one scan.
///
/// Vulnerable lines are positives; non-vulnerable and unlabelled lines are
/// negatives; patched lines only enter the three-way comparisons. Labels in
/// `labels` override those stored on the records. Top-k is computed over the
/// functions holding a vulnerable line, and left empty when `functions` is
/// `None`.
pub fn evaluate(
    records: &[AnomalyRecord],
    labels: &[LineLabel],
    functions: Option<&[FunctionSpan]>,
    k_values: &[usize],
    config_descriptor: &str,
) -> Result<EvaluationReport, AnalyticsError> {
    let records = attach_labels(records, labels);
    let labels = &merged_labels(&records, labels);
    let pos = scores_of(&records, Label::Vulnerable);
    let neg = scores_of(&records, Label::NonVulnerable);
    let patched = scores_of(&records, Label::Patched);

    let roc = roc_auc(&pos, &neg)?;
    let p_value = mann_whitney_u(&pos, &neg)?;
    let (patched_vs_vulnerable, patched_vs_non_vulnerable) = if patched.is_empty() {
        (None, None)
    } else {
        (
            Some(mann_whitney_u(&patched, &pos)?),
            Some(mann_whitney_u(&patched, &neg)?),
        )
    };
    let topk = match functions {
        Some(functions) => top_k_accuracy(&records, &vulnerable_functions(functions, labels), labels, k_values)?,
        None => TopKTable::empty(k_values),
    };
    let mut counts = BTreeMap::new();
    for r in &records {
        *counts.entry(effective_label(r)).or_insert(0) += 1;
    }
    Ok(EvaluationReport {
        config_descriptor: config_descriptor.to_owned(),
        manifest: None,
        alpha: analytics::ALPHA,
        counts,
        roc_auc: roc,
        topk,
        p_value,
        patched_vs_vulnerable,
        patched_vs_non_vulnerable,
        median_scores: group_medians(&records),
        exact_match_rate: exact_match_rates(&records),
    })
}

/// Ground truth shared by every configuration of a sweep.
#[derive(Debug, Clone, Copy)]
pub struct EvalInputs<'a> {
    pub labels: &'a [LineLabel],
    pub functions: Option<&'a [FunctionSpan]>,
    pub k_values: &'a [usize],
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Scan(#[from] ScanError),
    #[error(transparent)]
    Evaluate(#[from] AnalyticsError),
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("sweep needs at least one configuration")]
    NoConfigs,
    #[error("config {config}: {source}")]
    Config {
        config: String,
        #[source]
        source: PipelineError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub report: EvaluationReport,
    pub records: Vec<AnomalyRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub runs: Vec<SweepRun>,
    pub overlap: OverlapMatrix,
}

impl SweepOutcome {
    pub fn reports(&self) -> impl Iterator<Item = &EvaluationReport> {
        self.runs.iter().map(|r| &r.report)
    }
}

/// Scan plus evaluate, with the run manifest embedded.
pub fn scan_and_evaluate(
    corpus: &Corpus,
    targets: &[Target],
    config: &ScanConfig,
    backend: &dyn Backend,
    cache: &JudgmentCache,
    inputs: EvalInputs<'_>,
) -> Result<SweepRun, PipelineError> {
    let records = scan(corpus, targets, config, backend, cache)?;
    let mut report = evaluate(
        &records,
        inputs.labels,
        inputs.functions,
        inputs.k_values,
        &config.descriptor(),
    )?;
    report.manifest = Some(manifest(corpus, config, backend));
    Ok(SweepRun { report, records })
}

/// Runs each configuration in order and compares their exact matches.
pub fn sweep(
    corpus: &Corpus,
    targets: &[Target],
    configs: &[ScanConfig],
    backend: &dyn Backend,
    cache: &JudgmentCache,
    inputs: EvalInputs<'_>,
) -> Result<SweepOutcome, SweepError> {
    if configs.is_empty() {
        return Err(SweepError::NoConfigs);
    }
    let mut runs = Vec::with_capacity(configs.len());
    for config in configs {
        let run = scan_and_evaluate(corpus, targets, config, backend, cache, inputs).map_err(|source| {
            SweepError::Config {
                config: config.descriptor(),
                source,
            }
        })?;
        runs.push(run);
    }
    let sets: Vec<_> = runs
        .iter()
        .map(|r| (r.report.config_descriptor.clone(), exact_match_set(&r.records)))
        .collect();
    Ok(SweepOutcome {
        overlap: exact_match_overlap(&sets),
        runs,
    })
}

/// Fixed windows of each size plus, optionally, the compound-statement
/// strategy, all sharing the remaining settings of `base`.
pub fn sweep_configs(
    base: &ScanConfig,
    sizes: &[usize],
    mcs: Option<Strategy>,
) -> Result<Vec<ScanConfig>, ContextError> {
    let mut out = Vec::new();
    for &size in sizes {
        out.push(ScanConfig {
            strategy: Strategy::fixed(size)?,
            ..base.clone()
        });
    }
    if let Some(strategy) = mcs {
        out.push(ScanConfig {
            strategy,
            ..base.clone()
        });
    }
    Ok(out)
}
