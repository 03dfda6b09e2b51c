use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::{OverlapMatrix, TopKTable};
use super::rank::MannWhitneyResult;
use crate::corpus::Label;
use crate::scoring::AnomalyRecord;

/// Significance threshold for the Mann-Whitney test.
pub const ALPHA: f64 = 0.05;

/// Provenance embedded in reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_descriptor: String,
    pub backend_id: String,
    pub seed: u64,
    pub corpus_digests: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub config_descriptor: String,
    pub manifest: Option<RunManifest>,
    pub alpha: f64,
    pub counts: BTreeMap<Label, usize>,
    pub roc_auc: f64,
    pub topk: TopKTable,
    /// Vulnerable against non-vulnerable scores.
    pub p_value: MannWhitneyResult,
    pub patched_vs_vulnerable: Option<MannWhitneyResult>,
    pub patched_vs_non_vulnerable: Option<MannWhitneyResult>,
    pub median_scores: BTreeMap<Label, f64>,
    pub exact_match_rate: BTreeMap<Label, f64>,
}

impl EvaluationReport {
    pub fn significant(&self) -> bool {
        self.p_value.p_two_sided < self.alpha
    }

    /// One-line summary: ROC-AUC, Top-k accuracies and P.
    pub fn summary(&self) -> String {
        let mut out = format!("{}: ROC-AUC {:.3}", self.config_descriptor, self.roc_auc);
        for (k, acc) in self.topk.k_values.iter().zip(&self.topk.accuracy) {
            out.push_str(&format!(" Top-{k} {:.2}%", acc * 100.0));
        }
        out.push_str(&format!(" P {:.3e}", self.p_value.p_two_sided));
        if self.p_value.degenerate {
            out.push_str(" (degenerate)");
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn records_csv(records: &[AnomalyRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "file",
        "line",
        "label",
        "loss",
        "exact_match",
        "score",
        "score_fn",
        "filtered_by",
        "strategy",
        "generated",
    ])
    .expect("in-memory csv");
    for r in records {
        w.write_record([
            r.file.clone(),
            r.line_no.to_string(),
            opt(r.label),
            r.loss.to_string(),
            r.exact_match.to_string(),
            r.score.to_string(),
            r.score_fn.to_string(),
            opt(r.filtered_by.map(|f| format!("{f:?}"))),
            r.strategy.descriptor(),
            r.generated.clone(),
        ])
        .expect("in-memory csv");
    }
    finish(w)
}

fn push_mwu(rows: &mut Vec<(String, String)>, name: &str, r: &MannWhitneyResult) {
    rows.push((format!("{name}.u_statistic"), r.u_statistic.to_string()));
    rows.push((format!("{name}.p_two_sided"), r.p_two_sided.to_string()));
    rows.push((
        format!("{name}.method"),
        serde_json::to_value(r.method)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default(),
    ));
    rows.push((format!("{name}.degenerate"), r.degenerate.to_string()));
}

/// Report flattened to `metric,value` rows.
pub fn report_csv(report: &EvaluationReport) -> String {
    let mut rows: Vec<(String, String)> = vec![
        ("config".into(), report.config_descriptor.clone()),
        ("roc_auc".into(), report.roc_auc.to_string()),
    ];
    push_mwu(&mut rows, "p_value", &report.p_value);
    if let Some(r) = &report.patched_vs_vulnerable {
        push_mwu(&mut rows, "patched_vs_vulnerable", r);
    }
    if let Some(r) = &report.patched_vs_non_vulnerable {
        push_mwu(&mut rows, "patched_vs_non_vulnerable", r);
    }
    rows.push(("topk.total_functions".into(), report.topk.total_functions.to_string()));
    for ((k, hits), acc) in report
        .topk
        .k_values
        .iter()
        .zip(&report.topk.hits)
        .zip(&report.topk.accuracy)
    {
        rows.push((format!("top{k}.hits"), hits.to_string()));
        rows.push((format!("top{k}.accuracy"), acc.to_string()));
    }
    for (label, n) in &report.counts {
        rows.push((format!("count.{label}"), n.to_string()));
    }
    for (label, m) in &report.median_scores {
        rows.push((format!("median.{label}"), m.to_string()));
    }
    for (label, m) in &report.exact_match_rate {
        rows.push((format!("exact_match_rate.{label}"), m.to_string()));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["metric", "value"]).expect("in-memory csv");
    for (k, v) in rows {
        w.write_record([k, v]).expect("in-memory csv");
    }
    finish(w)
}

pub fn overlap_csv(matrix: &OverlapMatrix) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![String::from("config")];
    header.extend(matrix.configs.iter().cloned());
    w.write_record(&header).expect("in-memory csv");
    for (name, row) in matrix.configs.iter().zip(&matrix.counts) {
        let mut record = vec![name.clone()];
        record.extend(row.iter().map(usize::to_string));
        w.write_record(&record).expect("in-memory csv");
    }
    finish(w)
}

/// Median score and exact-match rate per (config, label), for plotting
/// curves across context sizes.
pub fn sweep_curves_csv<'a>(reports: impl IntoIterator<Item = &'a EvaluationReport>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "config",
        "label",
        "median_score",
        "exact_match_rate",
        "roc_auc",
        "p_value",
    ])
    .expect("in-memory csv");
    for report in reports {
        for (label, median) in &report.median_scores {
            w.write_record([
                report.config_descriptor.clone(),
                label.to_string(),
                median.to_string(),
                opt(report.exact_match_rate.get(label)),
                report.roc_auc.to_string(),
                report.p_value.p_two_sided.to_string(),
            ])
            .expect("in-memory csv");
        }
    }
    finish(w)
}
