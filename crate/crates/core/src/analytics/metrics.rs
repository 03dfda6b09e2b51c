use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::AnalyticsError;
use crate::corpus::{FunctionSpan, Label, LineLabel};
use crate::scoring::AnomalyRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKTable {
    pub k_values: Vec<usize>,
    pub hits: Vec<usize>,
    pub total_functions: usize,
    pub accuracy: Vec<f64>,
}

impl TopKTable {
    pub fn empty(k_values: &[usize]) -> Self {
        TopKTable {
            k_values: k_values.to_vec(),
            hits: vec![0; k_values.len()],
            total_functions: 0,
            accuracy: vec![0.0; k_values.len()],
        }
    }

    pub fn accuracy_at(&self, k: usize) -> Option<f64> {
        self.k_values.iter().position(|&x| x == k).map(|i| self.accuracy[i])
    }
}

/// Whether a vulnerable label belongs to `function`: by explicit id, or by
/// position when the label names no function.
pub fn label_in_function(label: &LineLabel, function: &FunctionSpan) -> bool {
    match &label.function_id {
        Some(id) => *id == function.id,
        None => function.contains(&label.file, label.line_no),
    }
}

/// Records of `function` ordered by descending score, then ascending line.
pub fn rank_within<'a>(records: &'a [AnomalyRecord], function: &FunctionSpan) -> Vec<&'a AnomalyRecord> {
    let mut ranked: Vec<&AnomalyRecord> = records
        .iter()
        .filter(|r| function.contains(&r.file, r.line_no))
        .collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.line_no.cmp(&b.line_no)));
    ranked
}

/// Fraction of functions whose `k` highest-ranked lines include a labelled
/// vulnerable line.
pub fn top_k_accuracy(
    records: &[AnomalyRecord],
    functions: &[FunctionSpan],
    labels: &[LineLabel],
    k_values: &[usize],
) -> Result<TopKTable, AnalyticsError> {
    let mut table = TopKTable::empty(k_values);
    table.total_functions = functions.len();
    for function in functions {
        let vulnerable: BTreeSet<(&str, usize)> = labels
            .iter()
            .filter(|l| l.label == Label::Vulnerable && label_in_function(l, function))
            .map(LineLabel::key)
            .collect();
        let ranked = rank_within(records, function);
        if ranked.is_empty() || vulnerable.is_empty() {
            return Err(AnalyticsError::FunctionWithoutLines(function.id.clone()));
        }
        let first_hit = ranked
            .iter()
            .position(|r| vulnerable.contains(&(r.file.as_str(), r.line_no)));
        for (i, &k) in k_values.iter().enumerate() {
            if first_hit.is_some_and(|pos| pos < k) {
                table.hits[i] += 1;
            }
        }
    }
    if table.total_functions > 0 {
        for i in 0..k_values.len() {
            table.accuracy[i] = table.hits[i] as f64 / table.total_functions as f64;
        }
    }
    Ok(table)
}

pub fn median(values: &[f64]) -> Result<f64, AnalyticsError> {
    if values.is_empty() {
        return Err(AnalyticsError::EmptyGroup);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Ok(if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    })
}

/// Label used for grouping: unlabelled lines count as non-vulnerable.
pub fn effective_label(record: &AnomalyRecord) -> Label {
    record.label.unwrap_or(Label::NonVulnerable)
}

/// Median score per label, over labels that have records.
pub fn group_medians(records: &[AnomalyRecord]) -> BTreeMap<Label, f64> {
    let mut groups: BTreeMap<Label, Vec<f64>> = BTreeMap::new();
    for r in records {
        groups.entry(effective_label(r)).or_default().push(r.score);
    }
    groups
        .into_iter()
        .map(|(label, scores)| (label, median(&scores).expect("group is non-empty")))
        .collect()
}

/// Fraction of records whose generation matched exactly, filters ignored.
pub fn exact_match_rate(records: &[AnomalyRecord]) -> Result<f64, AnalyticsError> {
    if records.is_empty() {
        return Err(AnalyticsError::EmptyGroup);
    }
    let hits = records.iter().filter(|r| r.exact_match).count();
    Ok(hits as f64 / records.len() as f64)
}

pub fn exact_match_rates(records: &[AnomalyRecord]) -> BTreeMap<Label, f64> {
    let mut groups: BTreeMap<Label, Vec<AnomalyRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(effective_label(r)).or_default().push(r.clone());
    }
    groups
        .into_iter()
        .map(|(label, rs)| (label, exact_match_rate(&rs).expect("group is non-empty")))
        .collect()
}

pub type LineSet = BTreeSet<(String, usize)>;

pub fn exact_match_set(records: &[AnomalyRecord]) -> LineSet {
    records
        .iter()
        .filter(|r| r.exact_match)
        .map(|r| (r.file.clone(), r.line_no))
        .collect()
}

/// Pairwise counts of lines reconstructed exactly under two configurations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapMatrix {
    pub configs: Vec<String>,
    pub counts: Vec<Vec<usize>>,
}

pub fn exact_match_overlap(runs: &[(String, LineSet)]) -> OverlapMatrix {
    let counts = runs
        .iter()
        .map(|(_, a)| runs.iter().map(|(_, b)| a.intersection(b).count()).collect())
        .collect();
    OverlapMatrix {
        configs: runs.iter().map(|(c, _)| c.clone()).collect(),
        counts,
    }
}
