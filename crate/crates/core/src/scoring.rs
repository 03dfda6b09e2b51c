//! Anomaly scores and the false-positive filters.
//!
//! The hybrid score of a masked line `p` and its reconstruction `q` is the
//! mean teacher-forced token loss minus one when `q` matches `p` exactly.
//! Lines caught by a filter are pinned to the floor value −1 so they stay in
//! every denominator but rank last.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{ContextWindow, Strategy};
use crate::corpus::Label;
use crate::fim::ModelJudgment;

/// Score assigned to filtered lines; the minimum any scoring function yields.
pub const FLOOR_SCORE: f64 = -1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("token loss {value} at index {index} is negative or not finite")]
    NegativeLoss { index: usize, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreFn {
    /// Mean token loss.
    Delta1,
    /// Negated exact match.
    Delta2,
    /// Loss minus exact-match indicator.
    #[default]
    Hybrid,
}

impl fmt::Display for ScoreFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreFn::Delta1 => "delta1",
            ScoreFn::Delta2 => "delta2",
            ScoreFn::Hybrid => "hybrid",
        })
    }
}

impl FromStr for ScoreFn {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "delta1" => Ok(ScoreFn::Delta1),
            "delta2" => Ok(ScoreFn::Delta2),
            "hybrid" => Ok(ScoreFn::Hybrid),
            other => Err(format!("unknown score function {other:?} (delta1, delta2, hybrid)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Filter {
    /// Masked line sits at the very start of its context.
    M1,
    /// Both the masked line and the generation are comments.
    M2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FilterSet {
    pub m1: bool,
    pub m2: bool,
}

impl FilterSet {
    pub const NONE: FilterSet = FilterSet { m1: false, m2: false };
    pub const ALL: FilterSet = FilterSet { m1: true, m2: true };
}

impl Default for FilterSet {
    fn default() -> Self {
        FilterSet::ALL
    }
}

/// Per-line scan result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyRecord {
    pub file: String,
    #[serde(rename = "line")]
    pub line_no: usize,
    pub label: Option<Label>,
    pub loss: f64,
    pub exact_match: bool,
    pub score: f64,
    pub score_fn: ScoreFn,
    pub filtered_by: Option<Filter>,
    pub strategy: Strategy,
    pub generated: String,
}

/// Mean token loss; an empty loss list scores 0.
pub fn loss_score(judgment: &ModelJudgment) -> Result<f64, ScoreError> {
    let losses = &judgment.token_losses;
    if let Some((index, &value)) = losses.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
        return Err(ScoreError::NegativeLoss { index, value });
    }
    if losses.is_empty() {
        return Ok(0.0);
    }
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Equality after trimming leading and trailing whitespace.
pub fn exact_match(p: &str, q: &str) -> bool {
    p.trim() == q.trim()
}

pub fn hybrid_score(loss: f64, matched: bool) -> f64 {
    if matched {
        loss - 1.0
    } else {
        loss
    }
}

pub fn score_with(score_fn: ScoreFn, judgment: &ModelJudgment, p: &str) -> Result<f64, ScoreError> {
    let matched = exact_match(p, &judgment.generated);
    Ok(match score_fn {
        ScoreFn::Delta1 => loss_score(judgment)?,
        ScoreFn::Delta2 => {
            if matched {
                -1.0
            } else {
                0.0
            }
        }
        ScoreFn::Hybrid => hybrid_score(loss_score(judgment)?, matched),
    })
}

/// Whole-line comment: the trimmed text starts with `//`, `/*` or `*`, or is `*/`.
pub fn is_comment(line: &str) -> bool {
    let t = line.trim();
    t.starts_with("//") || t.starts_with("/*") || t.starts_with('*')
}

/// Scores one judgment into an unfiltered record.
pub fn score_record(
    ctx: &ContextWindow,
    p: &str,
    judgment: &ModelJudgment,
    label: Option<Label>,
    score_fn: ScoreFn,
) -> Result<AnomalyRecord, ScoreError> {
    Ok(AnomalyRecord {
        file: ctx.file.clone(),
        line_no: ctx.target_line,
        label,
        loss: loss_score(judgment)?,
        exact_match: exact_match(p, &judgment.generated),
        score: score_with(score_fn, judgment, p)?,
        score_fn,
        filtered_by: None,
        strategy: ctx.strategy,
        generated: judgment.generated.clone(),
    })
}

/// Applies M1 then M2; the first filter that fires pins the score to −1.
pub fn apply_filters(
    mut record: AnomalyRecord,
    ctx: &ContextWindow,
    p: &str,
    q: &str,
    filters: FilterSet,
) -> AnomalyRecord {
    let hit = if filters.m1 && ctx.prefix.is_empty() {
        Some(Filter::M1)
    } else if filters.m2 && is_comment(p) && is_comment(q) {
        Some(Filter::M2)
    } else {
        None
    };
    if let Some(filter) = hit {
        record.filtered_by = Some(filter);
        record.score = FLOOR_SCORE;
    }
    record
}
