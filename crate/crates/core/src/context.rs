//! Prefix/suffix selection for a masked line.
//!
//! Two strategies: a fixed number of lines split evenly around the target, or
//! the largest brace-delimited compound statement enclosing the target that
//! fits under a line cap, with a fixed fallback window when none fits.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::SourceFile;

pub const DEFAULT_MCS_LIMIT: usize = 500;
pub const DEFAULT_FALLBACK_HALF: usize = 150;
/// Upper bound on lines walked above an opening brace when collecting a
/// function signature.
pub const SIGNATURE_LOOKBACK: usize = 10;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ContextError {
    #[error("line {line} out of range for {file:?} ({line_count} lines)")]
    LineOutOfRange {
        file: String,
        line: usize,
        line_count: usize,
    },
    #[error("fixed context total must be at least 2, got {0}")]
    InvalidTotal(usize),
    #[error("invalid strategy {0:?} (expected fixed:N or mcs[:LIMIT[:FALLBACK_HALF]])")]
    InvalidStrategy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    Fixed { total: usize },
    Mcs { limit: usize, fallback_half: usize },
}

impl Strategy {
    pub fn fixed(total: usize) -> Result<Self, ContextError> {
        if total < 2 {
            return Err(ContextError::InvalidTotal(total));
        }
        Ok(Strategy::Fixed { total })
    }

    pub fn mcs() -> Self {
        Strategy::Mcs {
            limit: DEFAULT_MCS_LIMIT,
            fallback_half: DEFAULT_FALLBACK_HALF,
        }
    }

    /// Stable text form, also used as a cache-key component.
    pub fn descriptor(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Fixed { total } => write!(f, "fixed:{total}"),
            Strategy::Mcs { limit, fallback_half } => write!(f, "mcs:{limit}:{fallback_half}"),
        }
    }
}

impl FromStr for Strategy {
    type Err = ContextError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let invalid = || ContextError::InvalidStrategy(s.to_owned());
        let mut parts = s.split(':');
        match parts.next() {
            Some("fixed") => {
                let total = parts.next().and_then(|t| t.parse().ok()).ok_or_else(invalid)?;
                if parts.next().is_some() {
                    return Err(invalid());
                }
                Strategy::fixed(total)
            }
            Some("mcs") => {
                let limit = match parts.next() {
                    Some(v) => v.parse().map_err(|_| invalid())?,
                    None => DEFAULT_MCS_LIMIT,
                };
                let fallback_half = match parts.next() {
                    Some(v) => v.parse().map_err(|_| invalid())?,
                    None => DEFAULT_FALLBACK_HALF,
                };
                if parts.next().is_some() || limit == 0 {
                    return Err(invalid());
                }
                Ok(Strategy::Mcs { limit, fallback_half })
            }
            _ => Err(invalid()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BracePair {
    pub open_line: usize,
    pub close_line: usize,
}

impl BracePair {
    pub fn span_len(&self) -> usize {
        self.close_line - self.open_line + 1
    }

    pub fn encloses(&self, line: usize) -> bool {
        self.open_line <= line && line <= self.close_line
    }
}

/// Matched and unmatched braces of one file, by 1-based line number.
///
/// Pairs are listed in closing order, so inner pairs precede the pairs that
/// contain them.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BraceIndex {
    pub pairs: Vec<BracePair>,
    pub unmatched_opens: Vec<usize>,
    pub unmatched_closes: Vec<usize>,
}

impl BraceIndex {
    /// Multi-line pairs enclosing `line`, largest first.
    ///
    /// A pair whose braces sit on one line carries no context beyond the line
    /// itself and is not a candidate.
    pub fn enclosing(&self, line: usize) -> Vec<BracePair> {
        let mut found: Vec<BracePair> = self
            .pairs
            .iter()
            .copied()
            .filter(|p| p.close_line > p.open_line && p.encloses(line))
            .collect();
        found.sort_by(|a, b| b.span_len().cmp(&a.span_len()).then(a.cmp(b)));
        found
    }

    /// Largest enclosing multi-line pair spanning at most `limit` lines.
    pub fn maximal_enclosing(&self, line: usize, limit: usize) -> Option<BracePair> {
        self.enclosing(line).into_iter().find(|p| p.span_len() <= limit)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum LexState {
    Code,
    BlockComment,
    // string literal continued onto the next line by a trailing backslash
    StringContinued,
}

/// Stack-matches braces, skipping comments and string/character literals.
pub fn build_brace_index(file: &SourceFile) -> BraceIndex {
    let mut index = BraceIndex::default();
    let mut stack: Vec<usize> = Vec::new();
    let mut state = LexState::Code;

    for (i, line) in file.lines.iter().enumerate() {
        let line_no = i + 1;
        let chars: Vec<char> = line.chars().collect();
        let mut j = 0;
        if state == LexState::StringContinued {
            state = LexState::Code;
            j = skip_quoted(&chars, 0, '"');
            if j > chars.len() {
                state = LexState::StringContinued;
                continue;
            }
        }
        while j < chars.len() {
            if state == LexState::BlockComment {
                if chars[j] == '*' && chars.get(j + 1) == Some(&'/') {
                    state = LexState::Code;
                    j += 2;
                } else {
                    j += 1;
                }
                continue;
            }
            match chars[j] {
                '/' if chars.get(j + 1) == Some(&'/') => break,
                '/' if chars.get(j + 1) == Some(&'*') => {
                    state = LexState::BlockComment;
                    j += 2;
                }
                q @ ('"' | '\'') => {
                    j = skip_quoted(&chars, j + 1, q);
                    if j > chars.len() {
                        if q == '"' {
                            state = LexState::StringContinued;
                        }
                        break;
                    }
                }
                '{' => {
                    stack.push(line_no);
                    j += 1;
                }
                '}' => {
                    match stack.pop() {
                        Some(open_line) => index.pairs.push(BracePair {
                            open_line,
                            close_line: line_no,
                        }),
                        None => index.unmatched_closes.push(line_no),
                    }
                    j += 1;
                }
                _ => j += 1,
            }
        }
    }
    index.unmatched_opens = stack;
    index
}

/// Returns the index just past the closing quote. An unterminated literal
/// ends the line; the return is then `len + 1` if the line ends in a
/// backslash (continuation) and `len` otherwise.
fn skip_quoted(chars: &[char], mut j: usize, quote: char) -> usize {
    while j < chars.len() {
        match chars[j] {
            '\\' if j + 1 == chars.len() => return chars.len() + 1,
            '\\' => j += 2,
            c if c == quote => return j + 1,
            _ => j += 1,
        }
    }
    chars.len()
}

/// Prefix and suffix lines around a withheld target line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextWindow {
    pub file: String,
    pub target_line: usize,
    /// Line number of the first prefix line; equals `target_line` when the
    /// prefix is empty.
    pub prefix_start: usize,
    pub prefix: Vec<String>,
    pub suffix: Vec<String>,
    pub strategy: Strategy,
    pub mcs_span: Option<(usize, usize)>,
    pub fell_back: bool,
}

impl ContextWindow {
    pub fn suffix_end(&self) -> usize {
        self.target_line + self.suffix.len()
    }

    pub fn context_lines(&self) -> usize {
        self.prefix.len() + self.suffix.len()
    }
}

fn check_line(file: &SourceFile, line: usize) -> Result<(), ContextError> {
    if line == 0 || line > file.line_count() {
        return Err(ContextError::LineOutOfRange {
            file: file.path.clone(),
            line,
            line_count: file.line_count(),
        });
    }
    Ok(())
}

/// Lines `first..=last` (1-based), empty when `first > last`.
fn slice(file: &SourceFile, first: usize, last: usize) -> Vec<String> {
    if first > last {
        return Vec::new();
    }
    file.lines[first - 1..last].to_vec()
}

fn window_around(file: &SourceFile, line: usize, half: usize, strategy: Strategy, fell_back: bool) -> ContextWindow {
    let prefix_start = line.saturating_sub(half).max(1);
    let suffix_end = (line + half).min(file.line_count());
    ContextWindow {
        file: file.path.clone(),
        target_line: line,
        prefix_start,
        prefix: slice(file, prefix_start, line - 1),
        suffix: slice(file, line + 1, suffix_end),
        strategy,
        mcs_span: None,
        fell_back,
    }
}

/// `total / 2` lines on each side of `line`, clamped at the file edges.
pub fn fixed_context(file: &SourceFile, line: usize, total: usize) -> Result<ContextWindow, ContextError> {
    let strategy = Strategy::fixed(total)?;
    check_line(file, line)?;
    Ok(window_around(file, line, total / 2, strategy, false))
}

/// Signature lines directly above an opening brace line: up to
/// [`SIGNATURE_LOOKBACK`] non-blank lines not ending in `;`, `}` or `{`.
/// Preprocessor directives also end the walk.
/// Returns the first signature line, or `open_line` if there are none.
pub fn signature_start(file: &SourceFile, open_line: usize) -> usize {
    let mut start = open_line;
    while start > 1 && open_line - (start - 1) <= SIGNATURE_LOOKBACK {
        let text = file.lines[start - 2].trim();
        if text.is_empty() || text.starts_with('#') || text.ends_with(';') || text.ends_with('}') || text.ends_with('{')
        {
            break;
        }
        start -= 1;
    }
    start
}

fn compound_window(file: &SourceFile, line: usize, pair: BracePair, strategy: Strategy) -> ContextWindow {
    let prefix_start = signature_start(file, pair.open_line);
    ContextWindow {
        file: file.path.clone(),
        target_line: line,
        prefix_start,
        prefix: slice(file, prefix_start, line - 1),
        suffix: slice(file, line + 1, pair.close_line),
        strategy,
        mcs_span: Some((pair.open_line, pair.close_line)),
        fell_back: false,
    }
}

/// Context from the maximum compound statement enclosing `line` whose span is
/// at most `limit` lines, falling back to `fallback_half` lines each side.
pub fn mcs_context(
    file: &SourceFile,
    index: &BraceIndex,
    line: usize,
    limit: usize,
    fallback_half: usize,
) -> Result<ContextWindow, ContextError> {
    check_line(file, line)?;
    let strategy = Strategy::Mcs { limit, fallback_half };
    Ok(match index.maximal_enclosing(line, limit) {
        Some(pair) => compound_window(file, line, pair, strategy),
        None => window_around(file, line, fallback_half, strategy, true),
    })
}

/// Builds the window for any strategy.
pub fn select_context(
    file: &SourceFile,
    index: &BraceIndex,
    line: usize,
    strategy: Strategy,
) -> Result<ContextWindow, ContextError> {
    match strategy {
        Strategy::Fixed { total } => fixed_context(file, line, total),
        Strategy::Mcs { limit, fallback_half } => mcs_context(file, index, line, limit, fallback_half),
    }
}

/// Next smaller window after the backend rejected `window` as too long.
///
/// A compound-statement window moves to the largest enclosing compound
/// statement nested inside the current one. Fixed and fallback windows halve their per-side line count.
/// Every step strictly reduces the context; `None` ends the chain.
pub fn shrink(file: &SourceFile, index: &BraceIndex, window: &ContextWindow) -> Option<ContextWindow> {
    let line = window.target_line;
    if let Some((open, close)) = window.mcs_span {
        let current = close - open + 1;
        return index
            .enclosing(line)
            .into_iter()
            .find(|p| p.span_len() < current && p.open_line >= open && p.close_line <= close)
            .map(|pair| compound_window(file, line, pair, window.strategy));
    }
    let half = window.prefix.len().max(window.suffix.len());
    if half == 0 {
        return None;
    }
    Some(window_around(file, line, half / 2, window.strategy, window.fell_back))
}
