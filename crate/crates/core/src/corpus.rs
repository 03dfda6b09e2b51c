//! Source files, labelled line datasets and function spans.
//!
//! Everything here is read-only after load. File identity is the path string
//! the file was loaded under; when a whole directory is loaded it is the
//! `/`-separated path relative to the corpus root, which is what label and
//! function-span records refer to.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use walkdir::WalkDir;

/// Extensions picked up when loading a corpus directory.
pub const SOURCE_EXTENSIONS: &[&str] = &["c", "h", "cc", "cpp", "cxx", "hh", "hpp", "hxx", "inc"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    FileUnreadable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("record {record} in {path}: malformed record: {message}")]
    Malformed {
        path: String,
        record: usize,
        message: String,
    },
    #[error("record {record}: unknown file {file:?}")]
    UnknownFile { record: usize, file: String },
    #[error("record {record}: line {line} out of range for {file:?} ({line_count} lines)")]
    LineOutOfRange {
        record: usize,
        file: String,
        line: usize,
        line_count: usize,
    },
    #[error("record {record}: duplicate label for {file:?}:{line}")]
    DuplicateLabel { record: usize, file: String, line: usize },
    #[error("record {record}: invalid function span {id:?}: {message}")]
    InvalidSpan { record: usize, id: String, message: String },
    #[error("need {requested} unlabelled non-blank lines, corpus has {available}")]
    InsufficientPopulation { requested: usize, available: usize },
}

/// A source file split into newline-stripped lines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceFile {
    pub path: String,
    pub lines: Vec<String>,
    /// Whether the original content ended with a newline.
    pub trailing_newline: bool,
    /// Set when undecodable bytes were replaced with U+FFFD.
    pub lossy: bool,
    /// Hex SHA-256 of the raw bytes.
    pub digest: String,
}

impl SourceFile {
    pub fn from_bytes(path: impl Into<String>, bytes: &[u8]) -> Self {
        let digest = hex::encode(Sha256::digest(bytes));
        let text = String::from_utf8_lossy(bytes);
        let lossy = matches!(text, std::borrow::Cow::Owned(_));
        let trailing_newline = text.ends_with('\n');
        let body = if trailing_newline {
            &text[..text.len() - 1]
        } else {
            &text[..]
        };
        let lines = if text.is_empty() {
            Vec::new()
        } else {
            body.split('\n').map(str::to_owned).collect()
        };
        SourceFile {
            path: path.into(),
            lines,
            trailing_newline,
            lossy,
            digest,
        }
    }

    pub fn from_text(path: impl Into<String>, text: &str) -> Self {
        Self::from_bytes(path, text.as_bytes())
    }

    pub fn line_count(&self) -> usize {
        self.lines.len()
    }

    /// 1-based line access.
    pub fn line(&self, line_no: usize) -> Option<&str> {
        line_no
            .checked_sub(1)
            .and_then(|i| self.lines.get(i))
            .map(String::as_str)
    }

    pub fn is_blank(&self, line_no: usize) -> bool {
        self.line(line_no).is_none_or(|l| l.trim().is_empty())
    }

    /// Reassembles the text; inverse of [`SourceFile::from_text`] for valid UTF-8.
    pub fn to_text(&self) -> String {
        let mut out = self.lines.join("\n");
        if self.trailing_newline {
            out.push('\n');
        }
        out
    }
}

pub fn load_source(path: impl AsRef<Path>) -> Result<SourceFile, CorpusError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| CorpusError::FileUnreadable {
        path: path.display().to_string(),
        source,
    })?;
    Ok(SourceFile::from_bytes(path.display().to_string(), &bytes))
}

/// A set of source files keyed by their identity path.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub root: Option<PathBuf>,
    files: BTreeMap<String, SourceFile>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_files(files: impl IntoIterator<Item = SourceFile>) -> Self {
        let mut corpus = Corpus::new();
        for file in files {
            corpus.insert(file);
        }
        corpus
    }

    /// Loads every file under `root` with a C-family extension. A path to a
    /// single file loads just that file under its file name.
    pub fn load_dir(root: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let root = root.as_ref();
        let mut corpus = Corpus {
            root: Some(root.to_path_buf()),
            files: BTreeMap::new(),
        };
        if root.is_file() {
            let mut file = load_source(root)?;
            file.path = root
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| file.path.clone());
            corpus.insert(file);
            return Ok(corpus);
        }
        for entry in WalkDir::new(root).sort_by_file_name() {
            let entry = entry.map_err(|e| CorpusError::FileUnreadable {
                path: e
                    .path()
                    .map(|p| p.display().to_string())
                    .unwrap_or_else(|| root.display().to_string()),
                source: e
                    .into_io_error()
                    .unwrap_or_else(|| std::io::Error::other("directory walk failed")),
            })?;
            if !entry.file_type().is_file() {
                continue;
            }
            let has_source_ext = entry
                .path()
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| SOURCE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
            if !has_source_ext {
                continue;
            }
            let rel = entry.path().strip_prefix(root).unwrap_or(entry.path());
            let id = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            let mut file = load_source(entry.path())?;
            file.path = id;
            corpus.insert(file);
        }
        Ok(corpus)
    }

    pub fn insert(&mut self, file: SourceFile) {
        self.files.insert(file.path.clone(), file);
    }

    pub fn get(&self, path: &str) -> Option<&SourceFile> {
        self.files.get(path)
    }

    pub fn files(&self) -> impl Iterator<Item = &SourceFile> {
        self.files.values()
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    /// File path → content digest, in path order.
    pub fn digests(&self) -> BTreeMap<String, String> {
        self.files.iter().map(|(k, f)| (k.clone(), f.digest.clone())).collect()
    }

    /// Every non-blank line in (file, line) order.
    pub fn non_blank_lines(&self) -> Vec<(String, usize)> {
        self.files
            .values()
            .flat_map(|f| {
                (1..=f.line_count())
                    .filter(|&n| !f.is_blank(n))
                    .map(|n| (f.path.clone(), n))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Vulnerable,
    NonVulnerable,
    Patched,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Vulnerable => "vulnerable",
            Label::NonVulnerable => "non_vulnerable",
            Label::Patched => "patched",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vulnerable" => Ok(Label::Vulnerable),
            "non_vulnerable" => Ok(Label::NonVulnerable),
            "patched" => Ok(Label::Patched),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineLabel {
    pub file: String,
    #[serde(rename = "line")]
    pub line_no: usize,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub function_id: Option<String>,
}

impl LineLabel {
    pub fn key(&self) -> (&str, usize) {
        (&self.file, self.line_no)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionSpan {
    pub id: String,
    pub file: String,
    pub start_line: usize,
    pub end_line: usize,
}

impl FunctionSpan {
    pub fn contains(&self, file: &str, line: usize) -> bool {
        self.file == file && self.start_line <= line && line <= self.end_line
    }
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::FileUnreadable {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = i + 1;
        let value = serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
            path: path.display().to_string(),
            record,
            message: e.to_string(),
        })?;
        out.push((record, value));
    }
    Ok(out)
}

/// Parses a label file and rejects duplicates, without checking file bounds.
pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<LineLabel>, CorpusError> {
    let records = read_jsonl::<LineLabel>(path.as_ref())?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(records.len());
    for (record, label) in records {
        if label.line_no == 0 {
            return Err(CorpusError::LineOutOfRange {
                record,
                file: label.file,
                line: 0,
                line_count: 0,
            });
        }
        if !seen.insert((label.file.clone(), label.line_no)) {
            return Err(CorpusError::DuplicateLabel {
                record,
                file: label.file,
                line: label.line_no,
            });
        }
        out.push(label);
    }
    Ok(out)
}

/// Parses a label file and validates every record against the corpus.
pub fn load_labels(path: impl AsRef<Path>, corpus: &Corpus) -> Result<Vec<LineLabel>, CorpusError> {
    let records = read_jsonl::<LineLabel>(path.as_ref())?;
    validate_labels(records, corpus)
}

pub fn validate_labels(
    records: impl IntoIterator<Item = (usize, LineLabel)>,
    corpus: &Corpus,
) -> Result<Vec<LineLabel>, CorpusError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (record, label) in records {
        let Some(file) = corpus.get(&label.file) else {
            return Err(CorpusError::UnknownFile {
                record,
                file: label.file,
            });
        };
        if label.line_no == 0 || label.line_no > file.line_count() {
            return Err(CorpusError::LineOutOfRange {
                record,
                line: label.line_no,
                line_count: file.line_count(),
                file: label.file,
            });
        }
        if !seen.insert((label.file.clone(), label.line_no)) {
            return Err(CorpusError::DuplicateLabel {
                record,
                file: label.file,
                line: label.line_no,
            });
        }
        out.push(label);
    }
    Ok(out)
}

/// Parses a function-span file. With a corpus, spans are also checked against
/// file bounds.
pub fn load_functions(path: impl AsRef<Path>, corpus: Option<&Corpus>) -> Result<Vec<FunctionSpan>, CorpusError> {
    let records = read_jsonl::<FunctionSpan>(path.as_ref())?;
    validate_functions(records, corpus)
}

pub fn validate_functions(
    records: impl IntoIterator<Item = (usize, FunctionSpan)>,
    corpus: Option<&Corpus>,
) -> Result<Vec<FunctionSpan>, CorpusError> {
    let mut out: Vec<(usize, FunctionSpan)> = Vec::new();
    let mut ids = HashSet::new();
    for (record, span) in records {
        let bad = |message: &str| CorpusError::InvalidSpan {
            record,
            id: span.id.clone(),
            message: message.to_owned(),
        };
        if span.start_line == 0 || span.end_line < span.start_line {
            return Err(bad("start_line must be >= 1 and <= end_line"));
        }
        if !ids.insert(span.id.clone()) {
            return Err(bad("duplicate id"));
        }
        if let Some(corpus) = corpus {
            let Some(file) = corpus.get(&span.file) else {
                return Err(CorpusError::UnknownFile {
                    record,
                    file: span.file,
                });
            };
            if span.end_line > file.line_count() {
                return Err(CorpusError::LineOutOfRange {
                    record,
                    line: span.end_line,
                    line_count: file.line_count(),
                    file: span.file,
                });
            }
        }
        for (_, other) in out.iter().filter(|(_, o)| o.file == span.file) {
            let disjoint = span.end_line < other.start_line || other.end_line < span.start_line;
            let nested = (span.start_line <= other.start_line && other.end_line <= span.end_line)
                || (other.start_line <= span.start_line && span.end_line <= other.end_line);
            if !disjoint && !nested {
                return Err(bad(&format!("partially overlaps {:?}", other.id)));
            }
        }
        out.push((record, span));
    }
    Ok(out.into_iter().map(|(_, s)| s).collect())
}

/// Draws `n` non-blank, unlabelled lines as `non_vulnerable` labels.
///
/// The population is enumerated in (file, line) order and sampled with a
/// ChaCha8 stream seeded from `seed`; the result is sorted by (file, line).
pub fn sample_negatives(
    corpus: &Corpus,
    labels: &[LineLabel],
    n: usize,
    seed: u64,
) -> Result<Vec<LineLabel>, CorpusError> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let taken: BTreeSet<(&str, usize)> = labels.iter().map(LineLabel::key).collect();
    let population: Vec<(String, usize)> = corpus
        .non_blank_lines()
        .into_iter()
        .filter(|(f, l)| !taken.contains(&(f.as_str(), *l)))
        .collect();
    if population.len() < n {
        return Err(CorpusError::InsufficientPopulation {
            requested: n,
            available: population.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = index::sample(&mut rng, population.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked
        .into_iter()
        .map(|i| {
            let (file, line_no) = population[i].clone();
            LineLabel {
                file,
                line_no,
                label: Label::NonVulnerable,
                function_id: None,
            }
        })
        .collect())
}
