use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::prompt::FimPrompt;

/// A backend's reply for one masked line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelJudgment {
    /// Greedy completion, cut at the first stop sequence.
    pub generated: String,
    /// Teacher-forced cross-entropy (nats) of each ground-truth token.
    pub token_losses: Vec<f64>,
    pub truncated: bool,
    pub backend_id: String,
    /// Context reductions needed before the backend accepted the prompt.
    #[serde(default)]
    pub context_shrinks: u32,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("malformed backend reply: {0}")]
    MalformedReply(String),
    #[error("prompt exceeds backend context: {0}")]
    ContextOverflow(String),
}

/// Anything that can reconstruct a masked line.
///
/// Implementations must be deterministic: the same prompt always yields the
/// same judgment.
pub trait Backend: Send + Sync {
    /// Identifies the model and its configuration; part of every cache key.
    fn id(&self) -> String;

    fn judge(&self, prompt: &FimPrompt) -> Result<ModelJudgment, BackendError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn id(&self) -> String {
        (**self).id()
    }

    fn judge(&self, prompt: &FimPrompt) -> Result<ModelJudgment, BackendError> {
        (**self).judge(prompt)
    }
}

/// Cuts `text` at the earliest occurrence of any stop sequence.
pub fn truncate_at_stop<'a>(text: &'a str, stops: &[String]) -> &'a str {
    let cut = stops
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min()
        .unwrap_or(text.len());
    &text[..cut]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockReply {
    pub generated: String,
    pub token_losses: Vec<f64>,
}

/// Scripted replies keyed by the trimmed ground-truth line.
///
/// Lines absent from `lines` that contain one of `corrupt_markers` are
/// replaced by [`MOCK_MANGLED`] with `corrupt_losses`; every other line is
/// reconstructed perfectly with zero loss.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockTable {
    #[serde(default)]
    pub lines: BTreeMap<String, MockReply>,
    #[serde(default)]
    pub corrupt_markers: Vec<String>,
    #[serde(default = "default_corrupt_losses")]
    pub corrupt_losses: Vec<f64>,
    /// Prompts with a longer body are rejected with a context overflow.
    #[serde(default)]
    pub max_prompt_chars: Option<usize>,
}

pub const MOCK_MANGLED: &str = "__mangled__;";

fn default_corrupt_losses() -> Vec<f64> {
    vec![2.0, 2.0]
}

impl MockTable {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| BackendError::Unavailable(format!("cannot read mock table {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| BackendError::MalformedReply(format!("mock table {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    table: MockTable,
    id: String,
}

impl MockBackend {
    pub fn new(table: MockTable) -> Self {
        let digest = Sha256::digest(serde_json::to_vec(&table).expect("mock table serializes"));
        let id = format!("mock:{}", &hex::encode(digest)[..16]);
        MockBackend { table, id }
    }

    /// Reconstructs every line perfectly.
    pub fn perfect() -> Self {
        Self::new(MockTable::default())
    }

    /// Mangles every line containing one of `markers`.
    pub fn corruptor<S: Into<String>>(markers: impl IntoIterator<Item = S>) -> Self {
        Self::new(MockTable {
            corrupt_markers: markers.into_iter().map(Into::into).collect(),
            corrupt_losses: default_corrupt_losses(),
            ..MockTable::default()
        })
    }

    pub fn table(&self) -> &MockTable {
        &self.table
    }
}

impl Backend for MockBackend {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn judge(&self, prompt: &FimPrompt) -> Result<ModelJudgment, BackendError> {
        if let Some(max) = self.table.max_prompt_chars {
            let len = prompt.body.chars().count();
            if len > max {
                return Err(BackendError::ContextOverflow(format!("{len} chars > {max}")));
            }
        }
        let key = prompt.ground_truth.trim();
        let (generated, token_losses) = if let Some(reply) = self.table.lines.get(key) {
            (reply.generated.clone(), reply.token_losses.clone())
        } else if self
            .table
            .corrupt_markers
            .iter()
            .any(|m| !m.is_empty() && prompt.ground_truth.contains(m.as_str()))
        {
            (MOCK_MANGLED.to_owned(), self.table.corrupt_losses.clone())
        } else if key.is_empty() {
            (String::new(), Vec::new())
        } else {
            (key.to_owned(), vec![0.0])
        };
        let stops = ["\n".to_owned()];
        let cut = truncate_at_stop(&generated, &stops);
        Ok(ModelJudgment {
            truncated: cut.len() != generated.len(),
            generated: cut.to_owned(),
            token_losses,
            backend_id: self.id.clone(),
            context_shrinks: 0,
        })
    }
}
