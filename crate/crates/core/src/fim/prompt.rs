use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::ContextWindow;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SentinelError {
    #[error("sentinel tokens must be non-empty")]
    Empty,
    #[error("sentinel tokens must be mutually distinct")]
    NotDistinct,
    #[error("unknown sentinel profile {0:?} (known: codellama, starcoder, deepseek)")]
    UnknownProfile(String),
}

/// Model-specific FIM sentinel tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SentinelConfig {
    pub prefix_token: String,
    pub suffix_token: String,
    pub middle_token: String,
    pub stop_sequences: Vec<String>,
    pub backend_id: String,
}

impl SentinelConfig {
    pub fn new(
        prefix_token: impl Into<String>,
        suffix_token: impl Into<String>,
        middle_token: impl Into<String>,
        backend_id: impl Into<String>,
    ) -> Result<Self, SentinelError> {
        let config = SentinelConfig {
            prefix_token: prefix_token.into(),
            suffix_token: suffix_token.into(),
            middle_token: middle_token.into(),
            stop_sequences: vec!["\n".to_owned()],
            backend_id: backend_id.into(),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), SentinelError> {
        let tokens = [&self.prefix_token, &self.suffix_token, &self.middle_token];
        if tokens.iter().any(|t| t.is_empty()) {
            return Err(SentinelError::Empty);
        }
        if tokens[0] == tokens[1] || tokens[1] == tokens[2] || tokens[0] == tokens[2] {
            return Err(SentinelError::NotDistinct);
        }
        Ok(())
    }

    /// Built-in sentinel sets for common FIM-trained model families.
    pub fn profile(name: &str) -> Result<Self, SentinelError> {
        let (pre, suf, mid) = match name {
            "codellama" => ("<PRE>", "<SUF>", "<MID>"),
            "starcoder" => ("<fim_prefix>", "<fim_suffix>", "<fim_middle>"),
            "deepseek" => ("<｜fim▁begin｜>", "<｜fim▁hole｜>", "<｜fim▁end｜>"),
            other => return Err(SentinelError::UnknownProfile(other.to_owned())),
        };
        Self::new(pre, suf, mid, name)
    }

    /// Stable text form for cache keys.
    pub fn descriptor(&self) -> String {
        serde_json::to_string(&(
            &self.backend_id,
            &self.prefix_token,
            &self.suffix_token,
            &self.middle_token,
            &self.stop_sequences,
        ))
        .expect("string tuple serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FimPrompt {
    pub body: String,
    /// The withheld line.
    pub ground_truth: String,
}

/// Lays out `prefix_token`, the prefix (each line newline-terminated),
/// `suffix_token`, the suffix (newline-separated), then `middle_token`.
pub fn assemble_prompt(ctx: &ContextWindow, ground_truth: &str, sentinels: &SentinelConfig) -> FimPrompt {
    let prefix_len: usize = ctx.prefix.iter().map(|l| l.len() + 1).sum();
    let suffix_len: usize = ctx.suffix.iter().map(|l| l.len() + 1).sum();
    let mut body = String::with_capacity(
        prefix_len
            + suffix_len
            + sentinels.prefix_token.len()
            + sentinels.suffix_token.len()
            + sentinels.middle_token.len(),
    );
    body.push_str(&sentinels.prefix_token);
    for line in &ctx.prefix {
        body.push_str(line);
        body.push('\n');
    }
    body.push_str(&sentinels.suffix_token);
    body.push_str(&ctx.suffix.join("\n"));
    body.push_str(&sentinels.middle_token);
    FimPrompt {
        body,
        ground_truth: ground_truth.to_owned(),
    }
}
