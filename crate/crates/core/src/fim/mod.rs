//! Fill-in-the-middle prompting and model backends.

mod backend;
mod cache;
mod prompt;
mod remote;

pub use backend::{
    truncate_at_stop, Backend, BackendError, MockBackend, MockReply, MockTable, ModelJudgment, MOCK_MANGLED,
};
pub use cache::{CacheCorrupt, CacheError, CacheKey, CacheStats, JudgmentCache, STORE_FILE};
pub use prompt::{assemble_prompt, FimPrompt, SentinelConfig, SentinelError};
pub use remote::{ErrorReply, JudgeReply, JudgeRequest, RemoteBackend, CONTEXT_OVERFLOW_CODE};
