//! Line-level anomaly scanning for C/C++ sources.
//!
//! Each line is withheld from a fill-in-the-middle code model, which is asked
//! to reconstruct it from surrounding context. Lines the model fails to
//! reconstruct (high token loss, no exact match) are ranked as likely
//! vulnerable. The crate covers context selection, prompting, scoring,
//! filtering and the statistical evaluation of the resulting rankings.

pub mod analytics;
pub mod context;
pub mod corpus;
pub mod fim;
pub mod harness;
pub mod scoring;

pub use analytics::{EvaluationReport, MannWhitneyResult, TopKTable};
pub use context::{BraceIndex, ContextWindow, Strategy};
pub use corpus::{Corpus, FunctionSpan, Label, LineLabel, SourceFile};
pub use fim::{Backend, BackendError, JudgmentCache, MockBackend, ModelJudgment, RemoteBackend, SentinelConfig};
pub use harness::{ScanConfig, Target};
pub use scoring::{AnomalyRecord, FilterSet, ScoreFn};
