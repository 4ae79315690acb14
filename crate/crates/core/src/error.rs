use crate::grammar::{ActionKind, ThinkingMode};
use crate::policy::PolicyParams;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("mode {mode} requires think text for action {action}")]
    MissingActionText { mode: ThinkingMode, action: ActionKind },

    #[error("action {action} is not part of mode {mode}")]
    ExtraActionText { mode: ThinkingMode, action: ActionKind },

    #[error("think text for action {0} contains reserved markup (tags or segment labels)")]
    ReservedMarkup(ActionKind),

    #[error("group normalization needs at least 2 responses, got {0}")]
    GroupTooSmall(usize),

    #[error("length mismatch for {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("no records to evaluate")]
    EmptyRecords,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("non-finite {what} at step {step}")]
    NonFinite { what: &'static str, step: usize },

    /// Training produced a non-finite value; `last_good` holds the parameters
    /// from before the failing update.
    #[error("training diverged at step {step}: non-finite {what}")]
    Diverged {
        step: usize,
        what: &'static str,
        last_good: Box<PolicyParams>,
    },

    #[error("unknown report format {0:?} (expected table, csv or json)")]
    UnknownFormat(String),

    #[error("malformed {kind} file: {reason}")]
    Malformed { kind: &'static str, reason: String },

    #[error("{}: {source}", path.display())]
    File {
        path: std::path::PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
