//! Adaptive thinking-mode policy optimization on a synthetic detection task.
//!
//! The crate is organized bottom-up:
//!
//! * [`grammar`]: thinking modes and the `<think>`/`<answer>` response language
//! * [`reward`]: accuracy + format rewards
//! * [`advantage`]: sample-level, mode-level and mixed group advantages
//! * [`policy`]: factored softmax policy with analytic gradients
//! * [`env`]: difficulty-tiered synthetic samples
//! * [`sft`] and [`rl`]: the two training stages
//! * [`metrics`]: accuracy/F1/precision/recall/avg-token reports
//! * [`config`] and [`pipeline`]: experiment configuration and artifact I/O

pub mod advantage;
pub mod config;
pub mod env;
pub mod error;
pub mod grammar;
pub mod metrics;
pub mod pipeline;
pub mod policy;
pub mod reward;
pub mod rl;
pub mod sft;

pub use advantage::{mixed_advantage, mode_advantage, sample_advantage, Algorithm, AdvantageVector, GroupRollout, ModeStats};
pub use env::{generate, observe, Difficulty, EnvConfig, SynthSample};
pub use error::{Error, Result};
pub use grammar::{classify_mode, parse, render, ActionKind, Label, ParsedResponse, ResponseGrammar, ThinkingMode, TokenCosts};
pub use metrics::{compute_metrics, render_report, EvalRecord, MetricReport, ReportFormat};
pub use policy::{PolicyParams, PolicySnapshot, StructuredAction};
pub use reward::{score, RewardBreakdown, RewardConfig};
pub use rl::{rl_train, RlConfig, StepStats};
pub use sft::{sft_loss, sft_train, SftConfig, SftExample};
