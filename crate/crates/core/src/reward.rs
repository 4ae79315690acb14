//! Per-response scalar reward: detection accuracy plus reasoning format.

use serde::{Deserialize, Serialize};

use crate::grammar::{Label, ParsedResponse};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_acc: f64,
    pub r_format: f64,
    pub length_penalty: f64,
    pub total: f64,
}

/// Reward weights. `length_penalty_per_token` is an opt-in knob for studying
/// token usage; it is zero by default and not part of the base reward.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    #[serde(default)]
    pub length_penalty_per_token: f64,
}

impl RewardConfig {
    pub fn score(&self, parsed: &ParsedResponse, truth: Label) -> RewardBreakdown {
        let r_acc = if parsed.answer == Some(truth) { 1.0 } else { 0.0 };
        let r_format = if parsed.well_formed && parsed.mode.is_some() {
            1.0
        } else {
            0.0
        };
        let length_penalty = self.length_penalty_per_token * f64::from(parsed.token_count);
        RewardBreakdown {
            r_acc,
            r_format,
            length_penalty,
            total: r_acc + r_format - length_penalty,
        }
    }
}

/// Scores with the default (penalty-free) configuration.
pub fn score(parsed: &ParsedResponse, truth: Label) -> RewardBreakdown {
    RewardConfig::default().score(parsed, truth)
}
