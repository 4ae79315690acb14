//! Group-relative advantages.
//!
//! For a group of `G` responses to one sample:
//!
//! * sample-level: `A^S_i = (R_i - mean(R)) / std(R)`
//! * mode-level: every classifiable response receives the standardized
//!   average reward of its thinking mode, `A^M_i = (R^m_i - mean(R^m)) / std(R^m)`
//!   where the statistics run over the `n` modes present in the group
//! * mixed: `A_i = A^S_i + A^M_i`
//!
//! All standard deviations are population deviations. A deviation below
//! [`STD_EPS`] zeroes the corresponding advantage.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{Label, ParsedResponse, ThinkingMode};
use crate::policy::StructuredAction;
use crate::reward::RewardBreakdown;

pub const STD_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    /// Sample-level advantage only.
    #[serde(rename = "vanilla_grpo", alias = "grpo")]
    VanillaGrpo,
    /// Sample-level plus mode-level advantage.
    #[serde(rename = "mmpo")]
    Mmpo,
}

impl Algorithm {
    pub const ALL: [Algorithm; 2] = [Algorithm::VanillaGrpo, Algorithm::Mmpo];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::VanillaGrpo => "vanilla_grpo",
            Algorithm::Mmpo => "mmpo",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vanilla_grpo" | "grpo" | "vanilla" => Ok(Algorithm::VanillaGrpo),
            "mmpo" => Ok(Algorithm::Mmpo),
            other => Err(Error::InvalidConfig(format!("unknown algorithm {other:?}"))),
        }
    }
}

/// `G` responses drawn from the old policy for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRollout {
    pub sample_id: u64,
    pub features: Vec<f64>,
    pub truth: Label,
    pub actions: Vec<StructuredAction>,
    pub responses: Vec<ParsedResponse>,
    pub rewards: Vec<RewardBreakdown>,
    pub modes: Vec<Option<ThinkingMode>>,
    pub old_logprobs: Vec<f64>,
    pub ref_logprobs: Vec<f64>,
}

impl GroupRollout {
    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn reward_totals(&self) -> Vec<f64> {
        self.rewards.iter().map(|r| r.total).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.responses.len();
        if g < 2 {
            return Err(Error::GroupTooSmall(g));
        }
        for (what, got) in [
            ("actions", self.actions.len()),
            ("rewards", self.rewards.len()),
            ("modes", self.modes.len()),
            ("old_logprobs", self.old_logprobs.len()),
            ("ref_logprobs", self.ref_logprobs.len()),
        ] {
            if got != g {
                return Err(Error::LengthMismatch {
                    what,
                    expected: g,
                    got,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageVector {
    pub a_sample: Vec<f64>,
    pub a_mode: Vec<f64>,
    pub a_mixed: Vec<f64>,
}

/// Per-mode average rewards of one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeStats {
    /// `(mode, average reward, response count)` for each mode present, in
    /// depth order.
    pub averages: Vec<(ThinkingMode, f64, usize)>,
}

impl ModeStats {
    pub fn compute(rewards: &[f64], modes: &[Option<ThinkingMode>]) -> Result<Self> {
        if rewards.len() != modes.len() {
            return Err(Error::LengthMismatch {
                what: "modes",
                expected: rewards.len(),
                got: modes.len(),
            });
        }
        let mut sums = [0.0; 3];
        let mut counts = [0usize; 3];
        for (&r, m) in rewards.iter().zip(modes) {
            if let Some(m) = m {
                sums[m.index()] += r;
                counts[m.index()] += 1;
            }
        }
        let averages = ThinkingMode::ALL
            .into_iter()
            .filter(|m| counts[m.index()] > 0)
            .map(|m| (m, sums[m.index()] / counts[m.index()] as f64, counts[m.index()]))
            .collect();
        Ok(Self { averages })
    }

    /// Number of distinct classifiable modes present.
    pub fn n(&self) -> usize {
        self.averages.len()
    }

    pub fn average(&self, mode: ThinkingMode) -> Option<f64> {
        self.averages.iter().find(|a| a.0 == mode).map(|a| a.1)
    }
}

fn mean_and_population_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn sample_advantage(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::GroupTooSmall(rewards.len()));
    }
    let (mean, std) = mean_and_population_std(rewards);
    if std < STD_EPS {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

pub fn mode_advantage(rewards: &[f64], modes: &[Option<ThinkingMode>]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::GroupTooSmall(rewards.len()));
    }
    let stats = ModeStats::compute(rewards, modes)?;
    let mut out = vec![0.0; rewards.len()];
    if stats.n() < 2 {
        return Ok(out);
    }
    let avgs: Vec<f64> = stats.averages.iter().map(|a| a.1).collect();
    let (mean, std) = mean_and_population_std(&avgs);
    if std < STD_EPS {
        return Ok(out);
    }
    let mut normalized = [0.0; 3];
    for &(mode, avg, _) in &stats.averages {
        normalized[mode.index()] = (avg - mean) / std;
    }
    for (a, m) in out.iter_mut().zip(modes) {
        if let Some(m) = m {
            *a = normalized[m.index()];
        }
    }
    Ok(out)
}

/// Mixed advantage for one group. Under [`Algorithm::VanillaGrpo`] the
/// mode-level term is identically zero.
pub fn mixed_advantage(group: &GroupRollout, algorithm: Algorithm) -> Result<AdvantageVector> {
    group.validate()?;
    let rewards = group.reward_totals();
    let a_sample = sample_advantage(&rewards)?;
    let a_mode = match algorithm {
        Algorithm::Mmpo => mode_advantage(&rewards, &group.modes)?,
        Algorithm::VanillaGrpo => vec![0.0; rewards.len()],
    };
    let a_mixed = a_sample.iter().zip(&a_mode).map(|(s, m)| s + m).collect();
    Ok(AdvantageVector {
        a_sample,
        a_mode,
        a_mixed,
    })
}
