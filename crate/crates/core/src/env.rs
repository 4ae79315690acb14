//! Synthetic detection environment.
//!
//! Each sample carries nine features in three blocks of three,
//! `[signal_a, signal_b, cue]`. The block matching the sample's difficulty
//! (easy → 1, medium → 2, hard → 3) carries the label:
//! `signal = y * strength * (1, 0.5) + noise` and `cue = 1 + noise`. The
//! other blocks are decoys whose signal sign is drawn independently of the
//! label and whose cue is `0 + noise`. The observed label is the clean label
//! flipped with probability `label_noise`.
//!
//! A thinking mode observes only its visible blocks (see [`observe`]), so a
//! quick response cannot do better than chance on hard samples.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{Label, ThinkingMode};

pub const BLOCK_WIDTH: usize = 3;
pub const NUM_BLOCKS: usize = 3;
pub const FEATURE_DIM: usize = BLOCK_WIDTH * NUM_BLOCKS;

/// Direction of the label signal inside a block.
const SIGNAL_DIRECTION: [f64; 2] = [1.0, 0.5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard];

    /// Zero-based index of the informative block.
    pub fn block(self) -> usize {
        self as usize
    }

    /// Cheapest mode that can observe the informative block.
    pub fn cheapest_sufficient_mode(self) -> ThinkingMode {
        ThinkingMode::ALL[self.block()]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSample {
    pub id: u64,
    pub features: Vec<f64>,
    pub difficulty: Difficulty,
    pub truth: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    /// Probability of easy, medium and hard samples.
    pub mixture: [f64; 3],
    pub label_noise: f64,
    pub feature_noise: f64,
    pub signal_strength: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            mixture: [0.5, 0.3, 0.2],
            label_noise: 0.05,
            feature_noise: 0.3,
            signal_strength: 1.0,
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.mixture.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return bad(format!("mixture weights must be nonnegative, got {:?}", self.mixture));
        }
        let total: f64 = self.mixture.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("mixture weights must sum to 1, got {total}"));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return bad(format!("label_noise must lie in [0, 0.5), got {}", self.label_noise));
        }
        if !self.feature_noise.is_finite() || self.feature_noise < 0.0 {
            return bad(format!("feature_noise must be >= 0, got {}", self.feature_noise));
        }
        if !self.signal_strength.is_finite() || self.signal_strength <= 0.0 {
            return bad(format!("signal_strength must be > 0, got {}", self.signal_strength));
        }
        Ok(())
    }
}

/// Draws `n` i.i.d. samples with ids `0..n`. Deterministic in `config.seed`.
pub fn generate(config: &EnvConfig, n: usize) -> Result<Vec<SynthSample>> {
    config.validate()?;
    if n == 0 {
        return Err(Error::InvalidConfig("sample count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let difficulty_dist = WeightedIndex::new(config.mixture)
        .map_err(|e| Error::InvalidConfig(format!("mixture: {e}")))?;
    Ok((0..n as u64)
        .map(|id| draw_sample(config, &difficulty_dist, &mut rng, id))
        .collect())
}

fn draw_sample<R: Rng>(
    config: &EnvConfig,
    difficulty_dist: &WeightedIndex<f64>,
    rng: &mut R,
    id: u64,
) -> SynthSample {
    let difficulty = Difficulty::ALL[difficulty_dist.sample(rng)];
    let clean = if rng.random_bool(0.5) { Label::Fake } else { Label::Real };
    let sigma = config.feature_noise;
    let mut features = Vec::with_capacity(FEATURE_DIM);
    for block in 0..NUM_BLOCKS {
        let informative = block == difficulty.block();
        let label = match (informative, rng.random_bool(0.5)) {
            (true, _) => clean,
            (false, true) => Label::Fake,
            (false, false) => Label::Real,
        };
        let sign = label_sign(label);
        for dir in SIGNAL_DIRECTION {
            let noise: f64 = rng.sample(StandardNormal);
            features.push(sign * config.signal_strength * dir + sigma * noise);
        }
        let noise: f64 = rng.sample(StandardNormal);
        features.push(if informative { 1.0 } else { 0.0 } + sigma * noise);
    }
    let truth = if rng.random_bool(config.label_noise) {
        clean.flipped()
    } else {
        clean
    };
    SynthSample {
        id,
        features,
        difficulty,
        truth,
    }
}

fn label_sign(label: Label) -> f64 {
    match label {
        Label::Fake => 1.0,
        Label::Real => -1.0,
    }
}

/// Masks the blocks `mode` cannot see. The feature width must be a multiple
/// of the block count.
pub fn observe(features: &[f64], mode: ThinkingMode) -> Vec<f64> {
    let mut out = features.to_vec();
    observe_in_place(&mut out, mode);
    out
}

pub fn observe_in_place(features: &mut [f64], mode: ThinkingMode) {
    let width = features.len() / NUM_BLOCKS;
    let visible = mode.visible_blocks() * width;
    features[visible..].iter_mut().for_each(|x| *x = 0.0);
}

/// Bayes-optimal prediction for a mode's view of a sample under the known
/// generative model (ties go to `fake`).
///
/// Block `j` is informative with posterior weight proportional to
/// `mixture[j] * exp((cue_j - 1/2) / sigma^2)` when visible and `mixture[j]`
/// when hidden; signal magnitudes carry no information about which block is
/// informative because decoy and informative signs are both symmetric a
/// priori. Given that block `j` is informative,
/// `P(fake) - 1/2 = tanh(strength * (d . x_j) / sigma^2) / 2`, and decoys say
/// nothing about the label, so the sign of
/// `sum_j post_j * tanh(strength * (d . x_j) / sigma^2)` over visible blocks
/// decides. Label noise flips both classes symmetrically and does not move
/// the decision.
pub fn bayes_predict(config: &EnvConfig, features: &[f64], mode: ThinkingMode) -> Label {
    let var = (config.feature_noise * config.feature_noise).max(1e-300);
    let visible = mode.visible_blocks();
    let log_w: Vec<f64> = (0..NUM_BLOCKS)
        .map(|b| {
            let prior = config.mixture[b].ln();
            if b < visible {
                prior + (features[b * BLOCK_WIDTH + 2] - 0.5) / var
            } else {
                prior
            }
        })
        .collect();
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let evidence: f64 = (0..visible)
        .map(|b| {
            let score: f64 = features[b * BLOCK_WIDTH..b * BLOCK_WIDTH + 2]
                .iter()
                .zip(SIGNAL_DIRECTION)
                .map(|(x, d)| x * d)
                .sum();
            // Unnormalized posterior weight; normalization does not change the sign.
            (log_w[b] - max).exp() * (config.signal_strength * score / var).tanh()
        })
        .sum();
    if evidence >= 0.0 {
        Label::Fake
    } else {
        Label::Real
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn observe_masks() {
        let x: Vec<f64> = (1..=9).map(f64::from).collect();
        assert_eq!(observe(&x, ThinkingMode::ProspectiveSimulation), x);
        assert_eq!(
            observe(&x, ThinkingMode::QuickResponse),
            vec![1.0, 2.0, 3.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
        );
        assert_eq!(
            observe(&x, ThinkingMode::SemanticAnalysis),
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn pure_easy_mixture() {
        let cfg = EnvConfig {
            mixture: [1.0, 0.0, 0.0],
            ..Default::default()
        };
        let s = generate(&cfg, 1000).unwrap();
        assert!(s.iter().all(|s| s.difficulty == Difficulty::Easy));
        assert!(s.iter().all(|s| s.features.len() == FEATURE_DIM));
    }

    #[test]
    fn seeded_generation_is_deterministic() {
        let cfg = EnvConfig {
            seed: 11,
            ..Default::default()
        };
        assert_eq!(generate(&cfg, 200).unwrap(), generate(&cfg, 200).unwrap());
        let other = EnvConfig { seed: 12, ..cfg.clone() };
        assert_ne!(generate(&other, 200).unwrap(), generate(&cfg, 200).unwrap());
    }

    #[test]
    fn invalid_configs_rejected() {
        let base = EnvConfig::default();
        for cfg in [
            EnvConfig { mixture: [0.5, 0.5, 0.5], ..base.clone() },
            EnvConfig { mixture: [1.5, -0.5, 0.0], ..base.clone() },
            EnvConfig { label_noise: 0.5, ..base.clone() },
            EnvConfig { feature_noise: -1.0, ..base.clone() },
            EnvConfig { signal_strength: 0.0, ..base.clone() },
        ] {
            assert!(generate(&cfg, 10).is_err(), "{cfg:?}");
        }
        assert!(generate(&base, 0).is_err());
    }

    #[test]
    fn cheapest_modes() {
        assert_eq!(Difficulty::Easy.cheapest_sufficient_mode(), ThinkingMode::QuickResponse);
        assert_eq!(Difficulty::Medium.cheapest_sufficient_mode(), ThinkingMode::SemanticAnalysis);
        assert_eq!(Difficulty::Hard.cheapest_sufficient_mode(), ThinkingMode::ProspectiveSimulation);
    }
}
