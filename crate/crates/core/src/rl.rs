//! Group-relative policy optimization with a clipped surrogate and a KL
//! penalty towards a frozen reference policy.
//!
//! Per sample, `G` responses are drawn from the sampling policy `pi_old` and
//! the loss is
//!
//! ```text
//! L = -(1/G) sum_i [ min(rho_i A_i, clip(rho_i, 1-eps, 1+eps) A_i) - beta * k3_i ]
//! rho_i = pi(y_i) / pi_old(y_i)
//! k3_i  = r_i - ln r_i - 1,  r_i = pi_ref(y_i) / pi(y_i)
//! ```
//!
//! `A_i` is the sample-level advantage for vanilla GRPO and the sum of the
//! sample- and mode-level advantages for MMPO.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::advantage::{mixed_advantage, Algorithm, AdvantageVector, GroupRollout};
use crate::env::SynthSample;
use crate::error::{Error, Result};
use crate::grammar::{ResponseGrammar, TokenCosts};
use crate::metrics::ModeHistogram;
use crate::policy::{self, kl_from_logprobs, PolicyParams, PolicySnapshot};
use crate::reward::RewardConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RlConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_coeff: f64,
    pub epochs: usize,
    pub dataset_size: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Global gradient-norm cap applied before each step; `None` disables it.
    #[serde(default)]
    pub max_grad_norm: Option<f64>,
    /// Gradient steps taken on each rollout buffer.
    #[serde(default = "one")]
    pub updates_per_batch: usize,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default)]
    pub token_costs: TokenCosts,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            clip_eps: 0.2,
            kl_coeff: 0.04,
            epochs: 8,
            dataset_size: 1000,
            batch_size: 2,
            learning_rate: 0.05,
            max_grad_norm: Some(1.0),
            updates_per_batch: 1,
            algorithm: Algorithm::Mmpo,
            reward: RewardConfig::default(),
            token_costs: TokenCosts::default(),
            seed: 0,
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.group_size < 2 {
            return bad(format!("group_size must be >= 2, got {}", self.group_size));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad(format!("clip_eps must lie in (0, 1), got {}", self.clip_eps));
        }
        if !self.kl_coeff.is_finite() || self.kl_coeff < 0.0 {
            return bad(format!("kl_coeff must be >= 0, got {}", self.kl_coeff));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.dataset_size == 0 || self.updates_per_batch == 0 {
            return bad("rl epochs, batch_size, dataset_size and updates_per_batch must be positive".into());
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return bad(format!("rl learning_rate must be >= 0, got {}", self.learning_rate));
        }
        if let Some(c) = self.max_grad_norm {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("max_grad_norm must be positive, got {c}"));
            }
        }
        self.token_costs.validate()
    }

    pub fn grammar(&self) -> ResponseGrammar {
        ResponseGrammar {
            costs: self.token_costs,
        }
    }
}

/// Draws `config.group_size` responses from `old` for one sample and scores
/// them.
pub fn rollout<R: Rng + ?Sized>(
    old: &PolicySnapshot,
    reference: &PolicySnapshot,
    sample: &SynthSample,
    config: &RlConfig,
    rng: &mut R,
) -> Result<GroupRollout> {
    let g = config.group_size;
    if g < 2 {
        return Err(Error::GroupTooSmall(g));
    }
    let grammar = config.grammar();
    let mut group = GroupRollout {
        sample_id: sample.id,
        features: sample.features.clone(),
        truth: sample.truth,
        actions: Vec::with_capacity(g),
        responses: Vec::with_capacity(g),
        rewards: Vec::with_capacity(g),
        modes: Vec::with_capacity(g),
        old_logprobs: Vec::with_capacity(g),
        ref_logprobs: Vec::with_capacity(g),
    };
    for _ in 0..g {
        let (action, text) = policy::sample(old, &sample.features, rng)?;
        let parsed = grammar.parse(&text);
        group.rewards.push(config.reward.score(&parsed, sample.truth));
        group.modes.push(parsed.mode);
        group.responses.push(parsed);
        group.old_logprobs.push(policy::log_prob(old, &sample.features, action)?);
        group.ref_logprobs.push(policy::log_prob(reference, &sample.features, action)?);
        group.actions.push(action);
    }
    Ok(group)
}

/// `min(rho * A, clip(rho, 1 - eps, 1 + eps) * A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
    (ratio * advantage).min(clipped * advantage)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateOutput {
    pub loss: f64,
    pub grad: PolicyParams,
    /// Share of responses whose ratio fell outside `[1 - eps, 1 + eps]`.
    pub clip_fraction: f64,
    /// Mean per-sample KL estimate against the reference.
    pub kl: f64,
}

/// Loss and analytic gradient of the clipped objective for one group.
pub fn surrogate_loss(
    params: &PolicyParams,
    group: &GroupRollout,
    advantages: &[f64],
    config: &RlConfig,
) -> Result<SurrogateOutput> {
    group.validate()?;
    if advantages.len() != group.len() {
        return Err(Error::LengthMismatch {
            what: "advantages",
            expected: group.len(),
            got: advantages.len(),
        });
    }
    let g = group.len() as f64;
    let eps = config.clip_eps;
    let beta = config.kl_coeff;
    let mut objective = 0.0;
    let mut kl_sum = 0.0;
    let mut clipped = 0usize;
    let mut grad = PolicyParams::zeros(params.dim());

    for i in 0..group.len() {
        let action = group.actions[i];
        let adv = advantages[i];
        let lp = policy::log_prob(params, &group.features, action)?;
        let ratio = (lp - group.old_logprobs[i]).exp();
        if !ratio.is_finite() {
            return Err(Error::NonFinite {
                what: "importance ratio",
                step: i,
            });
        }
        let kl = kl_from_logprobs(lp, group.ref_logprobs[i]);
        let ref_ratio = (group.ref_logprobs[i] - lp).exp();
        objective += clipped_surrogate(ratio, adv, eps) - beta * kl;
        kl_sum += kl;
        if ratio < 1.0 - eps || ratio > 1.0 + eps {
            clipped += 1;
        }

        // d/dtheta of the surrogate flows only through the unclipped branch,
        // and only when min() selects it.
        let unclipped_active = ratio * adv <= ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
        let d_surrogate = if unclipped_active { adv * ratio } else { 0.0 };
        // d k3 / d log pi = 1 - pi_ref / pi.
        let d_kl = 1.0 - ref_ratio;
        let coeff = -(d_surrogate - beta * d_kl) / g;
        if coeff != 0.0 {
            policy::accumulate_grad_log_prob(params, &group.features, action, coeff, &mut grad)?;
        }
    }
    Ok(SurrogateOutput {
        loss: -objective / g,
        grad,
        clip_fraction: clipped as f64 / g,
        kl: kl_sum / g,
    })
}

/// Per-step training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub reward_mean: f64,
    pub acc_reward_mean: f64,
    pub format_reward_mean: f64,
    pub adv_abs_mean: f64,
    pub kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    pub mode_histogram: ModeHistogram,
    pub avg_tokens: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RlOutcome {
    pub params: PolicyParams,
    pub stats: Vec<StepStats>,
}

fn group_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Runs the RL stage. The reference policy is `params_init`, frozen for the
/// whole run; the sampling policy is re-snapshotted before every batch and
/// advantages are computed once per rollout.
pub fn rl_train(
    params_init: PolicyParams,
    dataset: &[SynthSample],
    config: &RlConfig,
) -> Result<RlOutcome> {
    rl_train_with(params_init, dataset, config, |_| {})
}

/// [`rl_train`] with a callback invoked after every step.
pub fn rl_train_with(
    params_init: PolicyParams,
    dataset: &[SynthSample],
    config: &RlConfig,
    mut on_step: impl FnMut(&StepStats),
) -> Result<RlOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let reference = params_init.snapshot();
    let mut params = params_init;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    // Rollout streams are keyed by group index so they do not depend on how
    // groups are scheduled.
    let rollout_seed = config.seed ^ 0x9E37_79B9_7F4A_7C15;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut stats = Vec::new();
    let mut step = 0usize;
    let mut group_index = 0u64;

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(config.batch_size) {
            let old = params.snapshot();
            let mut groups = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let mut rng = group_rng(rollout_seed, group_index);
                group_index += 1;
                let group = rollout(&old, &reference, &dataset[i], config, &mut rng)?;
                let adv = mixed_advantage(&group, config.algorithm)?;
                groups.push((group, adv));
            }

            let mut record = None;
            for update in 0..config.updates_per_batch {
                let last_good = params.clone();
                let (loss, mut grad, kl, clip_fraction) = batch_objective(&params, &groups, config)?;
                if !loss.is_finite() || !grad.is_finite() {
                    return Err(Error::Diverged {
                        step,
                        what: "rl loss",
                        last_good: Box::new(last_good),
                    });
                }
                let grad_norm = grad.norm();
                if let Some(cap) = config.max_grad_norm {
                    if grad_norm > cap {
                        grad.scale(cap / grad_norm);
                    }
                }
                params.axpy(-config.learning_rate, &grad);
                if !params.is_finite() {
                    return Err(Error::Diverged {
                        step,
                        what: "parameters",
                        last_good: Box::new(last_good),
                    });
                }
                if update == 0 {
                    record = Some(summarize(step, epoch, loss, kl, clip_fraction, grad_norm, &groups));
                }
            }
            let record = record.expect("at least one update per batch");
            on_step(&record);
            stats.push(record);
            step += 1;
        }
    }
    Ok(RlOutcome { params, stats })
}

fn batch_objective(
    params: &PolicyParams,
    groups: &[(GroupRollout, AdvantageVector)],
    config: &RlConfig,
) -> Result<(f64, PolicyParams, f64, f64)> {
    let n = groups.len() as f64;
    let mut loss = 0.0;
    let mut kl = 0.0;
    let mut clip = 0.0;
    let mut grad = PolicyParams::zeros(params.dim());
    for (group, adv) in groups {
        let out = surrogate_loss(params, group, &adv.a_mixed, config)?;
        loss += out.loss / n;
        kl += out.kl / n;
        clip += out.clip_fraction / n;
        grad.axpy(1.0 / n, &out.grad);
    }
    Ok((loss, grad, kl, clip))
}

fn summarize(
    step: usize,
    epoch: usize,
    loss: f64,
    kl: f64,
    clip_fraction: f64,
    grad_norm: f64,
    groups: &[(GroupRollout, AdvantageVector)],
) -> StepStats {
    let mut count = 0.0;
    let (mut reward, mut acc, mut format, mut adv_abs, mut tokens) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut hist = ModeHistogram::default();
    for (group, adv) in groups {
        for i in 0..group.len() {
            count += 1.0;
            reward += group.rewards[i].total;
            acc += group.rewards[i].r_acc;
            format += group.rewards[i].r_format;
            adv_abs += adv.a_mixed[i].abs();
            tokens += f64::from(group.responses[i].token_count);
            hist.add(group.modes[i]);
        }
    }
    StepStats {
        step,
        epoch,
        loss,
        reward_mean: reward / count,
        acc_reward_mean: acc / count,
        format_reward_mean: format / count,
        adv_abs_mean: adv_abs / count,
        kl,
        clip_fraction,
        grad_norm,
        mode_histogram: hist,
        avg_tokens: tokens / count,
    }
}
