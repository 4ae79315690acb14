//! Supervised stage: negative log-likelihood of teacher (mode, answer) pairs.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{generate, EnvConfig, SynthSample};
use crate::error::{Error, Result};
use crate::grammar::{Label, ThinkingMode};
use crate::policy::{self, PolicyParams, StructuredAction};

/// One teacher-labeled instruction example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftExample {
    pub sample: SynthSample,
    pub target_mode: ThinkingMode,
    pub target_answer: Label,
}

impl SftExample {
    /// Teacher rule: the cheapest mode that observes the informative block,
    /// answering with the sample's label.
    pub fn from_sample(sample: SynthSample) -> Self {
        Self {
            target_mode: sample.difficulty.cheapest_sufficient_mode(),
            target_answer: sample.truth,
            sample,
        }
    }

    pub fn target(&self) -> StructuredAction {
        StructuredAction {
            mode: self.target_mode,
            answer: self.target_answer,
        }
    }
}

pub fn teacher_dataset(samples: impl IntoIterator<Item = SynthSample>) -> Vec<SftExample> {
    samples.into_iter().map(SftExample::from_sample).collect()
}

/// Draws `config.dataset_size` samples from `env` with the difficulty mixture
/// replaced by `config.teacher_mixture` and labels them with the teacher rule.
pub fn generate_teacher_set(env: &EnvConfig, config: &SftConfig) -> Result<Vec<SftExample>> {
    config.validate()?;
    let env = EnvConfig {
        mixture: config.teacher_mixture,
        ..env.clone()
    };
    Ok(teacher_dataset(generate(&env, config.dataset_size)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SftConfig {
    /// Number of teacher examples drawn for the supervised set.
    pub dataset_size: usize,
    /// Easy/medium/hard composition of the supervised set. Uniform by default
    /// so every thinking mode receives the same number of demonstrations,
    /// independent of the evaluation mixture.
    pub teacher_mixture: [f64; 3],
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SftConfig {
    fn default() -> Self {
        // The toy policy has ~50 parameters and features of unit scale, so the
        // step size is far larger than what a billion-parameter model uses.
        Self {
            dataset_size: 2000,
            teacher_mixture: [1.0 / 3.0; 3],
            epochs: 3,
            batch_size: 8,
            learning_rate: 0.5,
            seed: 0,
        }
    }
}

impl SftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.dataset_size == 0 {
            return Err(Error::InvalidConfig(
                "sft epochs, batch_size and dataset_size must be positive".into(),
            ));
        }
        let total: f64 = self.teacher_mixture.iter().sum();
        if self.teacher_mixture.iter().any(|w| !w.is_finite() || *w < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "sft teacher_mixture must be nonnegative and sum to 1, got {:?}",
                self.teacher_mixture
            )));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "sft learning_rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Mean NLL over the batch and its gradient.
pub fn sft_loss(params: &PolicyParams, batch: &[SftExample]) -> Result<(f64, PolicyParams)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = PolicyParams::zeros(params.dim());
    for ex in batch {
        let target = ex.target();
        loss -= policy::log_prob(params, &ex.sample.features, target)?;
        policy::accumulate_grad_log_prob(params, &ex.sample.features, target, -1.0 / n, &mut grad)?;
    }
    Ok((loss / n, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftOutcome {
    pub params: PolicyParams,
    /// Full-dataset loss before training.
    pub initial_loss: f64,
    /// Full-dataset loss after each epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

impl SftOutcome {
    /// `epoch,loss` rows, epoch 0 being the initial loss.
    pub fn loss_curve(&self) -> Vec<(usize, f64)> {
        std::iter::once(self.initial_loss)
            .chain(self.epoch_losses.iter().copied())
            .enumerate()
            .collect()
    }
}

/// Plain minibatch gradient descent with a seeded shuffle each epoch.
pub fn sft_train(
    params: PolicyParams,
    dataset: &[SftExample],
    config: &SftConfig,
) -> Result<SftOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut params = params;
    let initial_loss = sft_loss(&params, dataset)?.0;
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut steps = 0;
    let mut batch = Vec::with_capacity(config.batch_size);

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| dataset[i].clone()));
            let (loss, grad) = sft_loss(&params, &batch)?;
            if !loss.is_finite() || !grad.is_finite() {
                return Err(Error::Diverged {
                    step: steps,
                    what: "sft loss",
                    last_good: Box::new(params),
                });
            }
            let last_good = params.clone();
            params.axpy(-config.learning_rate, &grad);
            if !params.is_finite() {
                return Err(Error::Diverged {
                    step: steps,
                    what: "parameters",
                    last_good: Box::new(last_good),
                });
            }
            steps += 1;
        }
        let loss = sft_loss(&params, dataset)?.0;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                what: "epoch loss",
                step: steps,
            });
        }
        epoch_losses.push(loss);
    }
    Ok(SftOutcome {
        params,
        initial_loss,
        epoch_losses,
        steps,
    })
}
