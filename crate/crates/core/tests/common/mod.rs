//! Independent oracles shared by the integration tests. Nothing here calls the
//! code path it is used to check.

#![allow(dead_code)]

use mmpo_core::advantage::GroupRollout;
use mmpo_core::grammar::{parse, Label, ThinkingMode};
use mmpo_core::metrics::EvalRecord;
use mmpo_core::policy::{self, PolicyParams, StructuredAction};
use mmpo_core::reward::score;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const D: usize = 9;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Population variance via the pairwise identity
/// `var = (1 / (2 n^2)) * sum_{i,j} (x_i - x_j)^2`, which shares no code with
/// the mean-then-deviation formula.
pub fn pairwise_population_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mut acc = 0.0;
    for a in xs {
        for b in xs {
            acc += (a - b) * (a - b);
        }
    }
    (acc / (2.0 * n * n)).sqrt()
}

/// Standardizes `xs`; zero when the spread is below `1e-8`.
pub fn oracle_standardize(xs: &[f64]) -> Vec<f64> {
    let std = pairwise_population_std(xs);
    if std < 1e-8 {
        return vec![0.0; xs.len()];
    }
    // Mean of differences avoids reusing sum/n of the raw values.
    xs.iter()
        .map(|x| {
            let centered = xs.iter().map(|y| x - y).sum::<f64>() / xs.len() as f64;
            centered / std
        })
        .collect()
}

/// Mode-level advantage by explicit bucketing per mode.
pub fn oracle_mode_advantage(rewards: &[f64], modes: &[Option<ThinkingMode>]) -> Vec<f64> {
    let mut buckets: Vec<(ThinkingMode, Vec<f64>)> = Vec::new();
    for (r, m) in rewards.iter().zip(modes) {
        if let Some(m) = m {
            match buckets.iter_mut().find(|b| b.0 == *m) {
                Some(b) => b.1.push(*r),
                None => buckets.push((*m, vec![*r])),
            }
        }
    }
    if buckets.len() < 2 {
        return vec![0.0; rewards.len()];
    }
    let avgs: Vec<f64> = buckets.iter().map(|b| b.1.iter().sum::<f64>() / b.1.len() as f64).collect();
    let z = oracle_standardize(&avgs);
    modes
        .iter()
        .map(|m| match m {
            Some(m) => z[buckets.iter().position(|b| b.0 == *m).unwrap()],
            None => 0.0,
        })
        .collect()
}

pub fn random_params<R: Rng>(rng: &mut R, scale: f64) -> PolicyParams {
    let n = PolicyParams::num_params(D);
    PolicyParams::from_flat(D, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

pub fn random_features<R: Rng>(rng: &mut R) -> Vec<f64> {
    (0..D).map(|_| rng.random_range(-2.0..2.0)).collect()
}

pub fn random_action<R: Rng>(rng: &mut R) -> StructuredAction {
    StructuredAction {
        mode: ThinkingMode::ALL[rng.random_range(0..3)],
        answer: Label::ALL[rng.random_range(0..2)],
    }
}

pub fn random_mode<R: Rng>(rng: &mut R, p_none: f64) -> Option<ThinkingMode> {
    if rng.random_bool(p_none) {
        None
    } else {
        Some(ThinkingMode::ALL[rng.random_range(0..3)])
    }
}

/// Exact log-probability from the definition of the factored softmax:
/// mode logits `W x`, answer logits `U_m observe(x, m)`.
pub fn oracle_log_prob(params: &PolicyParams, x: &[f64], action: StructuredAction) -> f64 {
    let dot = |w: &[f64], v: &[f64]| w.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    let mode_logits: Vec<f64> = ThinkingMode::ALL.iter().map(|&m| dot(params.mode_row(m), x)).collect();
    let view = mmpo_core::env::observe(x, action.mode);
    let ans_logits: Vec<f64> = Label::ALL
        .iter()
        .map(|&a| dot(params.answer_row(action.mode, a), &view))
        .collect();
    let lse = |v: &[f64]| {
        let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        m + v.iter().map(|z| (z - m).exp()).sum::<f64>().ln()
    };
    mode_logits[action.mode.index()] - lse(&mode_logits) + ans_logits[action.answer.index()] - lse(&ans_logits)
}

/// Central finite-difference gradient of `f` at `params`.
pub fn finite_difference(params: &PolicyParams, h: f64, mut f: impl FnMut(&PolicyParams) -> f64) -> Vec<f64> {
    let mut p = params.clone();
    (0..params.len())
        .map(|k| {
            let orig = p.as_slice()[k];
            p.as_mut_slice()[k] = orig + h;
            let up = f(&p);
            p.as_mut_slice()[k] = orig - h;
            let down = f(&p);
            p.as_mut_slice()[k] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||, floor)`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(floor)
}

/// A group sampled from `old`, with old/ref log-probabilities filled in.
pub fn random_group<R: Rng>(
    rng: &mut R,
    old: &PolicyParams,
    reference: &PolicyParams,
    g: usize,
) -> GroupRollout {
    let features = random_features(rng);
    let truth = Label::ALL[rng.random_range(0..2)];
    let actions: Vec<StructuredAction> = (0..g).map(|_| random_action(rng)).collect();
    let responses: Vec<_> = actions.iter().map(|a| parse(&a.render())).collect();
    let rewards = responses.iter().map(|r| score(r, truth)).collect();
    let modes = responses.iter().map(|r| r.mode).collect();
    let old_logprobs = actions.iter().map(|&a| policy::log_prob(old, &features, a).unwrap()).collect();
    let ref_logprobs = actions.iter().map(|&a| policy::log_prob(reference, &features, a).unwrap()).collect();
    GroupRollout {
        sample_id: 0,
        features,
        truth,
        actions,
        responses,
        rewards,
        modes,
        old_logprobs,
        ref_logprobs,
    }
}

/// Brute-force confusion counts with `fake` as the positive class; a
/// missing answer is a negative prediction.
pub fn oracle_confusion(records: &[EvalRecord]) -> (usize, usize, usize, usize) {
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for r in records {
        let predicted_fake = r.parsed.answer == Some(Label::Fake);
        let actually_fake = r.truth == Label::Fake;
        match (predicted_fake, actually_fake) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    (tp, fp, fn_, tn)
}

/// A random record set mixing valid, malformed and answer-less responses.
pub fn random_records<R: Rng>(rng: &mut R, n: usize) -> Vec<EvalRecord> {
    (0..n)
        .map(|i| {
            let text = match rng.random_range(0..10) {
                0 => "no tags at all".to_string(),
                1 => "<answer>maybe</answer>".to_string(),
                2 => format!("<answer>{}</answer> trailing", Label::ALL[rng.random_range(0..2)].as_str()),
                _ => random_action(rng).render(),
            };
            EvalRecord {
                sample_id: i as u64,
                truth: Label::ALL[rng.random_range(0..2)],
                parsed: parse(&text),
            }
        })
        .collect()
}
