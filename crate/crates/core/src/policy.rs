//! Factored softmax policy over structured responses.
//!
//! The policy picks a thinking mode from the full feature vector and then an
//! answer from the features that mode can observe:
//!
//! ```text
//! pi(mode, answer | x) = softmax(W x)[mode] * softmax(U_mode observe(x, mode))[answer]
//! ```
//!
//! `W` is `3 x d` and each `U_mode` is `2 x d`. All parameters live in one flat
//! buffer so that gradients, checkpoints and optimizer steps share a layout:
//! `W` row-major first, then `U_quick`, `U_semantic`, `U_prospective`.

use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{observe_in_place, FEATURE_DIM, NUM_BLOCKS};
use crate::error::{Error, Result};
use crate::grammar::{render_canonical, Label, ThinkingMode};

pub const NUM_MODES: usize = 3;
pub const NUM_ANSWERS: usize = 2;
pub const CHECKPOINT_VERSION: u32 = 1;

/// One response at the granularity the policy controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StructuredAction {
    pub mode: ThinkingMode,
    pub answer: Label,
}

impl StructuredAction {
    pub fn all() -> impl Iterator<Item = StructuredAction> {
        ThinkingMode::ALL
            .into_iter()
            .flat_map(|mode| Label::ALL.into_iter().map(move |answer| StructuredAction { mode, answer }))
    }

    pub fn render(self) -> String {
        render_canonical(self.mode, self.answer)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    d: usize,
    values: Vec<f64>,
}

impl PolicyParams {
    pub fn num_params(d: usize) -> usize {
        NUM_MODES * d + NUM_MODES * NUM_ANSWERS * d
    }

    /// Uniform policy.
    pub fn zeros(d: usize) -> Self {
        Self {
            d,
            values: vec![0.0; Self::num_params(d)],
        }
    }

    pub fn from_flat(d: usize, values: Vec<f64>) -> Result<Self> {
        if d == 0 || d % NUM_BLOCKS != 0 {
            return Err(Error::InvalidConfig(format!(
                "feature dimension must be a positive multiple of {NUM_BLOCKS}, got {d}"
            )));
        }
        if values.len() != Self::num_params(d) {
            return Err(Error::DimensionMismatch {
                expected: Self::num_params(d),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("policy parameters must be finite".into()));
        }
        Ok(Self { d, values })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mode_row(&self, mode: ThinkingMode) -> &[f64] {
        let d = self.d;
        &self.values[mode.index() * d..(mode.index() + 1) * d]
    }

    pub fn mode_row_mut(&mut self, mode: ThinkingMode) -> &mut [f64] {
        let d = self.d;
        &mut self.values[mode.index() * d..(mode.index() + 1) * d]
    }

    fn answer_offset(&self, mode: ThinkingMode, answer: Label) -> usize {
        NUM_MODES * self.d + (mode.index() * NUM_ANSWERS + answer.index()) * self.d
    }

    pub fn answer_row(&self, mode: ThinkingMode, answer: Label) -> &[f64] {
        let o = self.answer_offset(mode, answer);
        &self.values[o..o + self.d]
    }

    pub fn answer_row_mut(&mut self, mode: ThinkingMode, answer: Label) -> &mut [f64] {
        let o = self.answer_offset(mode, answer);
        &mut self.values[o..o + self.d]
    }

    /// `self += scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &PolicyParams) {
        debug_assert_eq!(self.values.len(), other.values.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.values.iter_mut().for_each(|v| *v *= k);
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &PolicyParams) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn snapshot(&self) -> PolicySnapshot {
        PolicySnapshot(Arc::new(self.clone()))
    }

    fn check_features(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: features.len(),
            });
        }
        Ok(())
    }
}

impl Default for PolicyParams {
    fn default() -> Self {
        Self::zeros(FEATURE_DIM)
    }
}

/// Frozen parameters, used as the sampling policy and the reference policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySnapshot(Arc<PolicyParams>);

impl PolicySnapshot {
    pub fn params(&self) -> &PolicyParams {
        &self.0
    }
}

impl std::ops::Deref for PolicySnapshot {
    type Target = PolicyParams;
    fn deref(&self) -> &PolicyParams {
        &self.0
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_softmax<const N: usize>(logits: [f64; N]) -> [f64; N] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.map(|l| l - lse)
}

fn softmax<const N: usize>(logits: [f64; N]) -> [f64; N] {
    log_softmax(logits).map(f64::exp)
}

fn mode_logits(params: &PolicyParams, features: &[f64]) -> [f64; NUM_MODES] {
    ThinkingMode::ALL.map(|m| dot(params.mode_row(m), features))
}

fn answer_logits(params: &PolicyParams, observed: &[f64], mode: ThinkingMode) -> [f64; NUM_ANSWERS] {
    Label::ALL.map(|a| dot(params.answer_row(mode, a), observed))
}

pub fn mode_probs(params: &PolicyParams, features: &[f64]) -> Result<[f64; NUM_MODES]> {
    params.check_features(features)?;
    Ok(softmax(mode_logits(params, features)))
}

pub fn answer_probs(
    params: &PolicyParams,
    features: &[f64],
    mode: ThinkingMode,
) -> Result<[f64; NUM_ANSWERS]> {
    params.check_features(features)?;
    let mut observed = features.to_vec();
    observe_in_place(&mut observed, mode);
    Ok(softmax(answer_logits(params, &observed, mode)))
}

/// Sequence-level `log pi(action | features)`.
pub fn log_prob(params: &PolicyParams, features: &[f64], action: StructuredAction) -> Result<f64> {
    params.check_features(features)?;
    let lp_mode = log_softmax(mode_logits(params, features))[action.mode.index()];
    let mut observed = features.to_vec();
    observe_in_place(&mut observed, action.mode);
    let lp_answer = log_softmax(answer_logits(params, &observed, action.mode))[action.answer.index()];
    Ok(lp_mode + lp_answer)
}

/// Probability of each of the six structured actions, in
/// [`StructuredAction::all`] order.
pub fn action_probs(params: &PolicyParams, features: &[f64]) -> Result<Vec<(StructuredAction, f64)>> {
    let pm = mode_probs(params, features)?;
    let mut out = Vec::with_capacity(NUM_MODES * NUM_ANSWERS);
    for mode in ThinkingMode::ALL {
        let pa = answer_probs(params, features, mode)?;
        for answer in Label::ALL {
            out.push((StructuredAction { mode, answer }, pm[mode.index()] * pa[answer.index()]));
        }
    }
    Ok(out)
}

/// Most probable mode, then most probable answer under that mode.
pub fn greedy(params: &PolicyParams, features: &[f64]) -> Result<StructuredAction> {
    let pm = mode_probs(params, features)?;
    let mode = ThinkingMode::ALL[argmax(&pm)];
    let pa = answer_probs(params, features, mode)?;
    Ok(StructuredAction {
        mode,
        answer: Label::ALL[argmax(&pa)],
    })
}

fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

/// Draws a structured action and renders it with canonical think bodies.
pub fn sample<R: Rng + ?Sized>(
    params: &PolicyParams,
    features: &[f64],
    rng: &mut R,
) -> Result<(StructuredAction, String)> {
    let pm = mode_probs(params, features)?;
    let mode = ThinkingMode::ALL[draw(&pm, rng)];
    let pa = answer_probs(params, features, mode)?;
    let answer = Label::ALL[draw(&pa, rng)];
    let action = StructuredAction { mode, answer };
    Ok((action, action.render()))
}

fn draw<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    match WeightedIndex::new(probs) {
        Ok(dist) => dist.sample(rng),
        // Only reachable with NaN weights.
        Err(_) => argmax(probs),
    }
}

/// Adds `scale * grad log pi(action | features)` into `grad`.
pub fn accumulate_grad_log_prob(
    params: &PolicyParams,
    features: &[f64],
    action: StructuredAction,
    scale: f64,
    grad: &mut PolicyParams,
) -> Result<()> {
    params.check_features(features)?;
    if grad.d != params.d {
        return Err(Error::DimensionMismatch {
            expected: params.d,
            got: grad.d,
        });
    }
    let pm = softmax(mode_logits(params, features));
    for mode in ThinkingMode::ALL {
        let coeff = scale * (f64::from(u8::from(mode == action.mode)) - pm[mode.index()]);
        for (g, x) in grad.mode_row_mut(mode).iter_mut().zip(features) {
            *g += coeff * x;
        }
    }
    let mut observed = features.to_vec();
    observe_in_place(&mut observed, action.mode);
    let pa = softmax(answer_logits(params, &observed, action.mode));
    for answer in Label::ALL {
        let coeff = scale * (f64::from(u8::from(answer == action.answer)) - pa[answer.index()]);
        for (g, x) in grad.answer_row_mut(action.mode, answer).iter_mut().zip(&observed) {
            *g += coeff * x;
        }
    }
    Ok(())
}

/// Gradient of `log pi(action | features)` with respect to every parameter.
pub fn grad_log_prob(
    params: &PolicyParams,
    features: &[f64],
    action: StructuredAction,
) -> Result<PolicyParams> {
    let mut grad = PolicyParams::zeros(params.d);
    accumulate_grad_log_prob(params, features, action, 1.0, &mut grad)?;
    Ok(grad)
}

/// Per-sample KL estimate `rho - ln(rho) - 1` with
/// `rho = pi_ref(action) / pi(action)`. Nonnegative; its expectation under
/// `pi` is `KL(pi || pi_ref)`.
pub fn kl_estimate(
    params: &PolicyParams,
    reference: &PolicySnapshot,
    features: &[f64],
    action: StructuredAction,
) -> Result<f64> {
    let lp = log_prob(params, features, action)?;
    let lp_ref = log_prob(reference, features, action)?;
    Ok(kl_from_logprobs(lp, lp_ref))
}

pub(crate) fn kl_from_logprobs(lp: f64, lp_ref: f64) -> f64 {
    let log_rho = lp_ref - lp;
    // exp_m1 keeps the estimate exact (zero) when log_rho == 0 and accurate near it.
    (log_rho.exp_m1() - log_rho).max(0.0)
}

/// Checkpoint file body: a flat parameter array with a small header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub d: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn new(params: &PolicyParams, config_hash: Option<String>) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            d: params.d,
            config_hash,
            params: params.values.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Malformed {
                kind: "checkpoint",
                reason: format!("unsupported version {}", ck.version),
            });
        }
        Ok(ck)
    }

    pub fn into_params(self) -> Result<PolicyParams> {
        PolicyParams::from_flat(self.d, self.params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_params(rng: &mut ChaCha8Rng, scale: f64) -> PolicyParams {
        let n = PolicyParams::num_params(FEATURE_DIM);
        let v = (0..n).map(|_| scale * (rng.random::<f64>() * 2.0 - 1.0)).collect();
        PolicyParams::from_flat(FEATURE_DIM, v).unwrap()
    }

    fn random_features(rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..FEATURE_DIM).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect()
    }

    #[test]
    fn uniform_log_prob() {
        let p = PolicyParams::zeros(FEATURE_DIM);
        let x = vec![0.3; FEATURE_DIM];
        for a in StructuredAction::all() {
            assert!((log_prob(&p, &x, a).unwrap() + 6f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn probabilities_normalize() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let p = random_params(&mut rng, 3.0);
            let x = random_features(&mut rng);
            let total: f64 = StructuredAction::all()
                .map(|a| log_prob(&p, &x, a).unwrap().exp())
                .sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(StructuredAction::all().all(|a| log_prob(&p, &x, a).unwrap() <= 0.0));
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let p = PolicyParams::zeros(FEATURE_DIM);
        let a = StructuredAction { mode: ThinkingMode::QuickResponse, answer: Label::Fake };
        assert!(matches!(log_prob(&p, &[1.0; 4], a), Err(Error::DimensionMismatch { .. })));
        assert!(grad_log_prob(&p, &[1.0; 4], a).is_err());
        assert!(PolicyParams::from_flat(FEATURE_DIM, vec![0.0; 3]).is_err());
        assert!(PolicyParams::from_flat(4, vec![0.0; PolicyParams::num_params(4)]).is_err());
    }

    #[test]
    fn dominant_logit_approaches_certainty() {
        // Large logit on (quick, fake) via the first feature.
        let x: Vec<f64> = std::iter::once(1.0).chain(std::iter::repeat(0.0)).take(FEATURE_DIM).collect();
        let a = StructuredAction { mode: ThinkingMode::QuickResponse, answer: Label::Fake };
        let mut prev = f64::NEG_INFINITY;
        for k in [0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0] {
            let mut p = PolicyParams::zeros(FEATURE_DIM);
            p.mode_row_mut(ThinkingMode::QuickResponse)[0] = k;
            p.answer_row_mut(ThinkingMode::QuickResponse, Label::Fake)[0] = k;
            let lp = log_prob(&p, &x, a).unwrap();
            // Direct evaluation: log(e^k / (e^k + 2)) + log(e^k / (e^k + 1)).
            let direct = (k.exp() / (k.exp() + 2.0)).ln() + (k.exp() / (k.exp() + 1.0)).ln();
            assert!((lp - direct).abs() < 1e-12);
            assert!(lp > prev && lp < 0.0);
            prev = lp;
        }
        assert!(prev > -1e-12);
    }

    #[test]
    fn uniform_mode_gradient_rows_cancel() {
        let p = PolicyParams::zeros(FEATURE_DIM);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_features(&mut rng);
        for a in StructuredAction::all() {
            let g = grad_log_prob(&p, &x, a).unwrap();
            for j in 0..FEATURE_DIM {
                let s: f64 = ThinkingMode::ALL.iter().map(|&m| g.mode_row(m)[j]).sum();
                assert!(s.abs() < 1e-15);
            }
        }
    }

    #[test]
    fn untaken_answer_heads_have_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = random_params(&mut rng, 1.0);
        let x = random_features(&mut rng);
        for a in StructuredAction::all() {
            let g = grad_log_prob(&p, &x, a).unwrap();
            for m in ThinkingMode::ALL.into_iter().filter(|&m| m != a.mode) {
                for l in Label::ALL {
                    assert!(g.answer_row(m, l).iter().all(|&v| v == 0.0));
                }
            }
            // Hidden blocks never receive answer-head gradient.
            let visible = a.mode.visible_blocks() * 3;
            for l in Label::ALL {
                assert!(g.answer_row(a.mode, l)[visible..].iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn kl_is_zero_against_itself_and_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = random_params(&mut rng, 2.0);
        let snap = p.snapshot();
        let x = random_features(&mut rng);
        for a in StructuredAction::all() {
            assert_eq!(kl_estimate(&p, &snap, &x, a).unwrap(), 0.0);
        }
        let q = random_params(&mut rng, 2.0);
        for a in StructuredAction::all() {
            assert!(kl_estimate(&q, &snap, &x, a).unwrap() >= 0.0);
        }
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_params(&mut rng, 1.0);
        let x = random_features(&mut rng);
        let run = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            (0..200).map(|_| sample(&p, &x, &mut r).unwrap().0).collect::<Vec<_>>()
        };
        assert_eq!(run(42), run(42));
    }

    #[test]
    fn deterministic_limit() {
        let x: Vec<f64> = std::iter::once(1.0).chain(std::iter::repeat(0.0)).take(FEATURE_DIM).collect();
        let mut p = PolicyParams::zeros(FEATURE_DIM);
        p.mode_row_mut(ThinkingMode::SemanticAnalysis)[0] = 30.0;
        p.answer_row_mut(ThinkingMode::SemanticAnalysis, Label::Real)[0] = 30.0;
        let want = StructuredAction { mode: ThinkingMode::SemanticAnalysis, answer: Label::Real };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            assert_eq!(sample(&p, &x, &mut rng).unwrap().0, want);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let p = random_params(&mut rng, 1.0);
        let ck = Checkpoint::new(&p, Some("abc".into()));
        let back = Checkpoint::from_json(&ck.to_json()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.into_params().unwrap(), p);
        let mut bad = Checkpoint::new(&p, None);
        bad.version = 99;
        assert!(Checkpoint::from_json(&bad.to_json()).is_err());
    }
}
