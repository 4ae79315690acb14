//! Python bindings for `mmpo_core`.
//!
//! Modes are passed as `"quick"`, `"semantic"` or `"prospective"`, labels as
//! `"real"` or `"fake"`, algorithms as `"vanilla_grpo"` or `"mmpo"`.
//! Structured results (reports, samples, configs) come back as plain
//! dictionaries decoded from the same JSON the CLI writes.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mmpo_core::config::ExperimentConfig;
use mmpo_core::env::EnvConfig;
use mmpo_core::grammar::{self, ActionKind, Label, ThinkingMode};
use mmpo_core::metrics::{compute_metrics as core_metrics, EvalRecord};
use mmpo_core::pipeline::Pipeline;
use mmpo_core::policy::{self, Checkpoint, PolicyParams, StructuredAction};
use mmpo_core::{advantage, Algorithm, Error};

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::File { .. } | Error::Io(_) => PyOSError::new_err(e.to_string()),
        Error::NonFinite { .. } | Error::Diverged { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse_mode(s: &str) -> PyResult<ThinkingMode> {
    ThinkingMode::ALL
        .into_iter()
        .find(|m| m.short_name() == s)
        .ok_or_else(|| PyValueError::new_err(format!("unknown mode {s:?}; expected quick, semantic or prospective")))
}

fn parse_label(s: &str) -> PyResult<Label> {
    Label::parse_answer(s).ok_or_else(|| PyValueError::new_err(format!("unknown label {s:?}; expected real or fake")))
}

fn parse_action_kind(s: &str) -> PyResult<ActionKind> {
    ActionKind::ALL
        .into_iter()
        .find(|a| a.label().trim_matches(['[', ']']) == s)
        .ok_or_else(|| PyValueError::new_err(format!("unknown action {s:?}")))
}

fn parse_algorithm(s: &str) -> PyResult<Algorithm> {
    s.parse().map_err(to_py_err)
}

fn parse_modes(modes: Vec<Option<String>>) -> PyResult<Vec<Option<ThinkingMode>>> {
    modes.iter().map(|m| m.as_deref().map(parse_mode).transpose()).collect()
}

/// Decodes a JSON string into Python objects with the `json` module.
fn json_to_py<'py>(py: Python<'py>, json: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (json,))
}

fn to_json<T: serde::Serialize>(value: &T) -> PyResult<String> {
    serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Parses a response. Returns a dict with `mode`, `answer`, `well_formed`,
/// `token_count` and `segments` (list of `(action, text)` pairs).
#[pyfunction]
fn parse<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyDict>> {
    let p = grammar::parse(text);
    let d = PyDict::new(py);
    d.set_item("mode", p.mode.map(ThinkingMode::short_name))?;
    d.set_item("answer", p.answer.map(Label::as_str))?;
    d.set_item("well_formed", p.well_formed)?;
    d.set_item("token_count", p.token_count)?;
    let segments: Vec<(String, String)> = p
        .think_segments
        .iter()
        .map(|(a, t)| (a.label().trim_matches(['[', ']']).to_string(), t.clone()))
        .collect();
    d.set_item("segments", segments)?;
    Ok(d)
}

/// Renders a response. Without `texts` the canonical action bodies are used;
/// otherwise `texts` maps action names (e.g. `"image analysis"`) to bodies.
#[pyfunction]
#[pyo3(signature = (mode, answer, texts=None))]
fn render(mode: &str, answer: &str, texts: Option<BTreeMap<String, String>>) -> PyResult<String> {
    let mode = parse_mode(mode)?;
    let answer = parse_label(answer)?;
    match texts {
        None => Ok(grammar::render_canonical(mode, answer)),
        Some(t) => {
            let texts = t
                .into_iter()
                .map(|(k, v)| Ok((parse_action_kind(&k)?, v)))
                .collect::<PyResult<BTreeMap<_, _>>>()?;
            grammar::render(mode, &texts, answer).map_err(to_py_err)
        }
    }
}

/// Reward breakdown of a response against the true label.
#[pyfunction]
fn score<'py>(py: Python<'py>, text: &str, truth: &str) -> PyResult<Bound<'py, PyAny>> {
    let r = mmpo_core::score(&grammar::parse(text), parse_label(truth)?);
    json_to_py(py, &to_json(&r)?)
}

#[pyfunction]
fn sample_advantage(rewards: Vec<f64>) -> PyResult<Vec<f64>> {
    advantage::sample_advantage(&rewards).map_err(to_py_err)
}

/// `modes` holds one mode name or `None` (unclassifiable) per response.
#[pyfunction]
fn mode_advantage(rewards: Vec<f64>, modes: Vec<Option<String>>) -> PyResult<Vec<f64>> {
    advantage::mode_advantage(&rewards, &parse_modes(modes)?).map_err(to_py_err)
}

/// Returns `(a_sample, a_mode, a_mixed)`.
#[pyfunction]
#[pyo3(signature = (rewards, modes, algorithm="mmpo"))]
fn mixed_advantage(
    rewards: Vec<f64>,
    modes: Vec<Option<String>>,
    algorithm: &str,
) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let modes = parse_modes(modes)?;
    let a_sample = advantage::sample_advantage(&rewards).map_err(to_py_err)?;
    let a_mode = match parse_algorithm(algorithm)? {
        Algorithm::Mmpo => advantage::mode_advantage(&rewards, &modes).map_err(to_py_err)?,
        Algorithm::VanillaGrpo => vec![0.0; rewards.len()],
    };
    let a_mixed = a_sample.iter().zip(&a_mode).map(|(s, m)| s + m).collect();
    Ok((a_sample, a_mode, a_mixed))
}

/// Metrics of response texts against true labels.
#[pyfunction]
fn compute_metrics<'py>(py: Python<'py>, texts: Vec<String>, truths: Vec<String>) -> PyResult<Bound<'py, PyAny>> {
    if texts.len() != truths.len() {
        return Err(PyValueError::new_err("texts and truths must have the same length"));
    }
    let records = texts
        .iter()
        .zip(&truths)
        .enumerate()
        .map(|(i, (t, y))| {
            Ok(EvalRecord {
                sample_id: i as u64,
                truth: parse_label(y)?,
                parsed: grammar::parse(t),
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    let report = core_metrics(&records).map_err(to_py_err)?;
    json_to_py(py, &to_json(&report)?)
}

/// Draws `n` synthetic samples. `env` is an optional dict of environment
/// settings (`mixture`, `label_noise`, `feature_noise`, `signal_strength`).
#[pyfunction]
#[pyo3(signature = (n, seed=0, env=None))]
fn generate<'py>(py: Python<'py>, n: usize, seed: u64, env: Option<Bound<'py, PyDict>>) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = EnvConfig { seed, ..Default::default() };
    if let Some(env) = env {
        let text: String = py.import("json")?.call_method1("dumps", (env,))?.extract()?;
        let mut value = serde_json::to_value(&cfg).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        let patch: serde_json::Value = serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let (Some(base), Some(patch)) = (value.as_object_mut(), patch.as_object()) else {
            return Err(PyValueError::new_err("env must be a dict"));
        };
        for (k, v) in patch {
            base.insert(k.clone(), v.clone());
        }
        cfg = serde_json::from_value(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    }
    let samples = mmpo_core::generate(&cfg, n).map_err(to_py_err)?;
    json_to_py(py, &to_json(&samples)?)
}

/// Factored softmax policy over (thinking mode, answer).
#[pyclass(name = "Policy", module = "mmpo")]
struct PyPolicy {
    params: PolicyParams,
}

fn action_tuple(a: StructuredAction) -> (&'static str, &'static str) {
    (a.mode.short_name(), a.answer.as_str())
}

#[pymethods]
impl PyPolicy {
    /// Zero parameters (uniform policy) for feature width `d`.
    #[new]
    #[pyo3(signature = (d=mmpo_core::env::FEATURE_DIM, params=None))]
    fn new(d: usize, params: Option<Vec<f64>>) -> PyResult<Self> {
        let params = match params {
            Some(v) => PolicyParams::from_flat(d, v),
            None => PolicyParams::from_flat(d, vec![0.0; PolicyParams::num_params(d)]),
        }
        .map_err(to_py_err)?;
        Ok(Self { params })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let params = Checkpoint::from_json(text).and_then(Checkpoint::into_params).map_err(to_py_err)?;
        Ok(Self { params })
    }

    fn to_json(&self) -> String {
        Checkpoint::new(&self.params, None).to_json()
    }

    #[getter]
    fn d(&self) -> usize {
        self.params.dim()
    }

    #[getter]
    fn params(&self) -> Vec<f64> {
        self.params.as_slice().to_vec()
    }

    fn mode_probs(&self, features: Vec<f64>) -> PyResult<Vec<f64>> {
        policy::mode_probs(&self.params, &features).map(|p| p.to_vec()).map_err(to_py_err)
    }

    /// `{(mode, answer): probability}` over all six actions.
    fn action_probs(&self, features: Vec<f64>) -> PyResult<BTreeMap<(&'static str, &'static str), f64>> {
        Ok(policy::action_probs(&self.params, &features)
            .map_err(to_py_err)?
            .into_iter()
            .map(|(a, p)| (action_tuple(a), p))
            .collect())
    }

    fn log_prob(&self, features: Vec<f64>, mode: &str, answer: &str) -> PyResult<f64> {
        let a = StructuredAction { mode: parse_mode(mode)?, answer: parse_label(answer)? };
        policy::log_prob(&self.params, &features, a).map_err(to_py_err)
    }

    /// Gradient of the log-probability as a flat list aligned with `params`.
    fn grad_log_prob(&self, features: Vec<f64>, mode: &str, answer: &str) -> PyResult<Vec<f64>> {
        let a = StructuredAction { mode: parse_mode(mode)?, answer: parse_label(answer)? };
        policy::grad_log_prob(&self.params, &features, a)
            .map(PolicyParams::into_flat)
            .map_err(to_py_err)
    }

    fn greedy(&self, features: Vec<f64>) -> PyResult<(&'static str, &'static str)> {
        policy::greedy(&self.params, &features).map(action_tuple).map_err(to_py_err)
    }

    /// Samples `n` responses with a seeded generator; returns rendered texts.
    #[pyo3(signature = (features, n=1, seed=0))]
    fn sample(&self, features: Vec<f64>, n: usize, seed: u64) -> PyResult<Vec<String>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| policy::sample(&self.params, &features, &mut rng).map(|(_, t)| t))
            .collect::<Result<_, _>>()
            .map_err(to_py_err)
    }

    fn kl_estimate(&self, reference: &PyPolicy, features: Vec<f64>, mode: &str, answer: &str) -> PyResult<f64> {
        let a = StructuredAction { mode: parse_mode(mode)?, answer: parse_label(answer)? };
        policy::kl_estimate(&self.params, &reference.params.snapshot(), &features, a).map_err(to_py_err)
    }

    fn __repr__(&self) -> String {
        format!("Policy(d={}, norm={:.4})", self.params.dim(), self.params.norm())
    }
}

/// An experiment: configuration plus the on-disk pipeline.
#[pyclass(name = "Experiment", module = "mmpo")]
struct PyExperiment {
    pipeline: Pipeline,
}

#[pymethods]
impl PyExperiment {
    /// `config` is TOML text; `overrides` are `key.path=value` strings.
    #[new]
    #[pyo3(signature = (config="", overrides=Vec::new(), output_dir=None))]
    fn new(config: &str, mut overrides: Vec<String>, output_dir: Option<PathBuf>) -> PyResult<Self> {
        if let Some(dir) = output_dir {
            // JSON string escapes are valid TOML basic-string escapes.
            overrides.push(format!("output_dir={}", to_json(&dir.display().to_string())?));
        }
        let cfg = ExperimentConfig::from_toml_str(config, &overrides).map_err(to_py_err)?;
        Ok(Self { pipeline: Pipeline::new(cfg).map_err(to_py_err)? })
    }

    #[getter]
    fn config_hash(&self) -> String {
        self.pipeline.config_hash().to_string()
    }

    fn config_toml(&self) -> String {
        self.pipeline.config().to_toml_string()
    }

    /// Writes the datasets; returns `{split: record count}`.
    fn gen_data(&self) -> PyResult<BTreeMap<&'static str, usize>> {
        let d = self.pipeline.gen_data().map_err(to_py_err)?;
        Ok(BTreeMap::from([("sft", d.sft.len()), ("rl", d.rl.len()), ("eval", d.eval.len())]))
    }

    /// Runs SFT; returns the per-epoch loss curve (epoch 0 = initial loss).
    fn sft(&self) -> PyResult<Vec<(usize, f64)>> {
        self.pipeline.sft().map(|o| o.loss_curve()).map_err(to_py_err)
    }

    /// Runs RL and returns the trained policy.
    #[pyo3(signature = (algorithm="mmpo"))]
    fn train(&self, algorithm: &str) -> PyResult<PyPolicy> {
        let out = self.pipeline.train(parse_algorithm(algorithm)?).map_err(to_py_err)?;
        Ok(PyPolicy { params: out.params })
    }

    /// Evaluates a policy on the held-out split without writing files.
    fn evaluate<'py>(&self, py: Python<'py>, policy: &PyPolicy) -> PyResult<Bound<'py, PyAny>> {
        let report = self.pipeline.evaluate(&policy.params).map_err(to_py_err)?;
        json_to_py(py, &to_json(&report)?)
    }

    /// Writes `eval/report.*` for a checkpoint (default: the MMPO one).
    #[pyo3(signature = (checkpoint=None))]
    fn eval<'py>(&self, py: Python<'py>, checkpoint: Option<PathBuf>) -> PyResult<Bound<'py, PyAny>> {
        let artifact = self.pipeline.eval(checkpoint.as_deref()).map_err(to_py_err)?;
        json_to_py(py, &to_json(&artifact)?)
    }

    /// Trains both algorithms from the same SFT checkpoint; returns the
    /// comparison report.
    fn compare<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let report = self.pipeline.compare().map_err(to_py_err)?;
        json_to_py(py, &to_json(&report)?)
    }
}

#[pymodule]
pub fn mmpo(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(parse, m)?)?;
    m.add_function(wrap_pyfunction!(render, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(sample_advantage, m)?)?;
    m.add_function(wrap_pyfunction!(mode_advantage, m)?)?;
    m.add_function(wrap_pyfunction!(mixed_advantage, m)?)?;
    m.add_function(wrap_pyfunction!(compute_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_class::<PyPolicy>()?;
    m.add_class::<PyExperiment>()?;
    Ok(())
}
