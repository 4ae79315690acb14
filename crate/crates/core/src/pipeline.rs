//! Reproducible experiment pipeline and its on-disk artifacts.
//!
//! Layout under `output_dir`:
//!
//! ```text
//! data/{sft,rl,eval}.jsonl      header line + one record per line
//! sft/policy.json, sft/loss.csv
//! train-<algorithm>/policy.json, train-<algorithm>/log.jsonl
//! eval/report.{json,csv,txt}
//! compare/report.{json,csv,txt}
//! ```
//!
//! Every file carries the config hash. A stage whose inputs are missing, or
//! were produced under a different hash, rebuilds them first. Files are
//! written to a temporary sibling and renamed into place, so a failed stage
//! never leaves a truncated artifact behind.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::advantage::Algorithm;
use crate::config::{ExperimentConfig, Split};
use crate::env::{generate, SynthSample};
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, evaluate_policy, render_report, ComparisonReport, Decoding, MetricReport, ReportFormat};
use crate::policy::{Checkpoint, PolicyParams};
use crate::rl::{rl_train_with, RlOutcome, StepStats};
use crate::sft::{generate_teacher_set, sft_train, SftExample, SftOutcome};

/// Row names of the comparison report.
pub const SFT_ROW: &str = "sft";
pub const REPORT_FORMATS: [ReportFormat; 3] = [ReportFormat::Json, ReportFormat::Csv, ReportFormat::Table];

pub fn row_name(algorithm: Algorithm) -> String {
    format!("sft+{}", algorithm.as_str())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DataHeader {
    config_hash: String,
    split: String,
    count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Datasets {
    pub sft: Vec<SftExample>,
    pub rl: Vec<SynthSample>,
    pub eval: Vec<SynthSample>,
}

/// JSON body of `eval/report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalArtifact {
    pub config_hash: String,
    /// Checkpoint path, relative to the output directory when inside it.
    pub checkpoint: String,
    pub decoding: Decoding,
    pub report: MetricReport,
}

#[derive(Serialize)]
struct LogLine<'a> {
    config_hash: &'a str,
    algorithm: Algorithm,
    #[serde(flatten)]
    stats: &'a StepStats,
}

/// Writes `bytes` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_err = |source| Error::File {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(file_err)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(file_err)?;
    tmp.write_all(bytes).map_err(file_err)?;
    tmp.as_file().sync_all().map_err(file_err)?;
    tmp.persist(path).map_err(|e| file_err(e.error))?;
    Ok(())
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

fn to_jsonl<T: Serialize>(header: &DataHeader, records: &[T]) -> String {
    let mut out = serde_json::to_string(header).expect("header serializes");
    out.push('\n');
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Parses a dataset file; `Ok(None)` when it belongs to another config.
fn from_jsonl<T: DeserializeOwned>(text: &str, hash: &str) -> Result<Option<Vec<T>>> {
    let malformed = |reason: String| Error::Malformed { kind: "dataset", reason };
    let mut lines = text.lines();
    let header: DataHeader = serde_json::from_str(lines.next().ok_or_else(|| malformed("empty file".into()))?)?;
    if header.config_hash != hash {
        return Ok(None);
    }
    let records = lines.map(serde_json::from_str).collect::<std::result::Result<Vec<T>, _>>()?;
    if records.len() != header.count {
        return Err(malformed(format!("header says {} records, found {}", header.count, records.len())));
    }
    Ok(Some(records))
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    config: ExperimentConfig,
    hash: String,
}

impl Pipeline {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let hash = config.hash();
        Ok(Self { config, hash })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn out(&self) -> &Path {
        &self.config.output_dir
    }

    pub fn data_path(&self, split: Split) -> PathBuf {
        self.out().join("data").join(format!("{}.jsonl", split.as_str()))
    }

    pub fn sft_checkpoint_path(&self) -> PathBuf {
        self.out().join("sft").join("policy.json")
    }

    pub fn train_dir(&self, algorithm: Algorithm) -> PathBuf {
        self.out().join(format!("train-{}", algorithm.as_str()))
    }

    pub fn train_checkpoint_path(&self, algorithm: Algorithm) -> PathBuf {
        self.train_dir(algorithm).join("policy.json")
    }

    pub fn report_path(&self, stage: &str, format: ReportFormat) -> PathBuf {
        self.out().join(stage).join(format!("report.{}", format.extension()))
    }

    fn header(&self, split: Split, count: usize) -> DataHeader {
        DataHeader {
            config_hash: self.hash.clone(),
            split: split.as_str().to_string(),
            count,
        }
    }

    /// Generates all three splits and writes them.
    pub fn gen_data(&self) -> Result<Datasets> {
        let cfg = &self.config;
        let sft = generate_teacher_set(&cfg.env_for(Split::Sft), &cfg.sft)?;
        let rl = generate(&cfg.env_for(Split::Rl), cfg.split_size(Split::Rl))?;
        let eval = generate(&cfg.env_for(Split::Eval), cfg.split_size(Split::Eval))?;
        write_atomic(&self.data_path(Split::Sft), to_jsonl(&self.header(Split::Sft, sft.len()), &sft).as_bytes())?;
        write_atomic(&self.data_path(Split::Rl), to_jsonl(&self.header(Split::Rl, rl.len()), &rl).as_bytes())?;
        write_atomic(&self.data_path(Split::Eval), to_jsonl(&self.header(Split::Eval, eval.len()), &eval).as_bytes())?;
        Ok(Datasets { sft, rl, eval })
    }

    /// Reads the datasets, regenerating them if any is missing or stale.
    pub fn datasets(&self) -> Result<Datasets> {
        let read = |split: Split| -> Result<Option<String>> {
            let p = self.data_path(split);
            if p.exists() {
                read_file(&p).map(Some)
            } else {
                Ok(None)
            }
        };
        let (Some(sft), Some(rl), Some(eval)) = (read(Split::Sft)?, read(Split::Rl)?, read(Split::Eval)?) else {
            return self.gen_data();
        };
        match (
            from_jsonl(&sft, &self.hash)?,
            from_jsonl(&rl, &self.hash)?,
            from_jsonl(&eval, &self.hash)?,
        ) {
            (Some(sft), Some(rl), Some(eval)) => Ok(Datasets { sft, rl, eval }),
            _ => self.gen_data(),
        }
    }

    /// Loads a checkpoint if it exists and was written under this config.
    fn fresh_checkpoint(&self, path: &Path) -> Result<Option<PolicyParams>> {
        if !path.exists() {
            return Ok(None);
        }
        let ck = Checkpoint::from_json(&read_file(path)?)?;
        if ck.config_hash.as_deref() != Some(self.hash.as_str()) {
            return Ok(None);
        }
        ck.into_params().map(Some)
    }

    fn write_checkpoint(&self, path: &Path, params: &PolicyParams) -> Result<()> {
        write_atomic(path, Checkpoint::new(params, Some(self.hash.clone())).to_json().as_bytes())
    }

    /// Supervised stage from zero parameters; writes the checkpoint and loss
    /// curve.
    pub fn sft(&self) -> Result<SftOutcome> {
        let data = self.datasets()?;
        let outcome = sft_train(PolicyParams::default(), &data.sft, &self.config.sft_config())?;
        let mut csv = format!("# config_hash={}\nepoch,loss\n", self.hash);
        for (epoch, loss) in outcome.loss_curve() {
            let _ = writeln!(csv, "{epoch},{loss}");
        }
        self.write_checkpoint(&self.sft_checkpoint_path(), &outcome.params)?;
        write_atomic(&self.out().join("sft").join("loss.csv"), csv.as_bytes())?;
        Ok(outcome)
    }

    pub fn sft_params(&self) -> Result<PolicyParams> {
        match self.fresh_checkpoint(&self.sft_checkpoint_path())? {
            Some(p) => Ok(p),
            None => Ok(self.sft()?.params),
        }
    }

    /// RL stage from the SFT checkpoint; writes the checkpoint and a JSON-lines
    /// log with one record per step.
    pub fn train(&self, algorithm: Algorithm) -> Result<RlOutcome> {
        let init = self.sft_params()?;
        let data = self.datasets()?;
        let mut log = String::new();
        let outcome = rl_train_with(init, &data.rl, &self.config.rl_config(algorithm), |s| {
            let line = LogLine {
                config_hash: &self.hash,
                algorithm,
                stats: s,
            };
            log.push_str(&serde_json::to_string(&line).expect("log line serializes"));
            log.push('\n');
        })?;
        self.write_checkpoint(&self.train_checkpoint_path(algorithm), &outcome.params)?;
        write_atomic(&self.train_dir(algorithm).join("log.jsonl"), log.as_bytes())?;
        Ok(outcome)
    }

    pub fn trained_params(&self, algorithm: Algorithm) -> Result<PolicyParams> {
        match self.fresh_checkpoint(&self.train_checkpoint_path(algorithm))? {
            Some(p) => Ok(p),
            None => Ok(self.train(algorithm)?.params),
        }
    }

    /// Scores `params` on the evaluation split.
    pub fn evaluate(&self, params: &PolicyParams) -> Result<MetricReport> {
        let data = self.datasets()?;
        let records = evaluate_policy(params, &data.eval, self.config.decoding(), &self.config.rl.grammar())?;
        compute_metrics(&records)
    }

    /// Evaluates a checkpoint file, or the MMPO checkpoint of this config
    /// when `checkpoint` is `None`, and writes `eval/report.*`.
    pub fn eval(&self, checkpoint: Option<&Path>) -> Result<EvalArtifact> {
        let (params, path) = match checkpoint {
            Some(p) => (Checkpoint::from_json(&read_file(p)?)?.into_params()?, p.to_path_buf()),
            None => (
                self.trained_params(Algorithm::Mmpo)?,
                self.train_checkpoint_path(Algorithm::Mmpo),
            ),
        };
        let report = self.evaluate(&params)?;
        let shown = path.strip_prefix(self.out()).unwrap_or(&path);
        let artifact = EvalArtifact {
            config_hash: self.hash.clone(),
            checkpoint: shown.to_string_lossy().into_owned(),
            decoding: self.config.decoding(),
            report,
        };
        for format in REPORT_FORMATS {
            let body = match format {
                ReportFormat::Json => serde_json::to_string_pretty(&artifact)? + "\n",
                _ => format!(
                    "# config_hash={}\n# checkpoint={}\n{}",
                    artifact.config_hash,
                    artifact.checkpoint,
                    render_report(&artifact.report, format)
                ),
            };
            write_atomic(&self.report_path("eval", format), body.as_bytes())?;
        }
        Ok(artifact)
    }

    /// Trains vanilla GRPO and MMPO from the same SFT checkpoint and seed,
    /// evaluates all three policies and writes `compare/report.*`.
    pub fn compare(&self) -> Result<ComparisonReport> {
        let sft = self.sft_params()?;
        let mut rows = vec![(SFT_ROW.to_string(), self.evaluate(&sft)?)];
        for algorithm in [Algorithm::VanillaGrpo, Algorithm::Mmpo] {
            let params = self.train(algorithm)?.params;
            rows.push((row_name(algorithm), self.evaluate(&params)?));
        }
        let report = ComparisonReport {
            config_hash: self.hash.clone(),
            rows,
        };
        for format in REPORT_FORMATS {
            write_atomic(&self.report_path("compare", format), report.render(format).as_bytes())?;
        }
        Ok(report)
    }
}
