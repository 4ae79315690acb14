//! Evaluation metrics and report rendering.
//!
//! The positive class is `fake`. A response without a parseable answer counts
//! as wrong and as a negative prediction.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::SynthSample;
use crate::error::{Error, Result};
use crate::grammar::{Label, ParsedResponse, ResponseGrammar, ThinkingMode};
use crate::policy::{self, PolicyParams};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeHistogram {
    pub quick: usize,
    pub semantic: usize,
    pub prospective: usize,
    pub unclassifiable: usize,
}

impl ModeHistogram {
    pub fn add(&mut self, mode: Option<ThinkingMode>) {
        match mode {
            Some(ThinkingMode::QuickResponse) => self.quick += 1,
            Some(ThinkingMode::SemanticAnalysis) => self.semantic += 1,
            Some(ThinkingMode::ProspectiveSimulation) => self.prospective += 1,
            None => self.unclassifiable += 1,
        }
    }

    pub fn get(&self, mode: Option<ThinkingMode>) -> usize {
        match mode {
            Some(ThinkingMode::QuickResponse) => self.quick,
            Some(ThinkingMode::SemanticAnalysis) => self.semantic,
            Some(ThinkingMode::ProspectiveSimulation) => self.prospective,
            None => self.unclassifiable,
        }
    }

    pub fn total(&self) -> usize {
        self.quick + self.semantic + self.prospective + self.unclassifiable
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub sample_id: u64,
    pub truth: Label,
    pub parsed: ParsedResponse,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Accuracy and token usage of the responses produced in one mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeBreakdown {
    /// `None` groups unclassifiable responses.
    pub mode: Option<ThinkingMode>,
    pub count: usize,
    pub accuracy: f64,
    pub avg_tokens: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub avg_tokens: f64,
    pub total: usize,
    pub confusion: Confusion,
    pub mode_histogram: ModeHistogram,
    pub per_mode: Vec<ModeBreakdown>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn compute_metrics(records: &[EvalRecord]) -> Result<MetricReport> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let mut c = Confusion::default();
    let mut hist = ModeHistogram::default();
    let mut tokens: u64 = 0;
    // quick, semantic, prospective, unclassifiable
    let mut mode_correct = [0usize; 4];
    let mut mode_tokens = [0u64; 4];
    for r in records {
        let predicted_fake = r.parsed.answer == Some(Label::Fake);
        match (predicted_fake, r.truth == Label::Fake) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
        let slot = r.parsed.mode.map_or(3, ThinkingMode::index);
        hist.add(r.parsed.mode);
        mode_correct[slot] += usize::from(r.parsed.answer == Some(r.truth));
        mode_tokens[slot] += u64::from(r.parsed.token_count);
        tokens += u64::from(r.parsed.token_count);
    }
    // Missing answers land in fn_/tn above but are never correct.
    let correct: usize = mode_correct.iter().sum();
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if c.tp == 0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let modes = [
        Some(ThinkingMode::QuickResponse),
        Some(ThinkingMode::SemanticAnalysis),
        Some(ThinkingMode::ProspectiveSimulation),
        None,
    ];
    let per_mode = modes
        .into_iter()
        .enumerate()
        .filter(|(_, m)| hist.get(*m) > 0)
        .map(|(slot, mode)| {
            let count = hist.get(mode);
            ModeBreakdown {
                mode,
                count,
                accuracy: ratio(mode_correct[slot], count),
                avg_tokens: mode_tokens[slot] as f64 / count as f64,
            }
        })
        .collect();
    Ok(MetricReport {
        accuracy: ratio(correct, records.len()),
        f1,
        precision,
        recall,
        avg_tokens: tokens as f64 / records.len() as f64,
        total: records.len(),
        confusion: c,
        mode_histogram: hist,
        per_mode,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Table,
    Csv,
    Json,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Table => "txt",
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::UnknownFormat(other.to_string())),
        }
    }
}

pub const CSV_HEADER: &str =
    "accuracy,f1,precision,recall,avg_tokens,total,tp,fp,fn,tn,quick,semantic,prospective,unclassifiable";

fn csv_row(r: &MetricReport) -> String {
    let h = &r.mode_histogram;
    let c = &r.confusion;
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.accuracy, r.f1, r.precision, r.recall, r.avg_tokens, r.total, c.tp, c.fp, c.fn_, c.tn,
        h.quick, h.semantic, h.prospective, h.unclassifiable
    )
}

const TABLE_COLUMNS: [&str; 6] = ["Acc.", "F1", "Pre.", "Rec.", "Avg. Tokens", "Modes (Q/S/P/U)"];

fn table_row(name: &str, r: &MetricReport) -> String {
    let h = &r.mode_histogram;
    format!(
        "{:<18} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>12.1}   {}/{}/{}/{}",
        name,
        100.0 * r.accuracy,
        100.0 * r.f1,
        100.0 * r.precision,
        100.0 * r.recall,
        r.avg_tokens,
        h.quick,
        h.semantic,
        h.prospective,
        h.unclassifiable
    )
}

fn table_header(first: &str) -> String {
    format!(
        "{:<18} {:>7} {:>7} {:>7} {:>7} {:>12}   {}",
        first,
        TABLE_COLUMNS[0],
        TABLE_COLUMNS[1],
        TABLE_COLUMNS[2],
        TABLE_COLUMNS[3],
        TABLE_COLUMNS[4],
        TABLE_COLUMNS[5]
    )
}

pub fn render_report(report: &MetricReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("report serializes") + "\n",
        ReportFormat::Csv => format!("{CSV_HEADER}\n{}\n", csv_row(report)),
        ReportFormat::Table => {
            let mut out = table_header("model");
            out.push('\n');
            out.push_str(&table_row("policy", report));
            out.push('\n');
            if !report.per_mode.is_empty() {
                out.push_str("\nper mode:\n");
                for m in &report.per_mode {
                    let name = m.mode.map_or("unclassifiable", ThinkingMode::short_name);
                    let _ = writeln!(
                        out,
                        "  {:<14} n={:<6} acc={:.2} avg_tokens={:.1}",
                        name,
                        m.count,
                        100.0 * m.accuracy,
                        m.avg_tokens
                    );
                }
            }
            out
        }
    }
}

pub fn report_from_json(s: &str) -> Result<MetricReport> {
    Ok(serde_json::from_str(s)?)
}

/// Side-by-side reports for several named runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub config_hash: String,
    pub rows: Vec<(String, MetricReport)>,
}

impl ComparisonReport {
    pub fn get(&self, name: &str) -> Option<&MetricReport> {
        self.rows.iter().find(|r| r.0 == name).map(|r| &r.1)
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Json => serde_json::to_string_pretty(self).expect("report serializes") + "\n",
            ReportFormat::Csv => {
                let mut out = format!("# config_hash={}\nmethod,{CSV_HEADER}\n", self.config_hash);
                for (name, r) in &self.rows {
                    let _ = writeln!(out, "{name},{}", csv_row(r));
                }
                out
            }
            ReportFormat::Table => {
                let mut out = format!("# config_hash={}\n{}\n", self.config_hash, table_header("method"));
                for (name, r) in &self.rows {
                    out.push_str(&table_row(name, r));
                    out.push('\n');
                }
                out
            }
        }
    }
}

/// How the policy turns a sample into a response during evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Decoding {
    /// Argmax mode, then argmax answer.
    Greedy,
    /// Draw from the policy with a fixed seed.
    Sample { seed: u64 },
}

impl Default for Decoding {
    fn default() -> Self {
        Decoding::Sample { seed: 0 }
    }
}

pub fn evaluate_policy(
    params: &PolicyParams,
    samples: &[SynthSample],
    decoding: Decoding,
    grammar: &ResponseGrammar,
) -> Result<Vec<EvalRecord>> {
    let mut rng = match decoding {
        Decoding::Sample { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Decoding::Greedy => None,
    };
    samples
        .iter()
        .map(|s| {
            let text = match rng.as_mut() {
                Some(rng) => policy::sample(params, &s.features, rng)?.1,
                None => policy::greedy(params, &s.features)?.render(),
            };
            Ok(EvalRecord {
                sample_id: s.id,
                truth: s.truth,
                parsed: grammar.parse(&text),
            })
        })
        .collect()
}
