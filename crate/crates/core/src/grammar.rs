//! Thinking modes and the tag-structured response language.
//!
//! A response is either a bare answer block (quick response) or a think
//! block followed by an answer block:
//!
//! ```text
//! <answer>fake</answer>
//! <think>[image analysis] ...
//! [text analysis] ...
//! [cross-modal analysis] ...
//! [summary] ...</think><answer>real</answer>
//! ```
//!
//! Inside `<think>` every reasoning action is introduced by its canonical
//! label (see [`ActionKind::label`]). The mode of a response is recovered from
//! the ordered label sequence alone; segment bodies are opaque.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";

/// Binary detection label. `Fake` is the positive class in metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Real, Label::Fake];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Real => "real",
            Label::Fake => "fake",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Real => Label::Fake,
            Label::Fake => Label::Real,
        }
    }

    /// Case-insensitive match against `real` / `fake`, ignoring surrounding
    /// whitespace.
    pub fn parse_answer(s: &str) -> Option<Label> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("real") {
            Some(Label::Real)
        } else if s.eq_ignore_ascii_case("fake") {
            Some(Label::Fake)
        } else {
            None
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    ImageAnalysis,
    TextAnalysis,
    CrossModalAnalysis,
    Summary,
    Attribution,
}

impl ActionKind {
    pub const ALL: [ActionKind; 5] = [
        ActionKind::ImageAnalysis,
        ActionKind::TextAnalysis,
        ActionKind::CrossModalAnalysis,
        ActionKind::Summary,
        ActionKind::Attribution,
    ];

    /// Marker that opens this action's segment inside `<think>`.
    pub fn label(self) -> &'static str {
        match self {
            ActionKind::ImageAnalysis => "[image analysis]",
            ActionKind::TextAnalysis => "[text analysis]",
            ActionKind::CrossModalAnalysis => "[cross-modal analysis]",
            ActionKind::Summary => "[summary]",
            ActionKind::Attribution => "[attribution]",
        }
    }

    /// Filler body used when the policy renders a response; the toy policy
    /// does not generate reasoning text.
    pub fn canonical_body(self) -> &'static str {
        match self {
            ActionKind::ImageAnalysis => "key visual elements and content of the image inspected.",
            ActionKind::TextAnalysis => "claims and details of the accompanying text described.",
            ActionKind::CrossModalAnalysis => "consistency between image and text checked.",
            ActionKind::Summary => "evidence summarized into a final judgment.",
            ActionKind::Attribution => "AI-generated versus human-generated origin assessed.",
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let l = self.label();
        f.write_str(&l[1..l.len() - 1])
    }
}

const SEMANTIC_ACTIONS: [ActionKind; 4] = [
    ActionKind::ImageAnalysis,
    ActionKind::TextAnalysis,
    ActionKind::CrossModalAnalysis,
    ActionKind::Summary,
];

/// The three thinking depths, from reactive to prospective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThinkingMode {
    QuickResponse,
    SemanticAnalysis,
    ProspectiveSimulation,
}

impl ThinkingMode {
    pub const ALL: [ThinkingMode; 3] = [
        ThinkingMode::QuickResponse,
        ThinkingMode::SemanticAnalysis,
        ThinkingMode::ProspectiveSimulation,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<ThinkingMode> {
        ThinkingMode::ALL.get(i).copied()
    }

    /// Ordered reasoning actions this mode performs inside `<think>`.
    pub fn actions(self) -> &'static [ActionKind] {
        match self {
            ThinkingMode::QuickResponse => &[],
            ThinkingMode::SemanticAnalysis => &SEMANTIC_ACTIONS,
            ThinkingMode::ProspectiveSimulation => &ActionKind::ALL,
        }
    }

    /// Number of three-feature blocks this mode observes.
    pub fn visible_blocks(self) -> usize {
        self.index() + 1
    }

    pub fn short_name(self) -> &'static str {
        match self {
            ThinkingMode::QuickResponse => "quick",
            ThinkingMode::SemanticAnalysis => "semantic",
            ThinkingMode::ProspectiveSimulation => "prospective",
        }
    }
}

impl fmt::Display for ThinkingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ThinkingMode::QuickResponse => "quick response",
            ThinkingMode::SemanticAnalysis => "semantic analysis",
            ThinkingMode::ProspectiveSimulation => "prospective simulation",
        })
    }
}

/// Think-body token cost charged to each mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenCosts {
    pub quick: u32,
    pub semantic: u32,
    pub prospective: u32,
}

impl Default for TokenCosts {
    fn default() -> Self {
        Self {
            quick: 5,
            semantic: 120,
            prospective: 180,
        }
    }
}

impl TokenCosts {
    pub fn cost(&self, mode: ThinkingMode) -> u32 {
        match mode {
            ThinkingMode::QuickResponse => self.quick,
            ThinkingMode::SemanticAnalysis => self.semantic,
            ThinkingMode::ProspectiveSimulation => self.prospective,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.quick < self.semantic && self.semantic < self.prospective {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "token costs must be strictly increasing with depth, got {}/{}/{}",
                self.quick, self.semantic, self.prospective
            )))
        }
    }
}

/// Result of parsing arbitrary response text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedResponse {
    /// `None` when the structure matches no thinking mode.
    pub mode: Option<ThinkingMode>,
    /// `None` when no answer block holds `real` or `fake`.
    pub answer: Option<Label>,
    pub think_segments: Vec<(ActionKind, String)>,
    pub token_count: u32,
    pub well_formed: bool,
    /// Number of complete `<think>` blocks found.
    pub think_blocks: usize,
    /// Whether the think block holds text before its first segment label.
    pub unlabeled_think_text: bool,
}

/// Parser/renderer bound to a set of token costs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ResponseGrammar {
    pub costs: TokenCosts,
}

impl ResponseGrammar {
    pub fn new(costs: TokenCosts) -> Result<Self> {
        costs.validate()?;
        Ok(Self { costs })
    }

    pub fn render(
        &self,
        mode: ThinkingMode,
        actions_text: &BTreeMap<ActionKind, String>,
        answer: Label,
    ) -> Result<String> {
        render(mode, actions_text, answer)
    }

    /// Renders `mode` with the canonical filler body for every action.
    pub fn render_canonical(&self, mode: ThinkingMode, answer: Label) -> String {
        render_canonical(mode, answer)
    }

    pub fn parse(&self, text: &str) -> ParsedResponse {
        let mut parsed = parse_structure(text);
        parsed.mode = classify_mode(&parsed);
        parsed.well_formed &= parsed.answer.is_some();
        if parsed.mode != Some(ThinkingMode::QuickResponse) && parsed.think_blocks != 1 {
            parsed.well_formed = false;
        }
        parsed.token_count = match parsed.mode {
            Some(mode) if parsed.well_formed => self.costs.cost(mode) + 1,
            _ => text.split_whitespace().count() as u32,
        };
        parsed
    }
}

fn contains_markup(s: &str) -> bool {
    [THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE]
        .iter()
        .any(|t| s.contains(t))
        || ActionKind::ALL.iter().any(|a| s.contains(a.label()))
}

/// Renders a response. `actions_text` must hold exactly the actions of `mode`.
pub fn render(
    mode: ThinkingMode,
    actions_text: &BTreeMap<ActionKind, String>,
    answer: Label,
) -> Result<String> {
    let required = mode.actions();
    if let Some(&extra) = actions_text.keys().find(|a| !required.contains(a)) {
        return Err(Error::ExtraActionText {
            mode,
            action: extra,
        });
    }
    let mut out = String::new();
    if !required.is_empty() {
        let mut segments = Vec::with_capacity(required.len());
        for &action in required {
            let text = actions_text
                .get(&action)
                .ok_or(Error::MissingActionText { mode, action })?;
            if contains_markup(text) {
                return Err(Error::ReservedMarkup(action));
            }
            segments.push(format!("{} {}", action.label(), text.trim()));
        }
        out.push_str(THINK_OPEN);
        out.push_str(&segments.join("\n"));
        out.push_str(THINK_CLOSE);
    }
    out.push_str(ANSWER_OPEN);
    out.push_str(answer.as_str());
    out.push_str(ANSWER_CLOSE);
    Ok(out)
}

pub fn render_canonical(mode: ThinkingMode, answer: Label) -> String {
    let texts = mode
        .actions()
        .iter()
        .map(|&a| (a, a.canonical_body().to_string()))
        .collect();
    render(mode, &texts, answer).expect("canonical bodies carry no markup")
}

/// Parses with the default token costs. Total: never fails on any input.
pub fn parse(text: &str) -> ParsedResponse {
    ResponseGrammar::default().parse(text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BlockKind {
    Think,
    Answer,
}

#[derive(Debug, Clone, Copy)]
struct Tag {
    pos: usize,
    len: usize,
    kind: BlockKind,
    open: bool,
}

fn scan_tags(text: &str) -> Vec<Tag> {
    let mut tags = Vec::new();
    for (pat, kind, open) in [
        (THINK_OPEN, BlockKind::Think, true),
        (THINK_CLOSE, BlockKind::Think, false),
        (ANSWER_OPEN, BlockKind::Answer, true),
        (ANSWER_CLOSE, BlockKind::Answer, false),
    ] {
        tags.extend(text.match_indices(pat).map(|(pos, _)| Tag {
            pos,
            len: pat.len(),
            kind,
            open,
        }));
    }
    tags.sort_by_key(|t| t.pos);
    tags
}

/// Tag-level pass: locates blocks, extracts the answer and think segments.
/// `mode` and `token_count` are filled in by the caller.
fn parse_structure(text: &str) -> ParsedResponse {
    let mut anomaly = false;
    let mut open: Option<(BlockKind, usize)> = None;
    let mut cursor = 0;
    let mut blocks: Vec<(BlockKind, &str)> = Vec::new();

    for tag in scan_tags(text) {
        if open.is_none() && !text[cursor..tag.pos].trim().is_empty() {
            anomaly = true;
        }
        match (open, tag.open) {
            (None, true) => open = Some((tag.kind, tag.pos + tag.len)),
            (Some(_), true) => {
                // Nested opener: restart from the innermost one.
                anomaly = true;
                open = Some((tag.kind, tag.pos + tag.len));
            }
            (Some((kind, start)), false) if kind == tag.kind => {
                blocks.push((kind, &text[start..tag.pos]));
                open = None;
            }
            _ => anomaly = true,
        }
        cursor = tag.pos + tag.len;
    }
    if open.is_some() || !text[cursor..].trim().is_empty() {
        anomaly = true;
    }

    let answers: Vec<&str> = blocks
        .iter()
        .filter(|(k, _)| *k == BlockKind::Answer)
        .map(|(_, s)| *s)
        .collect();
    let thinks: Vec<&str> = blocks
        .iter()
        .filter(|(k, _)| *k == BlockKind::Think)
        .map(|(_, s)| *s)
        .collect();
    let answer = answers.first().and_then(|s| Label::parse_answer(s));

    // Layout: at most one think block, then exactly one answer block, last.
    let layout_ok = answers.len() == 1
        && thinks.len() <= 1
        && blocks.last().map(|(k, _)| *k) == Some(BlockKind::Answer);

    let (think_segments, unlabeled_think_text) = match thinks.as_slice() {
        [body] => split_segments(body),
        _ => (Vec::new(), false),
    };

    ParsedResponse {
        mode: None,
        answer,
        think_segments,
        token_count: 0,
        well_formed: !anomaly && layout_ok,
        think_blocks: thinks.len(),
        unlabeled_think_text,
    }
}

/// Splits a think body at segment labels. Returns the segments and whether
/// any non-whitespace text precedes the first label.
fn split_segments(body: &str) -> (Vec<(ActionKind, String)>, bool) {
    let mut marks: Vec<(usize, ActionKind)> = ActionKind::ALL
        .iter()
        .flat_map(|&a| body.match_indices(a.label()).map(move |(p, _)| (p, a)))
        .collect();
    marks.sort_by_key(|m| m.0);

    let first = marks.first().map_or(body.len(), |m| m.0);
    let unlabeled = !body[..first].trim().is_empty();
    let segments = marks
        .iter()
        .enumerate()
        .map(|(i, &(pos, action))| {
            let start = pos + action.label().len();
            let end = marks.get(i + 1).map_or(body.len(), |m| m.0);
            (action, body[start..end].trim().to_string())
        })
        .collect();
    (segments, unlabeled)
}

/// Maps response structure to a thinking mode. Only the presence of think
/// blocks and the ordered segment labels matter, never segment bodies.
pub fn classify_mode(parsed: &ParsedResponse) -> Option<ThinkingMode> {
    match parsed.think_blocks {
        0 if parsed.answer.is_some() => Some(ThinkingMode::QuickResponse),
        1 if !parsed.unlabeled_think_text => {
            let labels: Vec<ActionKind> = parsed.think_segments.iter().map(|s| s.0).collect();
            [ThinkingMode::SemanticAnalysis, ThinkingMode::ProspectiveSimulation]
                .into_iter()
                .find(|m| m.actions() == labels.as_slice())
        }
        _ => None,
    }
}
