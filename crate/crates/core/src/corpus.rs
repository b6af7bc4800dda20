//! Question corpora: MedQA-style multiple-choice records and their open-ended
//! rewrites.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::{Captures, Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::backend::{BackendError, ModelBackend, SamplingParams};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: malformed record: {source}")]
    Malformed {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {reason}")]
    Invalid { line: usize, reason: String },
    #[error("invalid item: {0}")]
    InvalidItem(String),
    #[error("item {id}: stem still reads as multiple choice after rewrite: {stem:?}")]
    UnconvertedStem { id: String, stem: String },
    #[error("llm-assisted rewrite requires a model backend")]
    MissingBackend,
    #[error("item {id}: rewrite backend returned no usable text")]
    EmptyRewrite { id: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Option letter of a four-option question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Letter {
    A,
    B,
    C,
    D,
}

impl Letter {
    pub const ALL: [Letter; 4] = [Letter::A, Letter::B, Letter::C, Letter::D];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Letter> {
        Self::ALL.get(index).copied()
    }

    pub fn as_char(self) -> char {
        (b'A' + self as u8) as char
    }

    pub fn from_char(c: char) -> Option<Letter> {
        match c.to_ascii_uppercase() {
            'A' => Some(Letter::A),
            'B' => Some(Letter::B),
            'C' => Some(Letter::C),
            'D' => Some(Letter::D),
            _ => None,
        }
    }
}

impl fmt::Display for Letter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl FromStr for Letter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.trim().chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Letter::from_char(c).ok_or_else(|| format!("not an option letter: {s:?}")),
            _ => Err(format!("not an option letter: {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    #[default]
    MedqaTest,
    MedqaTrain,
    Synthetic,
}

/// A four-option USMLE-style question.
#[derive(Debug, Clone, PartialEq)]
pub struct McqItem {
    id: String,
    stem: String,
    options: BTreeMap<Letter, String>,
    answer_key: Letter,
    source: Source,
    metadata: BTreeMap<String, Value>,
}

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl McqItem {
    pub fn new(
        id: impl Into<String>,
        stem: impl Into<String>,
        options: BTreeMap<Letter, String>,
        answer_key: Letter,
        source: Source,
    ) -> Result<Self, CorpusError> {
        let item = McqItem {
            id: id.into(),
            stem: stem.into(),
            options,
            answer_key,
            source,
            metadata: BTreeMap::new(),
        };
        item.check().map_err(CorpusError::InvalidItem)?;
        Ok(item)
    }

    pub fn with_metadata(mut self, metadata: BTreeMap<String, Value>) -> Self {
        self.metadata = metadata;
        self
    }

    fn check(&self) -> Result<(), String> {
        if self.stem.trim().is_empty() {
            return Err("empty stem".into());
        }
        if self.options.len() != 4 {
            return Err(format!("expected 4 options, found {}", self.options.len()));
        }
        if !self.options.contains_key(&self.answer_key) {
            return Err(format!("answer key {} is not an option", self.answer_key));
        }
        let mut seen: Vec<String> = Vec::with_capacity(4);
        for (letter, text) in &self.options {
            let norm = collapse_ws(text);
            if norm.is_empty() {
                return Err(format!("option {letter} is empty"));
            }
            if seen.contains(&norm) {
                return Err(format!("option {letter} duplicates another option"));
            }
            seen.push(norm);
        }
        Ok(())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn stem(&self) -> &str {
        &self.stem
    }

    pub fn options(&self) -> &BTreeMap<Letter, String> {
        &self.options
    }

    pub fn option(&self, letter: Letter) -> Option<&str> {
        self.options.get(&letter).map(String::as_str)
    }

    pub fn answer_key(&self) -> Letter {
        self.answer_key
    }

    pub fn answer_text(&self) -> &str {
        &self.options[&self.answer_key]
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn metadata(&self) -> &BTreeMap<String, Value> {
        &self.metadata
    }

    /// Stem followed by the options line, as shown in MCQ prompts.
    pub fn question_text(&self) -> String {
        let options: Vec<(Letter, &str)> = self.options.iter().map(|(l, t)| (*l, t.as_str())).collect();
        format_mcq_question(&self.stem, &options)
    }
}

/// Renders `stem` followed by `(A) t1 (B) t2 ...` on its own line.
pub fn format_mcq_question(stem: &str, options: &[(Letter, &str)]) -> String {
    let line = options
        .iter()
        .map(|(letter, text)| format!("({letter}) {text}"))
        .collect::<Vec<_>>()
        .join(" ");
    format!("{stem}\n{line}")
}

fn options_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^[ \t]*\(A\)[ \t]").unwrap())
}

fn option_marker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\(([A-D])\) ").unwrap())
}

fn embedded_options_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\(A\)[^\n]*\(B\)").unwrap())
}

/// Splits text produced by [`format_mcq_question`] back into stem and options.
///
/// Returns `None` when no options line is present. Option letters must run
/// A, B, C, ... without gaps.
pub fn split_mcq_question(text: &str) -> Option<(String, Vec<(Letter, String)>)> {
    let start = options_line_re().find_iter(text).last()?.start();
    let stem = text[..start].trim_end_matches(['\n', ' ', '\t']).to_string();
    let line = text[start..].trim();
    let mut options = Vec::new();
    for caps in option_marker_re().captures_iter(line) {
        let letter = Letter::from_char(caps[1].chars().next()?)?;
        if letter.index() != options.len() {
            // A "(X) " inside an option text belongs to the previous option.
            continue;
        }
        options.push((letter, caps.get(0)?.start()));
    }
    let mut out = Vec::with_capacity(options.len());
    for (i, (letter, pos)) in options.iter().enumerate() {
        let body_start = pos + 4;
        let body_end = options.get(i + 1).map(|(_, p)| *p).unwrap_or(line.len());
        out.push((*letter, line[body_start..body_end].trim_end().to_string()));
    }
    Some((stem, out))
}

/// Open-ended rewrite of a question; no options are embedded in `stem`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "OpenItemRecord")]
pub struct OpenItem {
    pub id: String,
    pub stem: String,
    pub gold_answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_reasoning: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_mcq_id: Option<String>,
}

#[derive(Deserialize)]
struct OpenItemRecord {
    id: String,
    stem: String,
    gold_answer: String,
    #[serde(default)]
    gold_reasoning: Option<String>,
    #[serde(default)]
    source_mcq_id: Option<String>,
}

impl TryFrom<OpenItemRecord> for OpenItem {
    type Error = CorpusError;

    fn try_from(r: OpenItemRecord) -> Result<Self, Self::Error> {
        OpenItem::new(r.id, r.stem, r.gold_answer, r.gold_reasoning, r.source_mcq_id)
    }
}

impl OpenItem {
    pub fn new(
        id: impl Into<String>,
        stem: impl Into<String>,
        gold_answer: impl Into<String>,
        gold_reasoning: Option<String>,
        source_mcq_id: Option<String>,
    ) -> Result<Self, CorpusError> {
        let item = OpenItem {
            id: id.into(),
            stem: stem.into(),
            gold_answer: gold_answer.into(),
            gold_reasoning,
            source_mcq_id,
        };
        if item.stem.trim().is_empty() {
            return Err(CorpusError::InvalidItem(format!("{}: empty stem", item.id)));
        }
        if embedded_options_re().is_match(&item.stem) {
            return Err(CorpusError::InvalidItem(format!("{}: stem embeds options", item.id)));
        }
        if item.gold_answer.trim().is_empty() {
            return Err(CorpusError::InvalidItem(format!("{}: empty gold answer", item.id)));
        }
        Ok(item)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RewriteMode {
    #[default]
    RuleBased,
    LlmAssisted,
}

#[derive(Serialize, Deserialize)]
struct MedqaRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<Value>,
    question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    answer: Option<String>,
    options: BTreeMap<String, String>,
    answer_idx: String,
    #[serde(flatten)]
    extra: BTreeMap<String, Value>,
}

/// Parses MedQA JSONL (`question`, `options`, `answer_idx`, optional `answer`
/// and `id`). Blank and `_meta` lines are skipped; unknown fields are kept as
/// metadata.
pub fn parse_mcq_corpus(text: &str, source: Source) -> Result<Vec<McqItem>, CorpusError> {
    let mut items = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() || is_meta_line(raw) {
            continue;
        }
        let record: MedqaRecord =
            serde_json::from_str(raw).map_err(|source| CorpusError::Malformed { line, source })?;
        let invalid = |reason: String| CorpusError::Invalid { line, reason };
        let id = match record.id {
            None | Some(Value::Null) => format!("line-{line}"),
            Some(Value::String(s)) => s,
            Some(Value::Number(n)) => n.to_string(),
            Some(other) => return Err(invalid(format!("unsupported id {other}"))),
        };
        if record.options.len() != 4 {
            return Err(invalid(format!("expected 4 options, found {}", record.options.len())));
        }
        let mut options = BTreeMap::new();
        for (key, text) in record.options {
            let letter: Letter = key.parse().map_err(invalid)?;
            options.insert(letter, text);
        }
        let answer_key: Letter = record
            .answer_idx
            .parse()
            .map_err(|e: String| invalid(format!("answer_idx: {e}")))?;
        let Some(correct) = options.get(&answer_key) else {
            return Err(invalid(format!("answer key {answer_key} is not an option")));
        };
        if let Some(answer) = &record.answer {
            if collapse_ws(answer) != collapse_ws(correct) {
                return Err(invalid(format!(
                    "answer text {answer:?} disagrees with option {answer_key}"
                )));
            }
        }
        let item = McqItem {
            id,
            stem: record.question,
            options,
            answer_key,
            source,
            metadata: record.extra,
        };
        item.check().map_err(invalid)?;
        items.push(item);
    }
    Ok(items)
}

/// Inverse of [`parse_mcq_corpus`]; one record per line, trailing newline.
pub fn write_mcq_corpus(items: &[McqItem]) -> String {
    let mut out = String::new();
    for item in items {
        let record = MedqaRecord {
            id: Some(Value::String(item.id.clone())),
            question: item.stem.clone(),
            answer: Some(item.answer_text().to_string()),
            options: item.options.iter().map(|(l, t)| (l.to_string(), t.clone())).collect(),
            answer_idx: item.answer_key.to_string(),
            extra: item.metadata.clone(),
        };
        out.push_str(&serde_json::to_string(&record).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Parses OpenItem JSONL. Lines carrying a `_meta` header object are skipped.
pub fn parse_open_items(text: &str) -> Result<Vec<OpenItem>, CorpusError> {
    let mut items = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() || is_meta_line(raw) {
            continue;
        }
        let item: OpenItem =
            serde_json::from_str(raw).map_err(|source| CorpusError::Malformed { line, source })?;
        items.push(item);
    }
    Ok(items)
}

pub fn write_open_items(items: &[OpenItem]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("item serializes"));
        out.push('\n');
    }
    out
}

/// True for the `{"_meta": ...}` provenance header line of a JSONL file.
pub fn is_meta_line(line: &str) -> bool {
    let trimmed = line.trim_start();
    trimmed.starts_with("{\"_meta\"")
}

#[derive(Debug, Deserialize)]
struct RewritePattern {
    pattern: String,
    replacement: String,
}

struct CompiledPattern {
    re: Regex,
    replacement: String,
}

fn rewrite_table() -> &'static [CompiledPattern] {
    static TABLE: OnceLock<Vec<CompiledPattern>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let raw: Vec<RewritePattern> =
            serde_json::from_str(include_str!("../assets/rewrite_patterns.json"))
                .expect("rewrite pattern table is valid JSON");
        raw.into_iter()
            .map(|p| CompiledPattern {
                re: RegexBuilder::new(&p.pattern)
                    .case_insensitive(true)
                    .build()
                    .expect("rewrite pattern compiles"),
                replacement: p.replacement,
            })
            .collect()
    })
}

fn mcq_phrase_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        RegexBuilder::new(r"which of the following")
            .case_insensitive(true)
            .build()
            .unwrap()
    })
}

/// True if the stem still reads as a multiple-choice question.
pub fn has_mcq_phrasing(stem: &str) -> bool {
    mcq_phrase_re().is_match(stem) || embedded_options_re().is_match(stem)
}

fn strip_embedded_options(stem: &str) -> &str {
    match options_line_re().find(stem) {
        Some(m) => stem[..m.start()].trim_end(),
        None => stem.trim_end(),
    }
}

/// Applies the first matching rewrite pattern (all of its occurrences).
///
/// The replacement's first letter takes the case of the matched text's first
/// letter, so sentence-initial "Which of the following is" becomes "What is".
pub fn rule_based_rewrite(stem: &str) -> String {
    for pattern in rewrite_table() {
        if pattern.re.is_match(stem) {
            return pattern
                .re
                .replace_all(stem, |caps: &Captures<'_>| {
                    let mut expanded = String::new();
                    caps.expand(&pattern.replacement, &mut expanded);
                    let upper = caps[0].chars().next().is_some_and(char::is_uppercase);
                    match_case(&expanded, upper)
                })
                .into_owned();
        }
    }
    stem.to_string()
}

fn match_case(s: &str, upper: bool) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(first) if upper => first.to_uppercase().chain(chars).collect(),
        Some(first) => first.to_lowercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Instruction used for backend-assisted rewrites.
pub fn rewrite_prompt(item: &McqItem) -> String {
    format!(
        "Rewrite the following multiple-choice medical question as an open-ended question. \
         Remove the answer options and rephrase the final sentence so that it can be answered \
         without options. Keep every clinical detail unchanged. Reply with the rewritten \
         question only.\n\nQuestion: {}\n\nOpen-ended question:",
        item.question_text()
    )
}

/// Converts a multiple-choice item into its open-ended counterpart.
pub fn mcq_to_open(
    item: &McqItem,
    mode: RewriteMode,
    backend: Option<&dyn ModelBackend>,
) -> Result<OpenItem, CorpusError> {
    let base = strip_embedded_options(&item.stem);
    let stem = match mode {
        RewriteMode::RuleBased => rule_based_rewrite(base),
        RewriteMode::LlmAssisted => {
            let backend = backend.ok_or(CorpusError::MissingBackend)?;
            let params = SamplingParams::deterministic(1024);
            let completions = backend.complete(&rewrite_prompt(item), &params)?;
            let text = completions
                .first()
                .map(|c| c.text.trim().to_string())
                .unwrap_or_default();
            if text.is_empty() {
                return Err(CorpusError::EmptyRewrite { id: item.id.clone() });
            }
            strip_embedded_options(&text).to_string()
        }
    };
    if has_mcq_phrasing(&stem) {
        return Err(CorpusError::UnconvertedStem { id: item.id.clone(), stem });
    }
    OpenItem::new(
        item.id.clone(),
        stem,
        item.answer_text().to_string(),
        None,
        Some(item.id.clone()),
    )
}
