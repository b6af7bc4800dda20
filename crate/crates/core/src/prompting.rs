//! Few-shot prompt rendering and answer extraction.
//!
//! Each strategy ships a five-block exemplar file under `assets/exemplars`.
//! The files are embedded at build time and checked against the SHA-256
//! recorded in `manifest.json` the first time they are loaded.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Letter, McqItem, OpenItem};
use crate::seed::sha256_hex;

/// Number of exemplar blocks per strategy.
pub const SHOTS: usize = 5;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("{strategy} expects {expected} input, got {got}")]
    StrategyMismatch { strategy: PromptStrategy, expected: &'static str, got: &'static str },
    #[error("exemplar asset for {strategy}: hash {actual} does not match manifest {expected}")]
    AssetIntegrity { strategy: PromptStrategy, expected: String, actual: String },
    #[error("exemplar asset: {0}")]
    AssetFormat(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractError {
    #[error("no answer marker found")]
    NoAnswerMarker,
    #[error("answer letter ({0}) is outside A-D")]
    OutOfRangeLetter(char),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStrategy {
    McqClinicr,
    Clinicr,
    McqEliminative,
    Eliminative,
}

impl PromptStrategy {
    pub const ALL: [PromptStrategy; 4] = [
        PromptStrategy::McqClinicr,
        PromptStrategy::Clinicr,
        PromptStrategy::McqEliminative,
        PromptStrategy::Eliminative,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PromptStrategy::McqClinicr => "mcq_clinicr",
            PromptStrategy::Clinicr => "clinicr",
            PromptStrategy::McqEliminative => "mcq_eliminative",
            PromptStrategy::Eliminative => "eliminative",
        }
    }

    pub fn is_mcq(self) -> bool {
        matches!(self, PromptStrategy::McqClinicr | PromptStrategy::McqEliminative)
    }

    pub fn answer_kind(self) -> AnswerKind {
        if self.is_mcq() {
            AnswerKind::Letter
        } else {
            AnswerKind::FreeText
        }
    }

    fn asset(self) -> &'static str {
        match self {
            PromptStrategy::McqClinicr => include_str!("../assets/exemplars/mcq_clinicr.txt"),
            PromptStrategy::Clinicr => include_str!("../assets/exemplars/clinicr.txt"),
            PromptStrategy::McqEliminative => include_str!("../assets/exemplars/mcq_eliminative.txt"),
            PromptStrategy::Eliminative => include_str!("../assets/exemplars/eliminative.txt"),
        }
    }
}

impl fmt::Display for PromptStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PromptStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        PromptStrategy::ALL
            .into_iter()
            .find(|p| p.name() == key)
            .ok_or_else(|| format!("unknown strategy {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKind {
    Letter,
    FreeText,
}

/// Where the instruction header appears in the rendered prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeaderPlacement {
    None,
    Once,
    EachBlock,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExemplarBlock {
    pub question: String,
    pub reasoning: String,
    pub answer_line: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExemplarSet {
    pub strategy: PromptStrategy,
    pub header: String,
    pub placement: HeaderPlacement,
    pub blocks: Vec<ExemplarBlock>,
}

#[derive(Debug, Deserialize)]
struct Manifest {
    exemplars: Vec<ManifestEntry>,
}

#[derive(Debug, Deserialize)]
pub struct ManifestEntry {
    pub strategy: PromptStrategy,
    pub file: String,
    pub sha256: String,
    #[serde(default)]
    pub notes: Vec<String>,
}

const MANIFEST: &str = include_str!("../assets/exemplars/manifest.json");

/// Manifest entries, including the curation notes recorded for each file.
pub fn manifest() -> &'static [ManifestEntry] {
    static ENTRIES: OnceLock<Vec<ManifestEntry>> = OnceLock::new();
    ENTRIES.get_or_init(|| {
        serde_json::from_str::<Manifest>(MANIFEST)
            .expect("exemplar manifest is valid JSON")
            .exemplars
    })
}

impl ExemplarSet {
    /// The packaged exemplars for `strategy`, hash-checked on first use.
    pub fn load(strategy: PromptStrategy) -> Result<&'static ExemplarSet, PromptError> {
        static SETS: OnceLock<Vec<Result<ExemplarSet, String>>> = OnceLock::new();
        let sets = SETS.get_or_init(|| {
            PromptStrategy::ALL
                .iter()
                .map(|s| {
                    let expected = manifest()
                        .iter()
                        .find(|e| e.strategy == *s)
                        .map(|e| e.sha256.clone())
                        .unwrap_or_default();
                    ExemplarSet::parse_verified(s.asset(), &expected).map_err(|e| e.to_string())
                })
                .collect()
        });
        let idx = PromptStrategy::ALL.iter().position(|s| *s == strategy).expect("listed");
        sets[idx].as_ref().map_err(|e| PromptError::AssetFormat(e.clone()))
    }

    pub fn parse_verified(text: &str, expected_sha256: &str) -> Result<ExemplarSet, PromptError> {
        let set = ExemplarSet::parse(text)?;
        let actual = sha256_hex(text);
        if actual != expected_sha256 {
            return Err(PromptError::AssetIntegrity {
                strategy: set.strategy,
                expected: expected_sha256.to_string(),
                actual,
            });
        }
        Ok(set)
    }

    /// Parses the `@@`-delimited asset format.
    pub fn parse(text: &str) -> Result<ExemplarSet, PromptError> {
        let bad = |m: String| PromptError::AssetFormat(m);
        let mut strategy = None;
        let mut placement = HeaderPlacement::None;
        let mut header = String::new();
        let mut blocks = Vec::new();
        let mut pending: [Option<String>; 3] = [None, None, None];
        let mut section: Option<(&str, Vec<&str>)> = None;

        let close = |section: Option<(&str, Vec<&str>)>,
                         header: &mut String,
                         pending: &mut [Option<String>; 3],
                         blocks: &mut Vec<ExemplarBlock>|
         -> Result<(), PromptError> {
            let Some((name, body)) = section else { return Ok(()) };
            let body = body.join("\n");
            match name {
                "header" => *header = body,
                "question" => pending[0] = Some(body),
                "reasoning" => pending[1] = Some(body),
                "answer" => {
                    pending[2] = Some(body);
                    match pending {
                        [Some(q), Some(r), Some(a)] => blocks.push(ExemplarBlock {
                            question: std::mem::take(q),
                            reasoning: std::mem::take(r),
                            answer_line: std::mem::take(a),
                        }),
                        _ => return Err(PromptError::AssetFormat("answer before question/reasoning".into())),
                    }
                    *pending = [None, None, None];
                }
                other => return Err(PromptError::AssetFormat(format!("unknown section {other}"))),
            }
            Ok(())
        };

        for line in text.lines() {
            if let Some(directive) = line.strip_prefix("@@ ") {
                close(section.take(), &mut header, &mut pending, &mut blocks)?;
                let mut parts = directive.splitn(2, ' ');
                let key = parts.next().unwrap_or_default();
                let arg = parts.next().map(str::trim);
                match (key, arg) {
                    ("strategy", Some(name)) => strategy = Some(name.parse().map_err(bad)?),
                    ("header", Some(p)) => {
                        placement = match p {
                            "none" => HeaderPlacement::None,
                            "once" => HeaderPlacement::Once,
                            "each_block" => HeaderPlacement::EachBlock,
                            other => return Err(bad(format!("unknown header placement {other}"))),
                        };
                        section = Some(("header", Vec::new()));
                    }
                    (name @ ("question" | "reasoning" | "answer"), None) => section = Some((name, Vec::new())),
                    _ => return Err(bad(format!("bad directive {line:?}"))),
                }
            } else if let Some((_, body)) = section.as_mut() {
                body.push(line);
            } else if !line.trim().is_empty() {
                return Err(bad(format!("text outside a section: {line:?}")));
            }
        }
        close(section.take(), &mut header, &mut pending, &mut blocks)?;

        let strategy = strategy.ok_or_else(|| bad("missing strategy directive".into()))?;
        if blocks.len() != SHOTS {
            return Err(bad(format!("{strategy}: expected {SHOTS} blocks, found {}", blocks.len())));
        }
        if (placement == HeaderPlacement::None) != header.is_empty() {
            return Err(bad(format!("{strategy}: header text and placement disagree")));
        }
        let set = ExemplarSet { strategy, header, placement, blocks };
        for (i, block) in set.blocks.iter().enumerate() {
            let completion = set.block_completion(block);
            let ok = match strategy.answer_kind() {
                AnswerKind::Letter => extract_mcq_answer(&completion).is_ok(),
                AnswerKind::FreeText => extract_open_answer(&completion).is_ok(),
            };
            if !ok {
                return Err(bad(format!("{strategy}: block {} answer line does not parse", i + 1)));
            }
        }
        Ok(set)
    }

    /// The text a model should produce after `A:` for this block.
    pub fn block_completion(&self, block: &ExemplarBlock) -> String {
        match self.strategy.answer_kind() {
            AnswerKind::Letter => format!("{} {}", block.reasoning, block.answer_line),
            AnswerKind::FreeText => format!("{}\n{}", block.reasoning, block.answer_line),
        }
    }
}

/// The question being asked in a prompt.
#[derive(Debug, Clone, Copy)]
pub enum PromptInput<'a> {
    Mcq(&'a McqItem),
    Open(&'a OpenItem),
    /// Stem plus an options line, e.g. a synthetic slate question.
    McqText(&'a str),
}

impl PromptInput<'_> {
    fn kind(&self) -> &'static str {
        match self {
            PromptInput::Open(_) => "open",
            _ => "multiple-choice",
        }
    }

    fn question_text(&self) -> String {
        match self {
            PromptInput::Mcq(item) => item.question_text(),
            PromptInput::Open(item) => item.stem.clone(),
            PromptInput::McqText(text) => text.to_string(),
        }
    }
}

impl<'a> From<&'a McqItem> for PromptInput<'a> {
    fn from(item: &'a McqItem) -> Self {
        PromptInput::Mcq(item)
    }
}

impl<'a> From<&'a OpenItem> for PromptInput<'a> {
    fn from(item: &'a OpenItem) -> Self {
        PromptInput::Open(item)
    }
}

/// Renders header, the five exemplars and the target question, ending with
/// the bare generation stub `A:`.
pub fn render_prompt<'a>(strategy: PromptStrategy, input: impl Into<PromptInput<'a>>) -> Result<String, PromptError> {
    let input = input.into();
    let wants_mcq = strategy.is_mcq();
    if wants_mcq == matches!(input, PromptInput::Open(_)) {
        return Err(PromptError::StrategyMismatch {
            strategy,
            expected: if wants_mcq { "multiple-choice" } else { "open" },
            got: input.kind(),
        });
    }
    let set = ExemplarSet::load(strategy)?;
    Ok(render_with(set, &input.question_text()))
}

fn render_with(set: &ExemplarSet, target: &str) -> String {
    let mut out = String::new();
    let header = |out: &mut String| {
        out.push_str(&set.header);
        out.push_str("\n\n");
    };
    if set.placement == HeaderPlacement::Once {
        header(&mut out);
    }
    for block in &set.blocks {
        if set.placement == HeaderPlacement::EachBlock {
            header(&mut out);
        }
        out.push_str("Q: ");
        out.push_str(&block.question);
        out.push_str("\n\nA: ");
        out.push_str(&set.block_completion(block));
        out.push_str("\n\n");
    }
    if set.placement == HeaderPlacement::EachBlock {
        header(&mut out);
    }
    out.push_str("Q: ");
    out.push_str(target);
    out.push_str("\n\nA:");
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedAnswer {
    pub kind: AnswerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub letter: Option<Letter>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    /// The matched marker span, e.g. `The answer is (B)`.
    pub raw_tail: String,
    /// Byte offset of the marker in the completion; text before it is the reasoning.
    pub marker_start: usize,
}

impl ExtractedAnswer {
    /// Completion text preceding the answer marker.
    pub fn reasoning<'t>(&self, completion: &'t str) -> &'t str {
        completion.get(..self.marker_start).unwrap_or(completion).trim()
    }
}

fn mcq_marker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i:the answer is)\s*\(([A-Za-z])\)").unwrap())
}

fn open_marker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^[ \t]*Answer:").unwrap())
}

fn fallback_marker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)the answer is ").unwrap())
}

/// Letter from the last `The answer is (X)` in the completion.
pub fn extract_mcq_answer(completion: &str) -> Result<ExtractedAnswer, ExtractError> {
    let caps = mcq_marker_re()
        .captures_iter(completion)
        .last()
        .ok_or(ExtractError::NoAnswerMarker)?;
    let whole = caps.get(0).expect("group 0");
    let c = caps[1].chars().next().expect("one char");
    let letter = Letter::from_char(c).ok_or(ExtractError::OutOfRangeLetter(c.to_ascii_uppercase()))?;
    Ok(ExtractedAnswer {
        kind: AnswerKind::Letter,
        letter: Some(letter),
        text: None,
        raw_tail: whole.as_str().to_string(),
        marker_start: whole.start(),
    })
}

fn clean_payload(s: &str) -> &str {
    let s = s.trim();
    s.strip_suffix('.').unwrap_or(s).trim_end()
}

/// Free-text answer after the last line-initial `Answer:`, falling back to the
/// last `The answer is ...` when no such line exists.
pub fn extract_open_answer(completion: &str) -> Result<ExtractedAnswer, ExtractError> {
    if let Some(m) = open_marker_re().find_iter(completion).last() {
        let rest = &completion[m.end()..];
        let line_end = rest.find('\n').unwrap_or(rest.len());
        let payload = clean_payload(&rest[..line_end]);
        if !payload.is_empty() {
            return Ok(ExtractedAnswer {
                kind: AnswerKind::FreeText,
                letter: None,
                text: Some(payload.to_string()),
                raw_tail: completion[m.start()..m.end() + line_end].trim().to_string(),
                marker_start: m.start(),
            });
        }
    }
    if let Some(m) = fallback_marker_re().find_iter(completion).last() {
        let rest = &completion[m.end()..];
        let mut end = rest.find('\n').unwrap_or(rest.len());
        if let Some(stop) = rest[..end].find(". ") {
            end = stop;
        }
        let payload = clean_payload(&rest[..end]);
        if !payload.is_empty() {
            return Ok(ExtractedAnswer {
                kind: AnswerKind::FreeText,
                letter: None,
                text: Some(payload.to_string()),
                raw_tail: completion[m.start()..m.end() + end].trim().to_string(),
                marker_start: m.start(),
            });
        }
    }
    Err(ExtractError::NoAnswerMarker)
}

/// Dispatches on the strategy's answer grammar.
pub fn extract_answer(strategy: PromptStrategy, completion: &str) -> Result<ExtractedAnswer, ExtractError> {
    match strategy.answer_kind() {
        AnswerKind::Letter => extract_mcq_answer(completion),
        AnswerKind::FreeText => extract_open_answer(completion),
    }
}
