//! Verifier training data and reward scoring.
//!
//! Each MCQ item yields four pointwise examples (one per option, label 1 for
//! the keyed option) and three chosen/rejected pairs. Scoring goes through
//! [`RewardClient`]; the HTTP client speaks `POST /score`.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ModelBackend, SamplingParams};
use crate::corpus::{is_meta_line, Letter, McqItem, Source};
use crate::pipeline::{normalize_answer, token_jaccard};

const TERMINATOR: &str = "Thus, the answer is ";

#[derive(Debug, Error)]
pub enum VerifierError {
    #[error("verifier unavailable: {0}")]
    Unavailable(String),
    #[error("invalid verifier input: {0}")]
    InvalidInput(String),
    #[error("{0}")]
    Validation(String),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Pointwise training record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifierExample {
    pub question: String,
    pub reasoning: String,
    pub option: String,
    pub label: u8,
    pub source_item_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSide {
    /// Reasoning without the closing "Thus, the answer is ..." sentence.
    pub reasoning: String,
    pub option: String,
}

impl PairSide {
    /// Wire text: reasoning, newline, terminator naming the option.
    pub fn render(&self) -> String {
        format!("{}\n{TERMINATOR}{}.", self.reasoning, self.option)
    }

    fn parse(text: &str) -> Option<PairSide> {
        let at = text.rfind(&format!("\n{TERMINATOR}"))?;
        let option = text[at + 1 + TERMINATOR.len()..].strip_suffix('.')?;
        Some(PairSide { reasoning: text[..at].to_string(), option: option.to_string() })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifierPair {
    pub question: String,
    pub chosen: PairSide,
    pub rejected: PairSide,
    pub source_item_id: String,
}

#[derive(Serialize, Deserialize)]
struct PairRecord {
    prompt: String,
    chosen: String,
    rejected: String,
    source_item_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardScore {
    pub value: f64,
}

pub trait RewardClient: Send + Sync {
    fn score(&self, question: &str, reasoning: &str, option: &str) -> Result<RewardScore, VerifierError>;
}

/// Text the reward model reads for one option.
pub fn verifier_input_text(question: &str, reasoning: &str, option: &str) -> String {
    format!("Q: {question}\nA: {reasoning}\nAnswer: {option}")
}

/// Scores one option after checking that every field is non-empty.
pub fn score(question: &str, reasoning: &str, option: &str, client: &dyn RewardClient) -> Result<RewardScore, VerifierError> {
    for (name, value) in [("question", question), ("reasoning", reasoning), ("option", option)] {
        if value.trim().is_empty() {
            return Err(VerifierError::InvalidInput(format!("{name} is empty")));
        }
    }
    let reward = client.score(question, reasoning, option)?;
    if !reward.value.is_finite() {
        return Err(VerifierError::Unavailable(format!("non-finite reward {}", reward.value)));
    }
    Ok(reward)
}

/// Test double: reward is the token-set Jaccard between the normalized
/// option and a fixed gold answer.
#[derive(Debug, Clone)]
pub struct OverlapRewardClient {
    gold_norm: String,
}

impl OverlapRewardClient {
    pub fn new(gold: &str) -> Self {
        OverlapRewardClient { gold_norm: normalize_answer(gold) }
    }
}

impl RewardClient for OverlapRewardClient {
    fn score(&self, _question: &str, _reasoning: &str, option: &str) -> Result<RewardScore, VerifierError> {
        Ok(RewardScore { value: token_jaccard(&normalize_answer(option), &self.gold_norm) })
    }
}

#[cfg(feature = "http")]
pub use http_client::HttpRewardClient;

#[cfg(feature = "http")]
mod http_client {
    use std::time::Duration;

    use serde::{Deserialize, Serialize};

    use super::{RewardClient, RewardScore, VerifierError};
    use crate::backend::{JsonClient, RetryPolicy};

    #[derive(Serialize)]
    struct ScoreRequest<'a> {
        question: &'a str,
        reasoning: &'a str,
        option: &'a str,
    }

    #[derive(Deserialize)]
    struct ScoreResponse {
        reward: f64,
    }

    /// Client for `POST {base_url}/score`.
    #[derive(Debug)]
    pub struct HttpRewardClient {
        url: String,
        client: JsonClient,
    }

    impl HttpRewardClient {
        pub fn new(base_url: &str, timeout: Duration, retry: RetryPolicy, max_in_flight: usize) -> Self {
            HttpRewardClient {
                url: format!("{}/score", base_url.trim_end_matches('/')),
                client: JsonClient::new(timeout, retry, max_in_flight, None),
            }
        }

        pub fn url(&self) -> &str {
            &self.url
        }
    }

    impl RewardClient for HttpRewardClient {
        fn score(&self, question: &str, reasoning: &str, option: &str) -> Result<RewardScore, VerifierError> {
            let response: ScoreResponse = self
                .client
                .post(&self.url, &ScoreRequest { question, reasoning, option })
                .map_err(|e| VerifierError::Unavailable(e.to_string()))?;
            Ok(RewardScore { value: response.reward })
        }
    }
}

/// An MCQ with one reasoning paragraph per option, used as prompt exemplars
/// and as a fixture.
#[derive(Debug, Clone, Deserialize)]
pub struct ReasonedItem {
    pub id: String,
    pub question: String,
    pub options: std::collections::BTreeMap<Letter, String>,
    pub answer_idx: Letter,
    pub reasonings: std::collections::BTreeMap<Letter, String>,
}

impl ReasonedItem {
    pub fn to_mcq(&self) -> McqItem {
        McqItem::new(self.id.clone(), self.question.clone(), self.options.clone(), self.answer_idx, Source::MedqaTrain)
            .expect("packaged item is valid")
    }
}

/// The two packaged items whose keyed reasonings seed the generation prompt.
pub fn reasoned_items() -> &'static [ReasonedItem] {
    #[derive(Deserialize)]
    struct Asset {
        items: Vec<ReasonedItem>,
    }
    static ITEMS: OnceLock<Vec<ReasonedItem>> = OnceLock::new();
    ITEMS.get_or_init(|| {
        serde_json::from_str::<Asset>(include_str!("../assets/reasoning_pairs.json"))
            .expect("packaged reasoning pairs parse")
            .items
    })
}

/// Two-shot prompt asking for reasoning that argues toward `option`.
pub fn reasoning_prompt(item: &McqItem, letter: Letter) -> Option<String> {
    let option = item.option(letter)?;
    let mut out = String::from(
        "For each question, write a short clinical reasoning that argues toward the given option. \
         End with \"Thus, the answer is <option>.\"\n\n",
    );
    for shot in reasoned_items() {
        let mcq = shot.to_mcq();
        out.push_str(&format!(
            "Q: {}\nOption: {}\nReasoning: {}\n\n",
            mcq.question_text(),
            mcq.answer_text(),
            shot.reasonings[&shot.answer_idx]
        ));
    }
    out.push_str(&format!("Q: {}\nOption: {option}\nReasoning:", item.question_text()));
    Some(out)
}

fn terminator_for(option: &str) -> String {
    format!("{TERMINATOR}{option}.")
}

/// Appends "Thus, the answer is <option>." unless the text already ends with it.
pub fn ensure_terminator(text: &str, option: &str) -> String {
    let body = text.trim();
    let wanted = terminator_for(option);
    if body.to_lowercase().ends_with(&wanted.to_lowercase()) {
        return body.to_string();
    }
    if body.to_lowercase().ends_with(&wanted[..wanted.len() - 1].to_lowercase()) {
        return format!("{body}.");
    }
    if body.is_empty() {
        wanted
    } else {
        format!("{body} {wanted}")
    }
}

/// Removes a trailing "Thus, the answer is <option>." (case-insensitive).
pub fn strip_terminator(text: &str, option: &str) -> String {
    let body = text.trim();
    let wanted = terminator_for(option).to_lowercase();
    let lower = body.to_lowercase();
    // Lowercasing can change byte lengths, so only cut when it did not.
    if lower.len() == body.len() && lower.ends_with(&wanted) {
        return body[..body.len() - wanted.len()].trim_end().to_string();
    }
    body.to_string()
}

/// One reasoning paragraph toward the option at `letter`, terminator enforced.
pub fn generate_option_reasoning(
    item: &McqItem,
    letter: Letter,
    backend: &dyn ModelBackend,
    params: &SamplingParams,
) -> Result<String, VerifierError> {
    let prompt = reasoning_prompt(item, letter)
        .ok_or_else(|| VerifierError::InvalidInput(format!("{}: no option {letter}", item.id())))?;
    let completion = backend
        .complete(&prompt, &params.clone().with_n(1))?
        .into_iter()
        .next()
        .ok_or_else(|| BackendError::Protocol("backend returned no completion".into()))?;
    Ok(ensure_terminator(&completion.text, item.option(letter).expect("checked")))
}

/// Default decoding for reasoning generation.
pub fn reasoning_params() -> SamplingParams {
    SamplingParams { stop: vec!["\n\nQ:".to_string()], ..SamplingParams::deterministic(512) }
}

/// Four pointwise examples for one item, in option order.
pub fn build_training_examples(
    item: &McqItem,
    backend: &dyn ModelBackend,
    params: &SamplingParams,
) -> Result<Vec<VerifierExample>, VerifierError> {
    item.options()
        .iter()
        .map(|(letter, option)| {
            let reasoning = generate_option_reasoning(item, *letter, backend, params)?;
            Ok(VerifierExample {
                question: item.stem().to_string(),
                reasoning,
                option: option.clone(),
                label: u8::from(*letter == item.answer_key()),
                source_item_id: item.id().to_string(),
            })
        })
        .collect()
}

/// Pairs the label-1 example against each label-0 example of one item.
pub fn export_pairs(examples: &[VerifierExample]) -> Result<Vec<VerifierPair>, VerifierError> {
    let ids: BTreeSet<&str> = examples.iter().map(|e| e.source_item_id.as_str()).collect();
    if ids.len() != 1 {
        return Err(VerifierError::Validation(format!("expected one item's examples, got items {ids:?}")));
    }
    let mut labels: Vec<u8> = examples.iter().map(|e| e.label).collect();
    labels.sort_unstable();
    if labels != [0, 0, 0, 1] {
        return Err(VerifierError::Validation(format!(
            "{}: labels must be one 1 and three 0, got {labels:?}",
            examples[0].source_item_id
        )));
    }
    let chosen = examples.iter().find(|e| e.label == 1).expect("checked");
    let side = |e: &VerifierExample| PairSide { reasoning: strip_terminator(&e.reasoning, &e.option), option: e.option.clone() };
    Ok(examples
        .iter()
        .filter(|e| e.label == 0)
        .map(|rejected| VerifierPair {
            question: chosen.question.clone(),
            chosen: side(chosen),
            rejected: side(rejected),
            source_item_id: chosen.source_item_id.clone(),
        })
        .collect())
}

/// `{prompt, chosen, rejected, source_item_id}` per line.
pub fn write_pairs_jsonl(pairs: &[VerifierPair]) -> String {
    let mut out = String::new();
    for p in pairs {
        let record = PairRecord {
            prompt: p.question.clone(),
            chosen: p.chosen.render(),
            rejected: p.rejected.render(),
            source_item_id: p.source_item_id.clone(),
        };
        out.push_str(&serde_json::to_string(&record).expect("serializable"));
        out.push('\n');
    }
    out
}

pub fn parse_pairs_jsonl(text: &str) -> Result<Vec<VerifierPair>, VerifierError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || is_meta_line(line) {
            continue;
        }
        let bad = |reason: String| VerifierError::Parse { line: i + 1, reason };
        let record: PairRecord = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let chosen = PairSide::parse(&record.chosen).ok_or_else(|| bad("chosen lacks a closing answer sentence".into()))?;
        let rejected =
            PairSide::parse(&record.rejected).ok_or_else(|| bad("rejected lacks a closing answer sentence".into()))?;
        out.push(VerifierPair { question: record.prompt, chosen, rejected, source_item_id: record.source_item_id });
    }
    Ok(out)
}

pub fn write_examples_jsonl(examples: &[VerifierExample]) -> String {
    let mut out = String::new();
    for e in examples {
        out.push_str(&serde_json::to_string(e).expect("serializable"));
        out.push('\n');
    }
    out
}

pub fn parse_examples_jsonl(text: &str) -> Result<Vec<VerifierExample>, VerifierError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || is_meta_line(line) {
            continue;
        }
        let example: VerifierExample =
            serde_json::from_str(line).map_err(|e| VerifierError::Parse { line: i + 1, reason: e.to_string() })?;
        if example.label > 1 {
            return Err(VerifierError::Parse { line: i + 1, reason: format!("label {} is not 0 or 1", example.label) });
        }
        out.push(example);
    }
    Ok(out)
}

/// Row handed to a human reviewer checking generated reasoning.
#[derive(Debug, Clone, Serialize)]
pub struct SpotCheckRow<'a> {
    pub index: usize,
    #[serde(flatten)]
    pub example: &'a VerifierExample,
    /// Filled in by the reviewer.
    pub reasoning_correct: Option<bool>,
}

/// Seeded random sample of up to `per_label` examples for each label,
/// label 0 first, original order within a label.
pub fn spot_check_sample(examples: &[VerifierExample], per_label: usize, seed: u64) -> Vec<SpotCheckRow<'_>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for label in [0u8, 1] {
        let mut idx: Vec<usize> = (0..examples.len()).filter(|&i| examples[i].label == label).collect();
        idx.shuffle(&mut rng);
        idx.truncate(per_label);
        idx.sort_unstable();
        rows.extend(idx.into_iter().map(|index| SpotCheckRow { index, example: &examples[index], reasoning_correct: None }));
    }
    rows
}
