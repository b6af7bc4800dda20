//! Forward-backward answer selection.
//!
//! Forward: sample open-ended ClinicR answers, merge near-duplicates, keep the
//! top `k` by likelihood and letter them with a seeded shuffle. Backward: pick
//! one letter with an eliminative MCQ prompt or with a reward model.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{prompt_hash, score_completion, BackendError, ModelBackend, SamplingParams, MAX_SAMPLES};
use crate::corpus::{format_mcq_question, Letter, OpenItem};
use crate::prompting::{extract_answer, render_prompt, PromptError, PromptInput, PromptStrategy};
use crate::seed::derive_seed;
use crate::verifier::{RewardClient, VerifierError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{item}: no extractable candidates after {attempts} completions")]
    NoCandidates { item: String, attempts: u32 },
    #[error("invalid pipeline configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("verifier unavailable: {0}")]
    VerifierUnavailable(#[source] VerifierError),
}

/// Lowercases, drops punctuation (hyphens and slashes become spaces),
/// collapses whitespace and strips leading articles.
pub fn normalize_answer(text: &str) -> String {
    let mut cleaned = String::with_capacity(text.len());
    for c in text.chars() {
        if c.is_alphanumeric() {
            cleaned.extend(c.to_lowercase());
        } else if c.is_whitespace() || matches!(c, '-' | '/' | '\u{2010}'..='\u{2015}') {
            cleaned.push(' ');
        }
    }
    let mut tokens: Vec<&str> = cleaned.split_whitespace().collect();
    // A lone article is kept so the answer never collapses to empty.
    while tokens.len() > 1 && matches!(tokens[0], "a" | "an" | "the") {
        tokens.remove(0);
    }
    tokens.join(" ")
}

/// Token-set Jaccard of two normalized strings. Two empty strings score 1.
pub fn token_jaccard(a: &str, b: &str) -> f64 {
    let left: BTreeSet<&str> = a.split_whitespace().collect();
    let right: BTreeSet<&str> = b.split_whitespace().collect();
    if left.is_empty() && right.is_empty() {
        return 1.0;
    }
    let inter = left.intersection(&right).count();
    let union = left.len() + right.len() - inter;
    inter as f64 / union as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub answer_text: String,
    pub answer_norm: String,
    pub reasoning_text: String,
    pub score: f64,
    pub sample_index: u32,
}

impl Candidate {
    pub fn new(answer_text: impl Into<String>, reasoning_text: impl Into<String>, score: f64, sample_index: u32) -> Self {
        let answer_text = answer_text.into();
        Candidate {
            answer_norm: normalize_answer(&answer_text),
            answer_text,
            reasoning_text: reasoning_text.into(),
            score,
            sample_index,
        }
    }
}

/// Higher score first, then lower sample index.
fn rank_order(a: &Candidate, b: &Candidate) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then(a.sample_index.cmp(&b.sample_index))
}

/// Lettered candidates shown to the backward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionSlate {
    pub entries: BTreeMap<Letter, Candidate>,
    pub permutation_seed: u64,
}

impl OptionSlate {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, letter: Letter) -> Option<&Candidate> {
        self.entries.get(&letter)
    }

    /// Letter of the highest-likelihood entry.
    pub fn max_score_letter(&self) -> Option<Letter> {
        self.entries
            .iter()
            .min_by(|(_, a), (_, b)| rank_order(a, b))
            .map(|(l, _)| *l)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    FbMcqEliminative,
    FbVerifier,
    SingleClinicr,
    SingleEliminative,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::FbMcqEliminative,
        Method::FbVerifier,
        Method::SingleClinicr,
        Method::SingleEliminative,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::FbMcqEliminative => "fb_mcq_eliminative",
            Method::FbVerifier => "fb_verifier",
            Method::SingleClinicr => "single_clinicr",
            Method::SingleEliminative => "single_eliminative",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| format!("unknown method {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Forward,
    Backward,
    BackwardRetry,
    Verifier,
    Single,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub stage: Stage,
    pub prompt_sha256: String,
    /// Full prompt text. Forward prompts are omitted since they are
    /// reproducible from the item and strategy alone.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default)]
    pub completions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForwardStats {
    /// Completions consumed.
    pub attempts: u32,
    /// Completions without a parseable answer.
    pub skipped: u32,
    /// Completions without token logprobs.
    pub unscored: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub item_id: String,
    pub method: Method,
    pub slate: OptionSlate,
    pub chosen_letter: Letter,
    pub chosen_candidate: Candidate,
    /// Set when the backward pass fell back to the max-score entry.
    #[serde(default)]
    pub fallback: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forward: Option<ForwardStats>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<TraceEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub target_unique: u32,
    pub max_attempts: u32,
    pub k: usize,
    pub tau: f64,
    pub sample_seed: u64,
    pub permutation_seed: u64,
    pub backward_seed: u64,
    pub forward: SamplingParams,
    pub backward: SamplingParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            target_unique: 10,
            max_attempts: 30,
            k: 4,
            tau: 0.6,
            sample_seed: 0,
            permutation_seed: 0,
            backward_seed: 0,
            forward: SamplingParams::forward(),
            backward: SamplingParams {
                stop: vec!["\n\nQ:".to_string()],
                ..SamplingParams::deterministic(512)
            },
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.target_unique == 0 {
            return Err(PipelineError::Config("target_unique must be at least 1".into()));
        }
        if self.max_attempts < self.target_unique {
            return Err(PipelineError::Config("max_attempts must be at least target_unique".into()));
        }
        if !(1..=Letter::ALL.len()).contains(&self.k) {
            return Err(PipelineError::Config(format!("k must be in 1..=4, got {}", self.k)));
        }
        check_tau(self.tau)?;
        self.forward.validate()?;
        self.backward.validate()?;
        Ok(())
    }

    /// Seed of the first forward request for `item_id`.
    pub fn forward_seed(&self, item_id: &str) -> u64 {
        derive_seed(self.sample_seed, item_id)
    }

    pub fn slate_seed(&self, item_id: &str) -> u64 {
        derive_seed(self.permutation_seed, item_id)
    }

    pub fn backward_seed_for(&self, item_id: &str) -> u64 {
        derive_seed(self.backward_seed, item_id)
    }
}

fn check_tau(tau: f64) -> Result<(), PipelineError> {
    if tau > 0.0 && tau <= 1.0 {
        Ok(())
    } else {
        Err(PipelineError::Config(format!("tau must be in (0, 1], got {tau}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardSamples {
    /// One candidate per distinct normalized answer, in first-seen order.
    pub candidates: Vec<Candidate>,
    pub stats: ForwardStats,
    pub trace: Vec<TraceEntry>,
}

/// Draws ClinicR completions until `target_unique` distinct normalized
/// answers are seen or `max_attempts` completions are spent.
///
/// When the same normalized answer appears twice the better-scored sample is
/// kept.
pub fn sample_candidates(
    item: &OpenItem,
    backend: &dyn ModelBackend,
    config: &PipelineConfig,
) -> Result<ForwardSamples, PipelineError> {
    config.validate()?;
    let prompt = render_prompt(PromptStrategy::Clinicr, item)?;
    let hash = prompt_hash(&prompt);
    let base_seed = config.forward_seed(&item.id);

    let mut candidates: Vec<Candidate> = Vec::new();
    let mut by_norm: HashMap<String, usize> = HashMap::new();
    let mut stats = ForwardStats::default();
    let mut trace = Vec::new();

    while (candidates.len() as u32) < config.target_unique && stats.attempts < config.max_attempts {
        let n = (config.target_unique - candidates.len() as u32)
            .min(config.max_attempts - stats.attempts)
            .min(MAX_SAMPLES);
        let params = config
            .forward
            .clone()
            .with_n(n)
            .with_seed(base_seed.wrapping_add(stats.attempts as u64));
        let completions = backend.complete(&prompt, &params)?;
        trace.push(TraceEntry {
            stage: Stage::Forward,
            prompt_sha256: hash.clone(),
            prompt: None,
            completions: completions.iter().map(|c| c.text.clone()).collect(),
            note: None,
        });
        for completion in completions {
            let sample_index = stats.attempts;
            stats.attempts += 1;
            let Ok(extracted) = extract_answer(PromptStrategy::Clinicr, &completion.text) else {
                stats.skipped += 1;
                continue;
            };
            let Ok(score) = score_completion(&completion) else {
                stats.unscored += 1;
                continue;
            };
            let answer = extracted.text.clone().unwrap_or_default();
            let candidate = Candidate::new(answer, extracted.reasoning(&completion.text), score, sample_index);
            if candidate.answer_norm.is_empty() {
                stats.skipped += 1;
                continue;
            }
            match by_norm.get(&candidate.answer_norm) {
                Some(&i) => {
                    if candidate.score > candidates[i].score {
                        candidates[i] = candidate;
                    }
                }
                None => {
                    by_norm.insert(candidate.answer_norm.clone(), candidates.len());
                    candidates.push(candidate);
                }
            }
        }
    }
    if candidates.is_empty() {
        return Err(PipelineError::NoCandidates { item: item.id.clone(), attempts: stats.attempts });
    }
    Ok(ForwardSamples { candidates, stats, trace })
}

/// Greedy lexical dedup: visit by descending score and keep a candidate only
/// if its Jaccard with every kept one is below `tau`.
pub fn dedup(candidates: &[Candidate], tau: f64) -> Result<Vec<Candidate>, PipelineError> {
    check_tau(tau)?;
    let mut order: Vec<&Candidate> = candidates.iter().collect();
    order.sort_by(|a, b| rank_order(a, b));
    let mut kept: Vec<Candidate> = Vec::new();
    for c in order {
        if kept.iter().all(|k| token_jaccard(&k.answer_norm, &c.answer_norm) < tau) {
            kept.push(c.clone());
        }
    }
    Ok(kept)
}

/// Keeps the `k` best candidates and letters them by a seeded shuffle.
pub fn select_top_k(candidates: &[Candidate], k: usize, permutation_seed: u64) -> Result<OptionSlate, PipelineError> {
    if !(1..=Letter::ALL.len()).contains(&k) {
        return Err(PipelineError::Config(format!("k must be in 1..=4, got {k}")));
    }
    if candidates.is_empty() {
        return Err(PipelineError::NoCandidates { item: String::new(), attempts: 0 });
    }
    let mut ranked: Vec<Candidate> = candidates.to_vec();
    ranked.sort_by(rank_order);
    ranked.truncate(k);
    let mut rng = ChaCha8Rng::seed_from_u64(permutation_seed);
    ranked.shuffle(&mut rng);
    let entries = ranked
        .into_iter()
        .enumerate()
        .map(|(i, c)| (Letter::from_index(i).expect("k <= 4"), c))
        .collect();
    Ok(OptionSlate { entries, permutation_seed })
}

/// The open stem with the slate rendered as a MedQA-style options line.
pub fn slate_to_mcq(item: &OpenItem, slate: &OptionSlate) -> String {
    let options: Vec<(Letter, &str)> = slate
        .entries
        .iter()
        .map(|(l, c)| (*l, c.answer_text.as_str()))
        .collect();
    format_mcq_question(&item.stem, &options)
}

/// Forward pass up to the lettered slate.
pub fn build_slate(
    item: &OpenItem,
    backend: &dyn ModelBackend,
    config: &PipelineConfig,
) -> Result<(OptionSlate, ForwardSamples), PipelineError> {
    let samples = sample_candidates(item, backend, config)?;
    let unique = dedup(&samples.candidates, config.tau)?;
    let slate = select_top_k(&unique, config.k, config.slate_seed(&item.id))?;
    Ok((slate, samples))
}

/// Backward pass by eliminative MCQ prompting at the configured
/// (deterministic) decoding settings.
///
/// A missing or out-of-slate letter is retried once with the next seed; after
/// that the max-score entry is taken and `fallback` is set.
pub fn backward_select_mcq(
    item: &OpenItem,
    slate: &OptionSlate,
    backend: &dyn ModelBackend,
    config: &PipelineConfig,
) -> Result<PipelineResult, PipelineError> {
    let question = slate_to_mcq(item, slate);
    let prompt = render_prompt(PromptStrategy::McqEliminative, PromptInput::McqText(&question))?;
    let hash = prompt_hash(&prompt);
    let seed = config.backward_seed_for(&item.id);
    let mut trace = Vec::new();

    for (attempt, stage) in [Stage::Backward, Stage::BackwardRetry].into_iter().enumerate() {
        let params = config.backward.clone().with_n(1).with_seed(seed.wrapping_add(attempt as u64));
        let completion = backend
            .complete(&prompt, &params)?
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Protocol("backend returned no completion".into()))?;
        let letter = extract_answer(PromptStrategy::McqEliminative, &completion.text)
            .ok()
            .and_then(|e| e.letter)
            .filter(|l| slate.entries.contains_key(l));
        trace.push(TraceEntry {
            stage,
            prompt_sha256: hash.clone(),
            prompt: Some(prompt.clone()),
            completions: vec![completion.text],
            note: letter.is_none().then(|| "no valid slate letter".to_string()),
        });
        if let Some(letter) = letter {
            return Ok(result(item, Method::FbMcqEliminative, slate, letter, false, trace));
        }
    }
    let letter = slate.max_score_letter().expect("slate non-empty");
    if let Some(last) = trace.last_mut() {
        last.note = Some(format!("fallback to max-score entry ({letter})"));
    }
    Ok(result(item, Method::FbMcqEliminative, slate, letter, true, trace))
}

/// Argmax over rewards; ties go to the higher forward score, then the
/// earlier letter.
pub fn argmax_reward(scored: &[(Letter, f64, f64)]) -> Option<Letter> {
    scored
        .iter()
        .copied()
        .min_by(|(la, ra, sa), (lb, rb, sb)| rb.total_cmp(ra).then(sb.total_cmp(sa)).then(la.cmp(lb)))
        .map(|(l, _, _)| l)
}

/// Backward pass by reward model over each entry's forward reasoning.
pub fn backward_select_verifier(
    item: &OpenItem,
    slate: &OptionSlate,
    client: &dyn RewardClient,
) -> Result<PipelineResult, PipelineError> {
    let mut scored = Vec::with_capacity(slate.len());
    let mut rewards = Vec::with_capacity(slate.len());
    for (letter, candidate) in &slate.entries {
        let reward = client
            .score(&item.stem, &candidate.reasoning_text, &candidate.answer_text)
            .map_err(PipelineError::VerifierUnavailable)?;
        scored.push((*letter, reward.value, candidate.score));
        rewards.push(format!("{letter}={}", reward.value));
    }
    let letter = argmax_reward(&scored).expect("slate non-empty");
    let trace = vec![TraceEntry {
        stage: Stage::Verifier,
        prompt_sha256: prompt_hash(&item.stem),
        prompt: None,
        completions: Vec::new(),
        note: Some(rewards.join(" ")),
    }];
    Ok(result(item, Method::FbVerifier, slate, letter, false, trace))
}

fn result(
    item: &OpenItem,
    method: Method,
    slate: &OptionSlate,
    letter: Letter,
    fallback: bool,
    trace: Vec<TraceEntry>,
) -> PipelineResult {
    PipelineResult {
        item_id: item.id.clone(),
        method,
        slate: slate.clone(),
        chosen_letter: letter,
        chosen_candidate: slate.entries[&letter].clone(),
        fallback,
        forward: None,
        trace,
    }
}

pub enum Backward<'a> {
    Mcq,
    Verifier(&'a dyn RewardClient),
}

/// Full forward-backward run for one item.
pub fn run_forward_backward(
    item: &OpenItem,
    backend: &dyn ModelBackend,
    backward: Backward<'_>,
    config: &PipelineConfig,
) -> Result<PipelineResult, PipelineError> {
    let (slate, samples) = build_slate(item, backend, config)?;
    let mut out = match backward {
        Backward::Mcq => backward_select_mcq(item, &slate, backend, config)?,
        Backward::Verifier(client) => backward_select_verifier(item, &slate, client)?,
    };
    out.forward = Some(samples.stats);
    let mut trace = samples.trace;
    trace.append(&mut out.trace);
    out.trace = trace;
    Ok(out)
}

/// Single-prompt baseline: one deterministic open-ended answer with the given
/// strategy, wrapped as a one-entry slate.
pub fn run_single(
    item: &OpenItem,
    strategy: PromptStrategy,
    backend: &dyn ModelBackend,
    config: &PipelineConfig,
) -> Result<PipelineResult, PipelineError> {
    let method = match strategy {
        PromptStrategy::Clinicr => Method::SingleClinicr,
        PromptStrategy::Eliminative => Method::SingleEliminative,
        other => return Err(PipelineError::Config(format!("{other} is not an open-ended strategy"))),
    };
    let prompt = render_prompt(strategy, item)?;
    let params = config.backward.clone().with_n(1).with_seed(config.backward_seed_for(&item.id));
    let completion = backend
        .complete(&prompt, &params)?
        .into_iter()
        .next()
        .ok_or_else(|| BackendError::Protocol("backend returned no completion".into()))?;
    let extracted = extract_answer(strategy, &completion.text)
        .map_err(|_| PipelineError::NoCandidates { item: item.id.clone(), attempts: 1 })?;
    // Single arms never rank, so an unscored completion is acceptable here.
    let score = score_completion(&completion).unwrap_or(0.0);
    let candidate = Candidate::new(
        extracted.text.clone().unwrap_or_default(),
        extracted.reasoning(&completion.text),
        score,
        0,
    );
    let slate = OptionSlate { entries: BTreeMap::from([(Letter::A, candidate)]), permutation_seed: 0 };
    let trace = vec![TraceEntry {
        stage: Stage::Single,
        prompt_sha256: prompt_hash(&prompt),
        prompt: None,
        completions: vec![completion.text],
        note: None,
    }];
    Ok(result(item, method, &slate, Letter::A, false, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Completion, MockBackend};
    use crate::verifier::{OverlapRewardClient, RewardScore};
    use proptest::prelude::*;

    fn cand(text: &str, score: f64, idx: u32) -> Candidate {
        Candidate::new(text, format!("reasoning for {text}"), score, idx)
    }

    fn item() -> OpenItem {
        OpenItem::new("t1", "Which drug should be added?", "Eplerenone", None, None).unwrap()
    }

    fn clinicr_completion(answer: &str, lp: f64) -> Completion {
        Completion::new(format!(" Let's think step-by-step. Some reasoning.\nAnswer: {answer}.")).with_logprobs(vec![lp; 3])
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_answer("Eplerenone."), "eplerenone");
        assert_eq!(
            normalize_answer("The high-dose dexamethasone suppression test"),
            "high dose dexamethasone suppression test"
        );
        assert_eq!(normalize_answer(""), "");
        assert_eq!(normalize_answer("  An   ACE inhibitor! "), "ace inhibitor");
        assert_eq!(normalize_answer("the"), "the");
    }

    #[test]
    fn jaccard_basics() {
        assert_eq!(token_jaccard("a b", "a b"), 1.0);
        assert_eq!(token_jaccard("nadolol therapy", "gonioscopy"), 0.0);
        assert_eq!(token_jaccard("a b c", "a b d"), 0.5);
        assert_eq!(token_jaccard("", ""), 1.0);
        assert_eq!(token_jaccard("", "x"), 0.0);
    }

    #[test]
    fn dedup_examples() {
        let out = dedup(&[cand("eplerenone", -0.9, 0), cand("Eplerenone", -0.4, 1)], 0.6).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].score, -0.4);
        let out = dedup(&[cand("nadolol therapy", -1.0, 0), cand("gonioscopy", -2.0, 1)], 0.6).unwrap();
        assert_eq!(out.len(), 2);
        assert!(dedup(&[], 0.0).is_err());
    }

    #[test]
    fn top_k_examples() {
        let two = [cand("x", -1.0, 0), cand("y", -2.0, 1)];
        let slate = select_top_k(&two, 4, 9).unwrap();
        assert_eq!(slate.entries.keys().copied().collect::<Vec<_>>(), vec![Letter::A, Letter::B]);
        let tied = [cand("x", -1.0, 3), cand("y", -1.0, 1), cand("z", -1.0, 2)];
        let slate = select_top_k(&tied, 1, 0).unwrap();
        assert_eq!(slate.entries[&Letter::A].sample_index, 1);
        assert!(select_top_k(&[], 4, 0).is_err());
        assert!(select_top_k(&two, 5, 0).is_err());
    }

    #[test]
    fn slate_text_matches_medqa_layout() {
        let slate = OptionSlate {
            entries: BTreeMap::from([(Letter::A, cand("torsemide", -1.0, 0)), (Letter::B, cand("eplerenone", -1.0, 1))]),
            permutation_seed: 0,
        };
        assert_eq!(slate_to_mcq(&item(), &slate), "Which drug should be added?\n(A) torsemide (B) eplerenone");
    }

    #[test]
    fn sampling_stops_at_target_unique() {
        let answers: Vec<String> = (0..12).map(|i| format!("answer{i}")).collect();
        let mut mock = MockBackend::new();
        let prompt = render_prompt(PromptStrategy::Clinicr, &item()).unwrap();
        mock.script(&prompt, answers.iter().map(|a| clinicr_completion(a, -1.0)));
        let out = sample_candidates(&item(), &mock, &PipelineConfig::default()).unwrap();
        assert_eq!(out.candidates.len(), 10);
        assert_eq!(out.stats.attempts, 10);
    }

    #[test]
    fn sampling_a_single_answer_spends_all_attempts() {
        let mut mock = MockBackend::new();
        let prompt = render_prompt(PromptStrategy::Clinicr, &item()).unwrap();
        mock.script(&prompt, [clinicr_completion("eplerenone", -1.0)]);
        let out = sample_candidates(&item(), &mock, &PipelineConfig::default()).unwrap();
        assert_eq!(out.candidates.len(), 1);
        assert_eq!(out.stats.attempts, 30);
    }

    #[test]
    fn unparseable_completion_is_skipped_and_counted() {
        let prompt = render_prompt(PromptStrategy::Clinicr, &item()).unwrap();
        let config = PipelineConfig::default();
        // Start the mock window at the unparseable entry.
        let offset = config.forward_seed(&item().id) % 11;
        let mut rotated = MockBackend::new();
        let mut entries: Vec<Completion> = vec![Completion::new("I am not sure.").with_logprobs(vec![-1.0])];
        entries.extend((0..10).map(|i| clinicr_completion(&format!("drug{i}"), -1.0)));
        entries.rotate_right(offset as usize);
        rotated.script(&prompt, entries);
        let out = sample_candidates(&item(), &rotated, &config).unwrap();
        assert_eq!(out.stats.skipped, 1);
        assert_eq!(out.candidates.len(), 10);
        assert!(out.candidates.iter().all(|c| c.answer_text.starts_with("drug")));
    }

    #[test]
    fn unscored_completions_are_counted_separately() {
        let mut mock = MockBackend::new();
        let prompt = render_prompt(PromptStrategy::Clinicr, &item()).unwrap();
        mock.script(&prompt, [Completion::new("x\nAnswer: eplerenone.")]);
        let err = sample_candidates(&item(), &mock, &PipelineConfig::default()).unwrap_err();
        assert!(matches!(err, PipelineError::NoCandidates { attempts: 30, .. }));
    }

    fn two_entry_slate() -> OptionSlate {
        OptionSlate {
            entries: BTreeMap::from([
                (Letter::A, cand("torsemide", -1.2, 0)),
                (Letter::B, cand("eplerenone", -0.7, 1)),
                (Letter::C, cand("nifedipine", -2.0, 2)),
                (Letter::D, cand("hydralazine", -3.0, 3)),
            ]),
            permutation_seed: 0,
        }
    }

    fn backward_prompt(slate: &OptionSlate) -> String {
        render_prompt(PromptStrategy::McqEliminative, PromptInput::McqText(&slate_to_mcq(&item(), slate))).unwrap()
    }

    #[test]
    fn backward_mcq_takes_scripted_letter() {
        let slate = two_entry_slate();
        let mut mock = MockBackend::new();
        mock.script(&backward_prompt(&slate), ["Option A is wrong. The answer is (C)."]);
        let out = backward_select_mcq(&item(), &slate, &mock, &PipelineConfig::default()).unwrap();
        assert_eq!(out.chosen_letter, Letter::C);
        assert!(!out.fallback);
        assert_eq!(out.trace.len(), 1);
    }

    #[test]
    fn backward_mcq_falls_back_after_retry() {
        let slate = two_entry_slate();
        let mut mock = MockBackend::new();
        mock.script(&backward_prompt(&slate), ["The answer is (E)."]);
        let out = backward_select_mcq(&item(), &slate, &mock, &PipelineConfig::default()).unwrap();
        assert!(out.fallback);
        assert_eq!(out.chosen_letter, Letter::B);
        assert_eq!(out.trace.len(), 2);
        assert_eq!(out.trace[1].stage, Stage::BackwardRetry);
    }

    #[test]
    fn backward_mcq_retry_can_recover() {
        let slate = two_entry_slate();
        let config = PipelineConfig::default();
        let seed = config.backward_seed_for("t1");
        let mut script = vec!["The answer is (E).".to_string(), "The answer is (D).".to_string()];
        if seed % 2 == 1 {
            script.swap(0, 1);
        }
        let mut mock = MockBackend::new();
        mock.script(&backward_prompt(&slate), script);
        let out = backward_select_mcq(&item(), &slate, &mock, &config).unwrap();
        assert_eq!(out.chosen_letter, Letter::D);
        assert!(!out.fallback);
    }

    struct FixedRewards(Vec<f64>);

    impl RewardClient for FixedRewards {
        fn score(&self, _q: &str, _r: &str, option: &str) -> Result<RewardScore, VerifierError> {
            let idx = ["torsemide", "eplerenone", "nifedipine", "hydralazine"]
                .iter()
                .position(|o| *o == option)
                .unwrap();
            Ok(RewardScore { value: self.0[idx] })
        }
    }

    #[test]
    fn verifier_argmax_and_tie_break() {
        let slate = two_entry_slate();
        let out = backward_select_verifier(&item(), &slate, &FixedRewards(vec![0.1, 0.9, 0.0, 0.0])).unwrap();
        assert_eq!(out.chosen_letter, Letter::B);
        // equal rewards: B has the better forward score
        let out = backward_select_verifier(&item(), &slate, &FixedRewards(vec![0.5; 4])).unwrap();
        assert_eq!(out.chosen_letter, Letter::B);
        let out = backward_select_verifier(&item(), &slate, &OverlapRewardClient::new("Eplerenone")).unwrap();
        assert_eq!(out.chosen_candidate.answer_text, "eplerenone");
    }

    struct Down;

    impl RewardClient for Down {
        fn score(&self, _q: &str, _r: &str, _o: &str) -> Result<RewardScore, VerifierError> {
            Err(VerifierError::Unavailable("connection refused".into()))
        }
    }

    #[test]
    fn verifier_failure_is_not_masked() {
        let err = backward_select_verifier(&item(), &two_entry_slate(), &Down).unwrap_err();
        assert!(matches!(err, PipelineError::VerifierUnavailable(_)));
    }

    #[test]
    fn single_arm_wraps_one_answer() {
        let mut mock = MockBackend::new();
        let prompt = render_prompt(PromptStrategy::Eliminative, &item()).unwrap();
        mock.script(&prompt, ["Let's think step by step. Torsemide is a loop diuretic.\nAnswer: Eplerenone."]);
        let out = run_single(&item(), PromptStrategy::Eliminative, &mock, &PipelineConfig::default()).unwrap();
        assert_eq!(out.method, Method::SingleEliminative);
        assert_eq!(out.chosen_candidate.answer_text, "Eplerenone");
        assert!(run_single(&item(), PromptStrategy::McqClinicr, &mock, &PipelineConfig::default()).is_err());
    }

    fn greedy_oracle(cands: &[Candidate], tau: f64) -> Vec<u32> {
        let mut idx: Vec<usize> = (0..cands.len()).collect();
        // insertion sort by (score desc, sample_index asc)
        for i in 1..idx.len() {
            let mut j = i;
            while j > 0 {
                let (a, b) = (&cands[idx[j - 1]], &cands[idx[j]]);
                let swap = b.score > a.score || (b.score == a.score && b.sample_index < a.sample_index);
                if !swap {
                    break;
                }
                idx.swap(j - 1, j);
                j -= 1;
            }
        }
        let toks = |s: &str| {
            let mut v: Vec<String> = Vec::new();
            for t in s.split(' ').filter(|t| !t.is_empty()) {
                if !v.iter().any(|x| x == t) {
                    v.push(t.to_string());
                }
            }
            v
        };
        let mut kept: Vec<usize> = Vec::new();
        for i in idx {
            let mine = toks(&cands[i].answer_norm);
            let ok = kept.iter().all(|&k| {
                let other = toks(&cands[k].answer_norm);
                let inter = mine.iter().filter(|t| other.contains(t)).count();
                let union = mine.len() + other.len() - inter;
                let j = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
                j < tau
            });
            if ok {
                kept.push(i);
            }
        }
        kept.into_iter().map(|i| cands[i].sample_index).collect()
    }

    fn candidates_strategy() -> impl Strategy<Value = Vec<Candidate>> {
        let word = (0usize..20).prop_map(|i| format!("w{i}"));
        let answer = prop::collection::vec(word, 1..4).prop_map(|w| w.join(" "));
        prop::collection::vec((answer, -50i32..0), 0..12).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (a, s))| cand(&a, s as f64 / 10.0, i as u32))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "\\PC{0,40}") {
            let once = normalize_answer(&s);
            prop_assert_eq!(normalize_answer(&once), once);
        }

        #[test]
        fn dedup_matches_oracle_and_separates(cands in candidates_strategy(), tau in 0.05f64..=1.0) {
            let out = dedup(&cands, tau).unwrap();
            let got: Vec<u32> = out.iter().map(|c| c.sample_index).collect();
            prop_assert_eq!(got, greedy_oracle(&cands, tau));
            for (i, a) in out.iter().enumerate() {
                for b in &out[i + 1..] {
                    prop_assert!(token_jaccard(&a.answer_norm, &b.answer_norm) < tau);
                }
            }
            for c in &cands {
                if !out.iter().any(|k| k.sample_index == c.sample_index) {
                    prop_assert!(out.iter().any(|k| token_jaccard(&k.answer_norm, &c.answer_norm) >= tau
                        && rank_order(k, c) != std::cmp::Ordering::Greater));
                }
            }
        }

        #[test]
        fn slate_keeps_max_and_is_permutation_invariant(cands in candidates_strategy(), k in 1usize..=4, s1: u64, s2: u64) {
            prop_assume!(!cands.is_empty());
            let a = select_top_k(&cands, k, s1).unwrap();
            let b = select_top_k(&cands, k, s2).unwrap();
            let set = |s: &OptionSlate| s.entries.values().map(|c| c.sample_index).collect::<BTreeSet<_>>();
            prop_assert_eq!(set(&a), set(&b));
            let best = cands.iter().min_by(|x, y| rank_order(x, y)).unwrap();
            prop_assert!(a.entries.values().any(|c| c.sample_index == best.sample_index));
            prop_assert_eq!(a.len(), k.min(cands.len()));
        }

        #[test]
        fn argmax_matches_oracle(rewards in prop::collection::vec(-3i32..3, 1..=4), scores in prop::collection::vec(-3i32..0, 4)) {
            let scored: Vec<(Letter, f64, f64)> = rewards.iter().enumerate()
                .map(|(i, r)| (Letter::from_index(i).unwrap(), *r as f64, scores[i] as f64)).collect();
            let mut best = 0;
            for i in 1..scored.len() {
                let (_, r, s) = scored[i];
                let (_, br, bs) = scored[best];
                if r > br || (r == br && s > bs) {
                    best = i;
                }
            }
            prop_assert_eq!(argmax_reward(&scored), Some(scored[best].0));
        }
    }
}
