//! Synthetic corpora and scripted mock backends for tests, the acceptance
//! suite and offline demos.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backend::{Completion, MockBackend};
use crate::corpus::{Letter, McqItem, OpenItem, Source};
use crate::pipeline::{build_slate, slate_to_mcq, PipelineConfig, PipelineError};
use crate::prompting::{render_prompt, PromptInput, PromptStrategy};
use crate::verifier::reasoning_prompt;

const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch", "tr"];
const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "y"];
const SUFFIXES: [&str; 8] = ["zole", "pril", "olol", "mab", "tide", "sone", "mycin", "vir"];
const SYMPTOMS: [&str; 8] = [
    "fever and productive cough",
    "progressive dyspnea on exertion",
    "episodic palpitations",
    "painless jaundice",
    "morning joint stiffness",
    "polyuria and polydipsia",
    "a pruritic rash on both forearms",
    "intermittent abdominal pain",
];
const ENDINGS: [&str; 3] = [
    "Which of the following is the most appropriate treatment?",
    "Which of the following drugs is most likely to improve this patient's condition?",
    "What is the best initial pharmacotherapy?",
];

/// A pronounceable single-token name, distinct for distinct `i`.
fn synthetic_name(rng: &mut ChaCha8Rng, i: usize) -> String {
    let mut name = String::new();
    for _ in 0..2 {
        name.push_str(ONSETS[rng.random_range(0..ONSETS.len())]);
        name.push_str(VOWELS[rng.random_range(0..VOWELS.len())]);
    }
    name.push_str(SUFFIXES[i % SUFFIXES.len()]);
    // the index suffix keeps names unique without a retry loop
    format!("{name}{}", to_letters(i))
}

fn to_letters(mut i: usize) -> String {
    let mut out = Vec::new();
    loop {
        out.push(b'a' + (i % 26) as u8);
        i /= 26;
        if i == 0 {
            break;
        }
    }
    String::from_utf8(out).expect("ascii")
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// `n` valid synthetic MCQ items with seeded stems, options and keys.
pub fn synthetic_mcq_items(n: usize, seed: u64) -> Vec<McqItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let age = rng.random_range(18..90);
            let symptom = SYMPTOMS[rng.random_range(0..SYMPTOMS.len())];
            let ending = ENDINGS[rng.random_range(0..ENDINGS.len())];
            let stem = format!("A {age}-year-old patient presents with {symptom} for {} days. {ending}", rng.random_range(2..30));
            let options: BTreeMap<Letter, String> = Letter::ALL
                .iter()
                .map(|l| (*l, capitalize(&synthetic_name(&mut rng, i * 4 + l.index()))))
                .collect();
            let key = Letter::ALL[rng.random_range(0..4)];
            McqItem::new(format!("syn-{i:04}"), stem, options, key, Source::Synthetic).expect("generator emits valid items")
        })
        .collect()
}

/// `n` synthetic open items whose gold answers are single invented names.
pub fn synthetic_open_items(n: usize, seed: u64) -> Vec<OpenItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6f70656e);
    (0..n)
        .map(|i| {
            let age = rng.random_range(18..90);
            let symptom = SYMPTOMS[rng.random_range(0..SYMPTOMS.len())];
            let stem = format!(
                "A {age}-year-old patient presents with {symptom} for {} days. What is the most appropriate treatment?",
                rng.random_range(2..30)
            );
            let gold = capitalize(&synthetic_name(&mut rng, i * 16));
            OpenItem::new(format!("open-{i:04}"), stem, gold, None, None).expect("generator emits valid items")
        })
        .collect()
}

fn forward_completion(answer: &str, score: f64) -> Completion {
    Completion::new(format!(
        " Let's think step-by-step. The history points toward a treatable cause, and {answer} addresses it.\nAnswer: {answer}."
    ))
    .with_logprobs(vec![score; 6])
}

/// Scripts a mock for forward-backward over `items`.
///
/// Each item gets `distinct` forward answers (gold among them, with the
/// second-highest likelihood) and a backward completion that eliminates
/// every option but the gold one.
pub fn scripted_forward_backward(
    items: &[OpenItem],
    config: &PipelineConfig,
    distinct: usize,
    seed: u64,
) -> Result<MockBackend, PipelineError> {
    assert!(distinct >= 2, "need a distractor and the gold answer");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mock = MockBackend::new();
    for item in items {
        let mut answers: Vec<String> = (0..distinct - 1)
            .map(|j| capitalize(&synthetic_name(&mut rng, 10_000 + j)))
            .collect();
        answers.insert(1, item.gold_answer.clone());
        let mut scores: Vec<f64> = (0..distinct).map(|j| -0.2 - 0.1 * j as f64).collect();
        // Shuffle likelihoods below the top two so ranking is exercised.
        scores[2..].shuffle(&mut rng);

        // Mock entry (s + j) mod len answers request sample j, so place
        // answer j at that slot; the first window then holds answers 0..n.
        let start = (config.forward_seed(&item.id) % distinct as u64) as usize;
        let mut list: Vec<Option<Completion>> = vec![None; distinct];
        for j in 0..distinct {
            list[(start + j) % distinct] = Some(forward_completion(&answers[j], scores[j]));
        }
        let prompt = render_prompt(PromptStrategy::Clinicr, item)?;
        let mut forward = MockBackend::new();
        forward.script(&prompt, list.into_iter().map(|c| c.expect("filled")));

        let (slate, _) = build_slate(item, &forward, config)?;
        let (gold_letter, _) = slate
            .entries
            .iter()
            .find(|(_, c)| c.answer_text == item.gold_answer)
            .expect("gold ranks in the top k");
        let mut elimination = String::from(" Let's think step by step.");
        for (letter, c) in &slate.entries {
            if letter == gold_letter {
                elimination.push_str(&format!(" ({letter}) {} fits the presentation.", c.answer_text));
            } else {
                elimination.push_str(&format!(" ({letter}) {} does not address the cause.", c.answer_text));
            }
        }
        elimination.push_str(&format!(" The answer is ({gold_letter})."));
        let backward_prompt =
            render_prompt(PromptStrategy::McqEliminative, PromptInput::McqText(&slate_to_mcq(item, &slate)))?;
        forward.script(&backward_prompt, [elimination]);
        mock.merge(forward);
    }
    Ok(mock)
}

/// Scripts reasoning-generation answers for every option of every item.
/// Every third text omits the closing sentence so the terminator rule is
/// exercised.
pub fn scripted_reasoning(items: &[McqItem]) -> MockBackend {
    let mut mock = MockBackend::new();
    let mut k = 0usize;
    for item in items {
        for (letter, option) in item.options() {
            let mut text = format!(" The findings are most consistent with a condition for which {option} is indicated.");
            if k % 3 != 2 {
                text.push_str(&format!(" Thus, the answer is {option}."));
            }
            k += 1;
            mock.script(&reasoning_prompt(item, *letter).expect("letter exists"), [text]);
        }
    }
    mock
}
