//! Browser bindings for three interactive views: the dedup/slate explorer,
//! prompt rendering with answer extraction, and a rater agreement calculator.
//!
//! Each export takes and returns JSON strings. The plain functions are what
//! the native tests call; the `wasm_*` wrappers only convert errors.

use clinreason_core::backend::prompt_hash;
use clinreason_core::evaluation::{inter_annotator, Likert, RatingRecord};
use clinreason_core::pipeline::{dedup, select_top_k, slate_to_mcq, token_jaccard, Candidate};
use clinreason_core::prompting::{extract_answer, render_prompt, PromptInput, PromptStrategy};
use clinreason_core::OpenItem;
use serde::{Deserialize, Serialize};
use serde_json::json;
use wasm_bindgen::prelude::*;

#[derive(Debug, Deserialize)]
struct CandidateInput {
    answer: String,
    score: f64,
}

#[derive(Debug, Serialize)]
struct Dropped {
    index: u32,
    /// Kept candidate it collided with, and their Jaccard.
    near: u32,
    jaccard: f64,
}

/// Dedup at `tau`, then the top-`k` slate under `seed`.
///
/// `candidates` is a JSON array of `{answer, score}`; array position is the
/// sample index.
pub fn explore_slate(stem: &str, candidates: &str, tau: f64, k: usize, seed: u64) -> Result<String, String> {
    let input: Vec<CandidateInput> = serde_json::from_str(candidates).map_err(|e| format!("candidates: {e}"))?;
    let all: Vec<Candidate> = input
        .into_iter()
        .enumerate()
        .filter(|(_, c)| !c.answer.trim().is_empty())
        .map(|(i, c)| Candidate::new(c.answer, String::new(), c.score, i as u32))
        .collect();
    let kept = dedup(&all, tau).map_err(|e| e.to_string())?;
    let dropped: Vec<Dropped> = all
        .iter()
        .filter(|c| !kept.iter().any(|k| k.sample_index == c.sample_index))
        .map(|c| {
            let (near, jaccard) = kept
                .iter()
                .map(|k| (k.sample_index, token_jaccard(&k.answer_norm, &c.answer_norm)))
                .fold((0, f64::MIN), |best, x| if x.1 > best.1 { x } else { best });
            Dropped { index: c.sample_index, near, jaccard }
        })
        .collect();
    let slate = select_top_k(&kept, k, seed).map_err(|e| e.to_string())?;
    let mcq = if stem.trim().is_empty() {
        None
    } else {
        let item = OpenItem::new("demo", stem, "-", None, None).map_err(|e| e.to_string())?;
        Some(slate_to_mcq(&item, &slate))
    };
    let out = json!({
        "candidates": all,
        "kept": kept.iter().map(|c| c.sample_index).collect::<Vec<_>>(),
        "dropped": dropped,
        "slate": slate.entries,
        "max_letter": slate.max_score_letter(),
        "mcq": mcq,
    });
    Ok(out.to_string())
}

/// Renders `question` under `strategy` and extracts an answer from `completion`.
pub fn prompt_and_extract(strategy: &str, question: &str, completion: &str) -> Result<String, String> {
    let strategy: PromptStrategy = strategy.parse()?;
    let prompt = if strategy.is_mcq() {
        render_prompt(strategy, PromptInput::McqText(question))
    } else {
        let item = OpenItem::new("demo", question, "-", None, None).map_err(|e| e.to_string())?;
        render_prompt(strategy, &item)
    }
    .map_err(|e| e.to_string())?;
    let (answer, error) = match extract_answer(strategy, completion) {
        Ok(a) => {
            let reasoning = a.reasoning(completion);
            (Some(json!({ "extracted": a, "reasoning": reasoning })), None)
        }
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(json!({
        "prompt": prompt,
        "prompt_sha256": prompt_hash(&prompt),
        "answer": answer,
        "error": error,
    })
    .to_string())
}

fn parse_levels(text: &str) -> Result<Vec<Likert>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| match t.to_ascii_lowercase().as_str() {
            "a" => Ok(Likert::Agree),
            "n" => Ok(Likert::Neutral),
            "d" => Ok(Likert::Disagree),
            _ => t.parse(),
        })
        .collect()
}

fn as_records(rater: &str, levels: &[Likert]) -> Vec<RatingRecord> {
    levels
        .iter()
        .enumerate()
        .map(|(i, l)| RatingRecord { rater_id: rater.into(), item_id: format!("item-{}", i + 1), slot: 1, likert: *l })
        .collect()
}

/// Agreement between two raters given as comma or space separated levels
/// (`Agree`/`Neutral`/`Disagree` or `A`/`N`/`D`), paired by position.
pub fn rater_agreement(first: &str, second: &str) -> Result<String, String> {
    let (a, b) = (parse_levels(first)?, parse_levels(second)?);
    if a.len() != b.len() {
        return Err(format!("rater 1 gave {} ratings, rater 2 gave {}", a.len(), b.len()));
    }
    let agreement = inter_annotator(&as_records("r1", &a), &as_records("r2", &b)).map_err(|e| e.to_string())?;
    let mut confusion = [[0u32; 3]; 3];
    for (x, y) in a.iter().zip(&b) {
        confusion[x.index()][y.index()] += 1;
    }
    Ok(json!({ "agreement": agreement, "confusion": confusion, "levels": Likert::ALL }).to_string())
}

#[wasm_bindgen(js_name = exploreSlate)]
pub fn wasm_explore_slate(stem: &str, candidates: &str, tau: f64, k: usize, seed: u64) -> Result<String, JsError> {
    explore_slate(stem, candidates, tau, k, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = promptAndExtract)]
pub fn wasm_prompt_and_extract(strategy: &str, question: &str, completion: &str) -> Result<String, JsError> {
    prompt_and_extract(strategy, question, completion).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = raterAgreement)]
pub fn wasm_rater_agreement(first: &str, second: &str) -> Result<String, JsError> {
    rater_agreement(first, second).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = strategies)]
pub fn wasm_strategies() -> Vec<String> {
    PromptStrategy::ALL.iter().map(|s| s.name().to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn slate_explorer_drops_near_duplicates() {
        let cands = r#"[{"answer":"Eplerenone","score":-0.2},{"answer":"eplerenone.","score":-0.4},
            {"answer":"Spironolactone","score":-0.5},{"answer":"Amiloride","score":-0.9},{"answer":"Torsemide","score":-1.0},
            {"answer":"Hydralazine","score":-1.2}]"#;
        let out: Value = serde_json::from_str(&explore_slate("Which drug would have helped?", cands, 0.6, 4, 1).unwrap()).unwrap();
        assert_eq!(out["kept"], json!([0, 2, 3, 4, 5]));
        assert_eq!(out["dropped"][0]["index"], 1);
        assert_eq!(out["dropped"][0]["near"], 0);
        assert_eq!(out["slate"].as_object().unwrap().len(), 4);
        let max = out["max_letter"].as_str().unwrap();
        assert_eq!(out["slate"][max]["answer_text"], "Eplerenone");
        assert!(out["mcq"].as_str().unwrap().contains("(A)"));
    }

    #[test]
    fn slate_explorer_reports_bad_input() {
        assert!(explore_slate("", "not json", 0.6, 4, 0).is_err());
        assert!(explore_slate("", r#"[{"answer":"x","score":-1}]"#, 0.0, 4, 0).is_err());
        assert!(explore_slate("", "[]", 0.6, 4, 0).is_err());
    }

    #[test]
    fn extraction_view() {
        let out: Value = serde_json::from_str(
            &prompt_and_extract("clinicr", "What is the diagnosis?", " Let's think step-by-step. Findings fit.\nAnswer: Gout.").unwrap(),
        )
        .unwrap();
        assert!(out["prompt"].as_str().unwrap().ends_with("Q: What is the diagnosis?\n\nA:"));
        assert_eq!(out["answer"]["extracted"]["text"], "Gout");
        let out: Value = serde_json::from_str(&prompt_and_extract("mcq_eliminative", "Q?", "no marker").unwrap()).unwrap();
        assert!(out["answer"].is_null());
        assert!(out["error"].is_string());
        assert!(prompt_and_extract("socratic", "Q?", "").is_err());
    }

    #[test]
    fn agreement_view() {
        let out: Value = serde_json::from_str(&rater_agreement("A A N D", "agree, Agree, neutral, disagree").unwrap()).unwrap();
        assert_eq!(out["agreement"]["cohen_kappa"], 1.0);
        assert_eq!(out["confusion"][0][0], 2);
        let out: Value = serde_json::from_str(&rater_agreement("A A D D", "A D A D").unwrap()).unwrap();
        assert_eq!(out["agreement"]["raw_agreement"], 0.5);
        assert_eq!(out["agreement"]["cohen_kappa"], 0.0);
        assert!(rater_agreement("A", "A N").is_err());
        assert!(rater_agreement("A X", "A N").is_err());
    }
}
