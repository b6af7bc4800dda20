//! MCQ accuracy, Likert aggregation, rater agreement and blinded review
//! sheets.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{is_meta_line, Letter};
use crate::provenance::OutputMeta;
use crate::seed::derive_seed;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("gold set is empty")]
    EmptyGold,
    #[error("prediction for unknown item {0}")]
    UnknownPrediction(String),
    #[error("rating {index} (rater {rater_id}, item {item_id}, slot {slot}) does not resolve through the blinding key")]
    UnresolvedSlot { index: usize, rater_id: String, item_id: String, slot: u32 },
    #[error("rater key sets differ: {0}")]
    KeyMismatch(String),
    #[error("duplicate rating for item {item_id} slot {slot}")]
    DuplicateRating { item_id: String, slot: u32 },
    #[error("no ratings to compare")]
    NoRatings,
    #[error("item {item_id} has no response for method {method}")]
    MissingResponse { item_id: String, method: String },
    #[error("duplicate item {0}")]
    DuplicateItem(String),
    #[error("method name {0:?} appears in the rater-facing bundle")]
    BlindingLeak(String),
    #[error("record {index}: {reason}")]
    Schema { index: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Likert {
    Agree,
    Neutral,
    Disagree,
}

impl Likert {
    pub const ALL: [Likert; 3] = [Likert::Agree, Likert::Neutral, Likert::Disagree];

    pub fn as_str(self) -> &'static str {
        match self {
            Likert::Agree => "Agree",
            Likert::Neutral => "Neutral",
            Likert::Disagree => "Disagree",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Likert {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Likert {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Likert::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("likert {s:?} is not one of Agree, Neutral, Disagree"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub rater_id: String,
    pub item_id: String,
    pub slot: u32,
    pub likert: Likert,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
}

impl Accuracy {
    pub fn value(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }

    /// Percentage with one decimal, rounded half-up.
    pub fn display(&self) -> String {
        let tenths = (2000 * self.correct as u128 + self.total as u128) / (2 * self.total as u128);
        format!("{}.{}%", tenths / 10, tenths % 10)
    }
}

/// Fraction of gold items whose predicted letter matches. Missing
/// predictions count as wrong.
pub fn mcq_accuracy(predictions: &BTreeMap<String, Letter>, gold: &BTreeMap<String, Letter>) -> Result<Accuracy, EvalError> {
    if gold.is_empty() {
        return Err(EvalError::EmptyGold);
    }
    if let Some(id) = predictions.keys().find(|k| !gold.contains_key(*k)) {
        return Err(EvalError::UnknownPrediction(id.clone()));
    }
    let correct = gold.iter().filter(|(id, key)| predictions.get(*id) == Some(key)).count();
    Ok(Accuracy { correct, total: gold.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub agree_pct: f64,
    pub neutral_pct: f64,
    pub disagree_pct: f64,
    pub n: usize,
}

impl MethodSummary {
    fn from_counts(method: &str, counts: [usize; 3]) -> Self {
        let n: usize = counts.iter().sum();
        let pct = |c: usize| if n == 0 { 0.0 } else { 100.0 * c as f64 / n as f64 };
        MethodSummary {
            method: method.to_string(),
            agree_pct: pct(counts[0]),
            neutral_pct: pct(counts[1]),
            disagree_pct: pct(counts[2]),
            n,
        }
    }

    /// Integer percentages, rounded half-up.
    pub fn rounded(&self) -> [u32; 3] {
        [self.agree_pct, self.neutral_pct, self.disagree_pct].map(|p| (p + 0.5).floor() as u32)
    }
}

/// Maps rater-facing (item, slot) pairs back to methods. Never shipped to raters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlindingKey {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<OutputMeta>,
    pub shuffle_seed: u64,
    pub methods: Vec<String>,
    pub entries: Vec<KeyEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyEntry {
    pub item_id: String,
    pub slot: u32,
    pub method: String,
}

impl BlindingKey {
    pub fn resolve(&self, item_id: &str, slot: u32) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.item_id == item_id && e.slot == slot)
            .map(|e| e.method.as_str())
    }

    fn lookup(&self) -> BTreeMap<(&str, u32), &str> {
        self.entries
            .iter()
            .map(|e| ((e.item_id.as_str(), e.slot), e.method.as_str()))
            .collect()
    }
}

/// Per-method Likert percentages, in the key's method order.
pub fn likert_aggregate(ratings: &[RatingRecord], key: &BlindingKey) -> Result<Vec<MethodSummary>, EvalError> {
    let lookup = key.lookup();
    let mut counts: BTreeMap<&str, [usize; 3]> = key.methods.iter().map(|m| (m.as_str(), [0; 3])).collect();
    for (index, r) in ratings.iter().enumerate() {
        let method = lookup
            .get(&(r.item_id.as_str(), r.slot))
            .ok_or_else(|| EvalError::UnresolvedSlot {
                index,
                rater_id: r.rater_id.clone(),
                item_id: r.item_id.clone(),
                slot: r.slot,
            })?;
        counts.entry(method).or_insert([0; 3])[r.likert.index()] += 1;
    }
    Ok(key
        .methods
        .iter()
        .map(|m| MethodSummary::from_counts(m, counts[m.as_str()]))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub raw_agreement: f64,
    pub cohen_kappa: f64,
    pub n: usize,
}

fn by_key(ratings: &[RatingRecord]) -> Result<BTreeMap<(&str, u32), Likert>, EvalError> {
    let mut out = BTreeMap::new();
    for r in ratings {
        if out.insert((r.item_id.as_str(), r.slot), r.likert).is_some() {
            return Err(EvalError::DuplicateRating { item_id: r.item_id.clone(), slot: r.slot });
        }
    }
    Ok(out)
}

/// Raw agreement and Cohen's kappa between two raters over the same keys.
///
/// When chance agreement is 1 (both raters used one identical level
/// throughout, or the marginals otherwise force it) kappa is 1 if the raters
/// agree everywhere and 0 otherwise.
pub fn inter_annotator(first: &[RatingRecord], second: &[RatingRecord]) -> Result<Agreement, EvalError> {
    let a = by_key(first)?;
    let b = by_key(second)?;
    if a.len() != b.len() || a.keys().zip(b.keys()).any(|(x, y)| x != y) {
        let only_a = a.keys().find(|k| !b.contains_key(*k));
        let only_b = b.keys().find(|k| !a.contains_key(*k));
        return Err(EvalError::KeyMismatch(format!("first-only {only_a:?}, second-only {only_b:?}")));
    }
    if a.is_empty() {
        return Err(EvalError::NoRatings);
    }
    let n = a.len() as u128;
    let mut agree = 0u128;
    let mut left = [0u128; 3];
    let mut right = [0u128; 3];
    for (k, la) in &a {
        let lb = b[k];
        left[la.index()] += 1;
        right[lb.index()] += 1;
        if *la == lb {
            agree += 1;
        }
    }
    let chance: u128 = left.iter().zip(&right).map(|(x, y)| x * y).sum();
    let kappa = if chance == n * n {
        if agree == n { 1.0 } else { 0.0 }
    } else {
        (n as f64 * agree as f64 - chance as f64) / ((n * n) as f64 - chance as f64)
    };
    Ok(Agreement { raw_agreement: agree as f64 / n as f64, cohen_kappa: kappa, n: a.len() })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewQuestion {
    pub item_id: String,
    pub question: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewResponse {
    /// 1-based position shown to raters.
    pub slot: u32,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub item_id: String,
    pub question: String,
    pub responses: Vec<ReviewResponse>,
}

/// Rater-facing sheet. Holds no method names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewBundle {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<OutputMeta>,
    pub shuffle_seed: u64,
    pub levels: Vec<Likert>,
    pub items: Vec<ReviewItem>,
}

impl ReviewBundle {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundle serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn slot_count(&self) -> usize {
        self.items.iter().map(|i| i.responses.len()).sum()
    }
}

/// Shuffles each item's responses with a seed derived from
/// `(shuffle_seed, item_id)` and returns the sheet plus its blinding key.
///
/// `responses` maps method name to item id to response text.
pub fn export_review(
    questions: &[ReviewQuestion],
    responses: &BTreeMap<String, BTreeMap<String, String>>,
    shuffle_seed: u64,
) -> Result<(ReviewBundle, BlindingKey), EvalError> {
    let methods: Vec<String> = responses.keys().cloned().collect();
    let mut seen = BTreeSet::new();
    let mut items = Vec::with_capacity(questions.len());
    let mut entries = Vec::new();
    for q in questions {
        if !seen.insert(q.item_id.as_str()) {
            return Err(EvalError::DuplicateItem(q.item_id.clone()));
        }
        let mut order: Vec<&str> = methods.iter().map(String::as_str).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(shuffle_seed, &q.item_id));
        order.shuffle(&mut rng);
        let mut shown = Vec::with_capacity(order.len());
        for (i, method) in order.into_iter().enumerate() {
            let text = responses[method].get(&q.item_id).ok_or_else(|| EvalError::MissingResponse {
                item_id: q.item_id.clone(),
                method: method.to_string(),
            })?;
            let slot = i as u32 + 1;
            shown.push(ReviewResponse { slot, text: text.clone() });
            entries.push(KeyEntry { item_id: q.item_id.clone(), slot, method: method.to_string() });
        }
        items.push(ReviewItem { item_id: q.item_id.clone(), question: q.question.clone(), responses: shown });
    }
    let bundle = ReviewBundle { meta: None, shuffle_seed, levels: Likert::ALL.to_vec(), items };
    check_blinding(&bundle.to_json(), &methods)?;
    Ok((bundle, BlindingKey { meta: None, shuffle_seed, methods, entries }))
}

/// Byte scan of rater-facing text for any method name.
pub fn check_blinding(text: &str, methods: &[String]) -> Result<(), EvalError> {
    match methods.iter().find(|m| text.contains(m.as_str())) {
        Some(m) => Err(EvalError::BlindingLeak(m.clone())),
        None => Ok(()),
    }
}

#[derive(Debug, Deserialize)]
struct RawRating {
    rater_id: serde_json::Value,
    item_id: serde_json::Value,
    slot: serde_json::Value,
    likert: String,
}

fn id_string(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) if !s.is_empty() => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn slot_number(v: &serde_json::Value) -> Option<u32> {
    match v {
        serde_json::Value::Number(n) => n.as_u64().and_then(|s| u32::try_from(s).ok()),
        serde_json::Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
    .filter(|s| *s >= 1)
}

impl RawRating {
    fn validate(self, index: usize) -> Result<RatingRecord, EvalError> {
        let bad = |reason: String| EvalError::Schema { index, reason };
        Ok(RatingRecord {
            rater_id: id_string(&self.rater_id).ok_or_else(|| bad("rater_id must be a non-empty string".into()))?,
            item_id: id_string(&self.item_id).ok_or_else(|| bad("item_id must be a non-empty string".into()))?,
            slot: slot_number(&self.slot).ok_or_else(|| bad("slot must be a positive integer".into()))?,
            likert: self.likert.parse().map_err(bad)?,
        })
    }
}

/// Parses ratings from CSV (with header), a JSON array, or JSON lines.
/// Record indices in errors are 1-based.
pub fn import_ratings(text: &str) -> Result<Vec<RatingRecord>, EvalError> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        let raw: Vec<serde_json::Value> =
            serde_json::from_str(trimmed).map_err(|e| EvalError::Schema { index: 0, reason: e.to_string() })?;
        return raw
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                let r: RawRating =
                    serde_json::from_value(v).map_err(|e| EvalError::Schema { index: i + 1, reason: e.to_string() })?;
                r.validate(i + 1)
            })
            .collect();
    }
    if trimmed.starts_with('{') {
        return text
            .lines()
            .filter(|l| !l.trim().is_empty() && !is_meta_line(l))
            .enumerate()
            .map(|(i, line)| {
                let r: RawRating =
                    serde_json::from_str(line).map_err(|e| EvalError::Schema { index: i + 1, reason: e.to_string() })?;
                r.validate(i + 1)
            })
            .collect();
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<BTreeMap<String, String>>().enumerate() {
        let row = row.map_err(|e| EvalError::Schema { index: i + 1, reason: e.to_string() })?;
        let field = |name: &str| {
            row.get(name)
                .cloned()
                .ok_or_else(|| EvalError::Schema { index: i + 1, reason: format!("missing column {name}") })
        };
        let raw = RawRating {
            rater_id: field("rater_id")?.into(),
            item_id: field("item_id")?.into(),
            slot: field("slot")?.into(),
            likert: field("likert")?,
        };
        out.push(raw.validate(i + 1)?);
    }
    Ok(out)
}

pub fn write_ratings_csv(ratings: &[RatingRecord]) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for r in ratings {
        writer.serialize(r).expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("flush")).expect("utf-8")
}

pub fn write_ratings_jsonl(ratings: &[RatingRecord]) -> String {
    ratings
        .iter()
        .map(|r| serde_json::to_string(r).expect("serializable") + "\n")
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rating(rater: &str, item: &str, slot: u32, likert: Likert) -> RatingRecord {
        RatingRecord { rater_id: rater.into(), item_id: item.into(), slot, likert }
    }

    fn key_one_method(n: usize, method: &str) -> BlindingKey {
        BlindingKey {
            meta: None,
            shuffle_seed: 0,
            methods: vec![method.into()],
            entries: (0..n).map(|i| KeyEntry { item_id: format!("q{i}"), slot: 1, method: method.into() }).collect(),
        }
    }

    #[test]
    fn accuracy_examples() {
        let gold: BTreeMap<String, Letter> = (0..10).map(|i| (format!("q{i}"), Letter::A)).collect();
        let pred: BTreeMap<String, Letter> =
            (0..10).map(|i| (format!("q{i}"), if i < 4 { Letter::A } else { Letter::B })).collect();
        assert_eq!(mcq_accuracy(&pred, &gold).unwrap().value(), 0.4);
        assert_eq!(mcq_accuracy(&gold, &gold).unwrap().display(), "100.0%");
        assert!(matches!(mcq_accuracy(&pred, &BTreeMap::new()), Err(EvalError::EmptyGold)));
        let mut extra = pred.clone();
        extra.insert("zz".into(), Letter::C);
        assert!(matches!(mcq_accuracy(&extra, &gold), Err(EvalError::UnknownPrediction(_))));
        let partial: BTreeMap<String, Letter> = gold.iter().take(3).map(|(k, v)| (k.clone(), *v)).collect();
        assert_eq!(mcq_accuracy(&partial, &gold).unwrap().correct, 3);
    }

    #[test]
    fn accuracy_display_rounds_half_up() {
        assert_eq!(Accuracy { correct: 522, total: 1273 }.display(), "41.0%");
        assert_eq!(Accuracy { correct: 1, total: 8 }.display(), "12.5%");
        assert_eq!(Accuracy { correct: 1, total: 16 }.display(), "6.3%");
        assert_eq!(Accuracy { correct: 0, total: 3 }.display(), "0.0%");
    }

    #[test]
    fn likert_strings() {
        assert_eq!("agree".parse::<Likert>().unwrap(), Likert::Agree);
        assert!("Strongly Agree".parse::<Likert>().is_err());
    }

    #[test]
    fn aggregate_reproduces_published_row() {
        let mut ratings = Vec::new();
        for (i, level) in std::iter::repeat_n(Likert::Agree, 22)
            .chain([Likert::Neutral])
            .chain(std::iter::repeat_n(Likert::Disagree, 2))
            .enumerate()
        {
            ratings.push(rating("r1", &format!("q{i}"), 1, level));
        }
        let summary = likert_aggregate(&ratings, &key_one_method(25, "clinicr")).unwrap();
        assert_eq!(summary[0].n, 25);
        assert_eq!(summary[0].rounded(), [88, 4, 8]);
        assert_eq!((summary[0].agree_pct, summary[0].neutral_pct, summary[0].disagree_pct), (88.0, 4.0, 8.0));
    }

    #[test]
    fn unresolvable_rating_is_named() {
        let err = likert_aggregate(&[rating("r9", "q7", 3, Likert::Agree)], &key_one_method(1, "m")).unwrap_err();
        assert!(err.to_string().contains("r9") && err.to_string().contains("q7"));
    }

    #[test]
    fn kappa_examples() {
        let levels = [Likert::Agree, Likert::Neutral, Likert::Disagree];
        let r1: Vec<RatingRecord> = (0..9).map(|i| rating("a", &format!("q{i}"), 1, levels[i % 3])).collect();
        let same = inter_annotator(&r1, &r1).unwrap();
        assert_eq!((same.raw_agreement, same.cohen_kappa), (1.0, 1.0));
        let r2: Vec<RatingRecord> = (0..9).map(|i| rating("b", &format!("q{i}"), 1, Likert::Agree)).collect();
        let got = inter_annotator(&r1, &r2).unwrap();
        assert!((got.raw_agreement - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(got.cohen_kappa, 0.0);
        // both constant and equal: degenerate marginals with full agreement
        assert_eq!(inter_annotator(&r2, &r2).unwrap().cohen_kappa, 1.0);
        assert!(matches!(inter_annotator(&r1[..8], &r2), Err(EvalError::KeyMismatch(_))));
    }

    #[test]
    fn export_blinds_and_is_reproducible() {
        let questions: Vec<ReviewQuestion> =
            (0..2).map(|i| ReviewQuestion { item_id: format!("q{i}"), question: format!("Question {i}?") }).collect();
        let mut responses = BTreeMap::new();
        for m in ["fb_verifier", "fb_mcq_eliminative", "single_clinicr", "single_eliminative"] {
            responses.insert(m.to_string(), questions.iter().map(|q| (q.item_id.clone(), format!("answer by {} {}", q.item_id, m.len()))).collect());
        }
        let (a, key) = export_review(&questions, &responses, 1).unwrap();
        let (b, _) = export_review(&questions, &responses, 1).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(key.entries.len(), 8);
        let perms = |seed| {
            let (_, k) = export_review(&questions, &responses, seed).unwrap();
            k.entries.into_iter().map(|e| e.method).collect::<Vec<_>>()
        };
        assert_ne!(perms(1), perms(2));

        let mut leaky = responses.clone();
        leaky.get_mut("single_clinicr").unwrap().insert("q0".into(), "as single_clinicr I think".into());
        assert!(matches!(export_review(&questions, &leaky, 1), Err(EvalError::BlindingLeak(_))));
        leaky.get_mut("fb_verifier").unwrap().remove("q1");
        assert!(matches!(export_review(&questions, &leaky, 1), Err(EvalError::MissingResponse { .. })));
    }

    #[test]
    fn single_method_keeps_slot_one() {
        let questions = [ReviewQuestion { item_id: "q".into(), question: "Q?".into() }];
        let responses = BTreeMap::from([("only".to_string(), BTreeMap::from([("q".to_string(), "text".to_string())]))]);
        let (bundle, key) = export_review(&questions, &responses, 5).unwrap();
        assert_eq!(bundle.items[0].responses[0].slot, 1);
        assert_eq!(key.resolve("q", 1), Some("only"));
    }

    #[test]
    fn import_formats() {
        let csv = "rater_id,item_id,slot,likert\nr1,q1,1,Agree\nr1,q1,2,Disagree\n";
        let from_csv = import_ratings(csv).unwrap();
        assert_eq!(from_csv.len(), 2);
        assert_eq!(import_ratings(&write_ratings_csv(&from_csv)).unwrap(), from_csv);
        assert_eq!(import_ratings(&write_ratings_jsonl(&from_csv)).unwrap(), from_csv);
        let json = serde_json::to_string(&from_csv).unwrap();
        assert_eq!(import_ratings(&json).unwrap(), from_csv);
        let err = import_ratings("rater_id,item_id,slot,likert\nr1,q1,1,Agree\nr1,q1,2,Strongly Agree\n").unwrap_err();
        assert!(matches!(err, EvalError::Schema { index: 2, .. }));
        assert!(import_ratings(r#"[{"rater_id":"r","item_id":"q","slot":0,"likert":"Agree"}]"#).is_err());
        assert!(import_ratings(r#"{"rater_id":"r","item_id":"q","likert":"Agree"}"#).is_err());
    }

    fn kappa_oracle(a: &[usize], b: &[usize]) -> f64 {
        let n = a.len() as f64;
        let mut m = [[0f64; 3]; 3];
        for (x, y) in a.iter().zip(b) {
            m[*x][*y] += 1.0;
        }
        let diag: f64 = (0..3).map(|i| m[i][i]).sum();
        let rc: f64 = (0..3).map(|i| m[i].iter().sum::<f64>() * (0..3).map(|r| m[r][i]).sum::<f64>()).sum();
        if rc == n * n {
            return if diag == n { 1.0 } else { 0.0 };
        }
        (n * diag - rc) / (n * n - rc)
    }

    fn paired(a: &[usize], b: &[usize]) -> (Vec<RatingRecord>, Vec<RatingRecord>) {
        let mk = |rater: &str, v: &[usize]| {
            v.iter().enumerate().map(|(i, l)| rating(rater, &format!("q{}", i / 4), (i % 4) as u32 + 1, Likert::ALL[*l])).collect()
        };
        (mk("a", a), mk("b", b))
    }

    proptest! {
        #[test]
        fn kappa_matches_confusion_matrix_oracle(pairs in prop::collection::vec((0usize..3, 0usize..3), 1..60)) {
            let (a, b): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let (r1, r2) = paired(&a, &b);
            let got = inter_annotator(&r1, &r2).unwrap();
            prop_assert!((got.cohen_kappa - kappa_oracle(&a, &b)).abs() < 1e-12);
            prop_assert!(got.cohen_kappa <= 1.0);
            let raw = a.iter().zip(&b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64;
            prop_assert_eq!(got.raw_agreement, raw);
        }

        #[test]
        fn aggregation_is_order_invariant(levels in prop::collection::vec(0usize..3, 1..40), seed: u64) {
            let ratings: Vec<RatingRecord> = levels.iter().enumerate()
                .map(|(i, l)| rating("r", &format!("q{i}"), 1, Likert::ALL[*l])).collect();
            let key = key_one_method(levels.len(), "m");
            let mut shuffled = ratings.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let a = likert_aggregate(&ratings, &key).unwrap();
            prop_assert_eq!(&a, &likert_aggregate(&shuffled, &key).unwrap());
            let s = &a[0];
            prop_assert!((s.agree_pct + s.neutral_pct + s.disagree_pct - 100.0).abs() <= 0.05);
            let hist = |l: usize| levels.iter().filter(|x| **x == l).count() as f64 * 100.0 / levels.len() as f64;
            prop_assert_eq!((s.agree_pct, s.neutral_pct, s.disagree_pct), (hist(0), hist(1), hist(2)));
        }

        #[test]
        fn accuracy_is_relabeling_invariant(keys in prop::collection::vec((0usize..4, 0usize..4), 1..50), perm_seed: u64) {
            let mut perm = Letter::ALL.to_vec();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
            let gold: BTreeMap<String, Letter> = keys.iter().enumerate().map(|(i, (g, _))| (i.to_string(), Letter::ALL[*g])).collect();
            let pred: BTreeMap<String, Letter> = keys.iter().enumerate().map(|(i, (_, p))| (i.to_string(), Letter::ALL[*p])).collect();
            let relabel = |m: &BTreeMap<String, Letter>| m.iter().map(|(k, l)| (k.clone(), perm[l.index()])).collect::<BTreeMap<_, _>>();
            prop_assert_eq!(mcq_accuracy(&pred, &gold).unwrap(), mcq_accuracy(&relabel(&pred), &relabel(&gold)).unwrap());
        }
    }
}
