use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use clinreason_core::backend::{build_backend, BackendKind, Completion, ModelBackend};
use clinreason_core::corpus::{is_meta_line, mcq_to_open, parse_mcq_corpus, parse_open_items, write_mcq_corpus, write_open_items, RewriteMode, Source};
use clinreason_core::evaluation::{
    check_blinding, export_review, import_ratings, inter_annotator, likert_aggregate, mcq_accuracy, write_ratings_jsonl, Agreement,
    BlindingKey, MethodSummary, RatingRecord, ReviewBundle, ReviewQuestion,
};
use clinreason_core::fixtures::{scripted_forward_backward, scripted_reasoning, synthetic_mcq_items, synthetic_open_items};
use clinreason_core::pipeline::{normalize_answer, run_forward_backward, run_single, Backward, Candidate, PipelineResult};
use clinreason_core::prompting::{extract_answer, render_prompt, PromptStrategy};
use clinreason_core::provenance::OutputMeta;
use clinreason_core::verifier::{build_training_examples, export_pairs, spot_check_sample, write_examples_jsonl, write_pairs_jsonl, HttpRewardClient, RewardClient};
use clinreason_core::{Letter, McqItem, OpenItem};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{RunConfig, ENV_VERIFIER_URL};
use crate::error::{CliError, ExitClass};
use crate::serve::{serve, ReviewState};
use crate::{
    AggregateArgs, AskArgs, BackwardArg, Cli, Command, ConvertArgs, EvaluateMcqArgs, ExportReviewArgs, FixtureArgs, ImportRatingsArgs, Io,
    RunFbArgs, ServeReviewArgs, VerifierDataArgs,
};

pub fn dispatch(cli: Cli, io: &mut Io<'_>) -> Result<(), CliError> {
    let config = RunConfig::load(cli.config.as_deref(), io.env)?;
    match cli.command {
        Command::Convert(a) => convert(&config, a, io),
        Command::Ask(a) => ask(&config, a, io),
        Command::RunFb(a) => run_fb(&config, a, io),
        Command::BuildVerifierData(a) => build_verifier_data(&config, a, io),
        Command::EvaluateMcq(a) => evaluate_mcq(&config, a, io),
        Command::ExportReview(a) => export(&config, a, io),
        Command::ServeReview(a) => serve_review(&config, a),
        Command::ImportRatings(a) => import(&config, a, io),
        Command::Aggregate(a) => aggregate(&config, a, io),
        Command::Fixture(a) => fixture(&config, a, io),
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn say(io: &mut Io<'_>, line: impl AsRef<str>) {
    let _ = writeln!(io.out, "{}", line.as_ref());
}

fn backend(config: &RunConfig) -> Result<Box<dyn ModelBackend>, CliError> {
    Ok(build_backend(&config.backend)?)
}

/// Maps `f` over `items` on at most `jobs` threads, keeping input order.
fn par_map<T, R, F>(items: &[T], jobs: usize, f: F) -> Result<Vec<R>, CliError>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if jobs == 0 {
        return Err(CliError::usage("--jobs must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::data(format!("thread pool: {e}")))?;
    Ok(pool.install(|| items.par_iter().map(f).collect()))
}

/// Per-item failures of a batch. The batch keeps going; the worst class
/// becomes the exit status.
#[derive(Default)]
struct Failures {
    worst: Option<ExitClass>,
    count: usize,
}

impl Failures {
    fn record(&mut self, io: &mut Io<'_>, item_id: &str, err: CliError) {
        if err.message.contains(item_id) {
            let _ = writeln!(io.err, "{err}");
        } else {
            let _ = writeln!(io.err, "item {item_id}: {err}");
        }
        self.worst = self.worst.max(Some(err.class));
        self.count += 1;
    }

    fn finish(self, total: usize) -> Result<(), CliError> {
        match self.worst {
            None => Ok(()),
            Some(class) => Err(CliError { class, message: format!("{} of {total} items failed", self.count) }),
        }
    }
}

fn convert(config: &RunConfig, args: ConvertArgs, io: &mut Io<'_>) -> Result<(), CliError> {
    let items = parse_mcq_corpus(&read(&args.input)?, args.source.into())?;
    let mode: RewriteMode = args.mode.into();
    let backend = match mode {
        RewriteMode::LlmAssisted => Some(backend(config)?),
        RewriteMode::RuleBased => None,
    };
    let mut failures = Failures::default();
    let mut converted = Vec::with_capacity(items.len());
    for item in &items {
        match mcq_to_open(item, mode, backend.as_deref()) {
            Ok(open) => converted.push(open),
            Err(e) => failures.record(io, item.id(), e.into()),
        }
    }
    let meta = config.meta([]);
    write(&args.output, &(meta.to_line() + &write_open_items(&converted)))?;
    say(io, format!("converted {} of {} items -> {}", converted.len(), items.len(), args.output.display()));
    failures.finish(items.len())
}

fn pick<'a, T>(items: &'a [T], id: Option<&str>, id_of: impl Fn(&T) -> &str) -> Result<&'a T, CliError> {
    match id {
        Some(id) => items.iter().find(|i| id_of(i) == id).ok_or_else(|| CliError::data(format!("no item with id {id}"))),
        None => items.first().ok_or_else(|| CliError::data("input holds no items")),
    }
}

fn ask(config: &RunConfig, args: AskArgs, io: &mut Io<'_>) -> Result<(), CliError> {
    let text = read(&args.input)?;
    let (item_id, prompt, gold) = if args.strategy.is_mcq() {
        let items = parse_mcq_corpus(&text, Source::MedqaTest)?;
        let item = pick(&items, args.item.as_deref(), McqItem::id)?;
        (item.id().to_string(), render_prompt(args.strategy, item)?, item.answer_key().to_string())
    } else {
        let items = parse_open_items(&text)?;
        let item = pick(&items, args.item.as_deref(), |i: &OpenItem| i.id.as_str())?;
        (item.id.clone(), render_prompt(args.strategy, item)?, item.gold_answer.clone())
    };
    let backend = backend(config)?;
    let params = config
        .pipeline
        .backward
        .clone()
        .with_n(1)
        .with_seed(config.pipeline.backward_seed_for(&item_id));
    let completion = backend
        .complete(&prompt, &params)?
        .into_iter()
        .next()
        .ok_or_else(|| CliError::backend("backend returned no completion"))?;
    let (answer, correct, error) = match extract_answer(args.strategy, &completion.text) {
        Ok(a) => {
            let correct = match (&a.letter, &a.text) {
                (Some(l), _) => l.to_string() == gold,
                (None, Some(t)) => normalize_answer(t) == normalize_answer(&gold),
                _ => false,
            };
            (Some(a), correct, None)
        }
        Err(e) => (None, false, Some(e.to_string())),
    };
    let mut report = json!({
        "item_id": item_id,
        "strategy": args.strategy.name(),
        "completion": completion.text,
        "answer": answer,
        "gold": gold,
        "correct": correct,
        "extraction_error": error,
    });
    if args.show_prompt {
        report["prompt"] = json!(prompt);
    }
    say(io, serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn reward_client(config: &RunConfig) -> Result<HttpRewardClient, CliError> {
    let url = config
        .verifier
        .url
        .as_deref()
        .ok_or_else(|| CliError::data(format!("verifier.url is not set (config file or {ENV_VERIFIER_URL})")))?;
    let v = &config.verifier;
    Ok(HttpRewardClient::new(url, v.timeout(), v.retry.clone(), v.max_in_flight))
}

fn run_fb(config: &RunConfig, args: RunFbArgs, io: &mut Io<'_>) -> Result<(), CliError> {
    let items = parse_open_items(&read(&args.input)?)?;
    let backend = backend(config)?;
    if let Some(s) = args.single {
        if s.is_mcq() {
            return Err(CliError::usage(format!("--single takes an open-ended strategy, got {s}")));
        }
    }
    let client = match (args.single, args.backward) {
        (None, BackwardArg::Verifier) => Some(reward_client(config)?),
        _ => None,
    };
    let cfg = &config.pipeline;
    let outcomes = par_map(&items, args.jobs, |item| {
        let result = match (args.single, &client) {
            (Some(strategy), _) => run_single(item, strategy, &*backend, cfg),
            (None, Some(c)) => run_forward_backward(item, &*backend, Backward::Verifier(c as &dyn RewardClient), cfg),
            (None, None) => run_forward_backward(item, &*backend, Backward::Mcq, cfg),
        };
        result.map_err(CliError::from)
    })?;

    let mut failures = Failures::default();
    let mut out = config.meta(config.pipeline_seeds()).to_line();
    let mut written = 0;
    for (item, outcome) in items.iter().zip(outcomes) {
        match outcome {
            Ok(mut result) => {
                if args.no_trace {
                    result.trace.clear();
                }
                if result.fallback {
                    let _ = writeln!(io.err, "item {}: backward pass fell back to the most likely candidate", item.id);
                }
                out.push_str(&serde_json::to_string(&result)?);
                out.push('\n');
                written += 1;
            }
            Err(e) => failures.record(io, &item.id, e),
        }
    }
    write(&args.output, &out)?;
    say(io, format!("wrote {written} of {} results -> {}", items.len(), args.output.display()));
    failures.finish(items.len())
}

fn build_verifier_data(config: &RunConfig, args: VerifierDataArgs, io: &mut Io<'_>) -> Result<(), CliError> {
    let items = parse_mcq_corpus(&read(&args.input)?, args.source.into())?;
    let backend = backend(config)?;
    let outcomes = par_map(&items, args.jobs, |item| {
        let examples = build_training_examples(item, &*backend, &config.reasoning)?;
        let pairs = export_pairs(&examples)?;
        Ok::<_, CliError>((examples, pairs))
    })?;
    let mut failures = Failures::default();
    let (mut examples, mut pairs) = (Vec::new(), Vec::new());
    for (item, outcome) in items.iter().zip(outcomes) {
        match outcome {
            Ok((e, p)) => {
                examples.extend(e);
                pairs.extend(p);
            }
            Err(e) => failures.record(io, item.id(), e),
        }
    }
    let meta = config.meta([("spot_check_seed", config.spot_check.seed)]);
    write(&args.examples, &(meta.to_line() + &write_examples_jsonl(&examples)))?;
    write(&args.pairs, &(meta.to_line() + &write_pairs_jsonl(&pairs)))?;
    if let Some(path) = &args.spot_check {
        let mut text = meta.to_line();
        for row in spot_check_sample(&examples, config.spot_check.per_label, config.spot_check.seed) {
            text.push_str(&serde_json::to_string(&row)?);
            text.push('\n');
        }
        write(path, &text)?;
    }
    say(io, format!("{} examples, {} pairs from {} items", examples.len(), pairs.len(), items.len() - failures.count));
    failures.finish(items.len())
}

#[derive(Debug, Serialize, Deserialize)]
struct Prediction {
    item_id: String,
    letter: Option<Letter>,
}

fn parse_predictions(text: &str) -> Result<BTreeMap<String, Letter>, CliError> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || is_meta_line(line) {
            continue;
        }
        let p: Prediction =
            serde_json::from_str(line).map_err(|e| CliError::data(format!("predictions line {}: {e}", i + 1)))?;
        if out.contains_key(&p.item_id) {
            return Err(CliError::data(format!("predictions line {}: duplicate item {}", i + 1, p.item_id)));
        }
        if let Some(letter) = p.letter {
            out.insert(p.item_id, letter);
        }
    }
    Ok(out)
}

fn evaluate_mcq(config: &RunConfig, args: EvaluateMcqArgs, io: &mut Io<'_>) -> Result<(), CliError> {
    let items = parse_mcq_corpus(&read(&args.gold)?, Source::MedqaTest)?;
    let gold: BTreeMap<String, Letter> = items.iter().map(|i| (i.id().to_string(), i.answer_key())).collect();
    if gold.len() != items.len() {
        return Err(CliError::data("gold file repeats an item id"));
    }
    let mut failures = Failures::default();
    let predictions = match (&args.predictions, args.strategy) {
        (Some(path), _) => parse_predictions(&read(path)?)?,
        (None, Some(strategy)) => {
            if !strategy.is_mcq() {
                return Err(CliError::usage(format!("{strategy} is not an MCQ strategy")));
            }
            let backend = backend(config)?;
            let outcomes = par_map(&items, args.jobs, |item| {
                let prompt = render_prompt(strategy, item)?;
                let params = config
                    .pipeline
                    .backward
                    .clone()
                    .with_n(1)
                    .with_seed(config.pipeline.backward_seed_for(item.id()));
                let completion: Option<Completion> = backend.complete(&prompt, &params)?.into_iter().next();
                Ok::<_, CliError>(completion.and_then(|c| extract_answer(strategy, &c.text).ok()).and_then(|a| a.letter))
            })?;
            let mut preds = BTreeMap::new();
            let mut lines = config.meta([("backward_seed", config.pipeline.backward_seed)]).to_line();
            let mut unparsed = 0;
            for (item, outcome) in items.iter().zip(outcomes) {
                match outcome {
                    Ok(letter) => {
                        unparsed += usize::from(letter.is_none());
                        lines.push_str(&serde_json::to_string(&Prediction { item_id: item.id().to_string(), letter })?);
                        lines.push('\n');
                        if let Some(l) = letter {
                            preds.insert(item.id().to_string(), l);
                        }
                    }
                    Err(e) => failures.record(io, item.id(), e),
                }
            }
            if unparsed > 0 {
                let _ = writeln!(io.err, "{unparsed} completions had no extractable letter and count as wrong");
            }
            if let Some(path) = &args.output {
                write(path, &lines)?;
            }
            preds
        }
        (None, None) => return Err(CliError::usage("need --predictions or --strategy")),
    };
    let accuracy = mcq_accuracy(&predictions, &gold)?;
    say(io, format!("accuracy {} ({}/{})", accuracy.display(), accuracy.correct, accuracy.total));
    failures.finish(items.len())
}

/// What a rater reads for one method's answer.
pub fn response_text(candidate: &Candidate) -> String {
    let reasoning = candidate.reasoning_text.trim();
    if reasoning.is_empty() {
        format!("Answer: {}", candidate.answer_text)
    } else {
        format!("{reasoning}\nAnswer: {}", candidate.answer_text)
    }
}

fn parse_results(text: &str, path: &Path) -> Result<Vec<PipelineResult>, CliError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !is_meta_line(l))
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| CliError::data(format!("{} line {}: {e}", path.display(), i + 1))))
        .collect()
}

fn export(config: &RunConfig, args: ExportReviewArgs, io: &mut Io<'_>) -> Result<(), CliError> {
    if same_file(&args.bundle, &args.key) {
        return Err(CliError::usage("--bundle and --key must be different files"));
    }
    let questions: Vec<ReviewQuestion> = parse_open_items(&read(&args.questions)?)?
        .into_iter()
        .map(|i| ReviewQuestion { item_id: i.id, question: i.stem })
        .collect();
    let mut responses: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    for arg in &args.responses {
        let (name, path) = match arg.split_once('=') {
            Some((n, p)) if !n.is_empty() && !Path::new(arg).exists() => (Some(n.to_string()), PathBuf::from(p)),
            _ => (None, PathBuf::from(arg)),
        };
        let results = parse_results(&read(&path)?, &path)?;
        let name = match name {
            Some(n) => n,
            None => {
                let methods: BTreeSet<&str> = results.iter().map(|r| r.method.name()).collect();
                match methods.into_iter().collect::<Vec<_>>().as_slice() {
                    [m] => m.to_string(),
                    [] => return Err(CliError::data(format!("{} holds no results", path.display()))),
                    many => {
                        return Err(CliError::data(format!("{} mixes methods {many:?}; name it with NAME=PATH", path.display())))
                    }
                }
            }
        };
        let texts = results.iter().map(|r| (r.item_id.clone(), response_text(&r.chosen_candidate))).collect();
        if responses.insert(name.clone(), texts).is_some() {
            return Err(CliError::usage(format!("method {name} given twice")));
        }
    }
    let seed = args.seed.unwrap_or(config.review.shuffle_seed);
    let (mut bundle, mut key) = export_review(&questions, &responses, seed)?;
    let meta = config.meta([("shuffle_seed", seed)]);
    bundle.meta = Some(meta.clone());
    key.meta = Some(meta);
    let bundle_json = bundle.to_json();
    check_blinding(&bundle_json, &key.methods)?;
    write(&args.bundle, &(bundle_json + "\n"))?;
    write(&args.key, &(serde_json::to_string_pretty(&key)? + "\n"))?;
    say(
        io,
        format!(
            "{} items x {} methods -> {} (key: {})",
            bundle.items.len(),
            key.methods.len(),
            args.bundle.display(),
            args.key.display()
        ),
    );
    Ok(())
}

fn same_file(a: &Path, b: &Path) -> bool {
    if a == b {
        return true;
    }
    matches!((a.canonicalize(), b.canonicalize()), (Ok(x), Ok(y)) if x == y)
}

fn serve_review(config: &RunConfig, args: ServeReviewArgs) -> Result<(), CliError> {
    let bundle = ReviewBundle::from_json(&read(&args.bundle)?)?;
    let meta = config.meta([("shuffle_seed", bundle.shuffle_seed)]);
    serve(ReviewState::new(&bundle, args.ratings, meta), args.addr)
}

fn import(config: &RunConfig, args: ImportRatingsArgs, io: &mut Io<'_>) -> Result<(), CliError> {
    let ratings = import_ratings(&read(&args.input)?)?;
    let mut seeds = Vec::new();
    if let Some(path) = &args.bundle {
        let bundle = ReviewBundle::from_json(&read(path)?)?;
        let slots: BTreeSet<(&str, u32)> = bundle
            .items
            .iter()
            .flat_map(|i| i.responses.iter().map(move |r| (i.item_id.as_str(), r.slot)))
            .collect();
        for (n, r) in ratings.iter().enumerate() {
            if !slots.contains(&(r.item_id.as_str(), r.slot)) {
                return Err(CliError::data(format!("record {}: item {} has no slot {}", n + 1, r.item_id, r.slot)));
            }
        }
        seeds.push(("shuffle_seed", bundle.shuffle_seed));
    }
    write(&args.output, &(config.meta(seeds).to_line() + &write_ratings_jsonl(&ratings)))?;
    say(io, format!("imported {} ratings -> {}", ratings.len(), args.output.display()));
    Ok(())
}

#[derive(Debug, Serialize)]
struct PairAgreement {
    raters: [String; 2],
    #[serde(flatten)]
    agreement: Agreement,
}

#[derive(Debug, Serialize)]
struct AggregateReport {
    meta: OutputMeta,
    summaries: Vec<MethodSummary>,
    agreement: Vec<PairAgreement>,
}

/// Agreement for every rater pair over the (item, slot) keys both rated.
fn pairwise_agreement(ratings: &[RatingRecord]) -> Result<Vec<PairAgreement>, CliError> {
    let mut by_rater: BTreeMap<&str, Vec<&RatingRecord>> = BTreeMap::new();
    for r in ratings {
        by_rater.entry(r.rater_id.as_str()).or_default().push(r);
    }
    let raters: Vec<&str> = by_rater.keys().copied().collect();
    let mut out = Vec::new();
    for (i, a) in raters.iter().enumerate() {
        for b in &raters[i + 1..] {
            let keys = |rs: &[&RatingRecord]| -> BTreeSet<(String, u32)> { rs.iter().map(|r| (r.item_id.clone(), r.slot)).collect() };
            let shared: BTreeSet<_> = keys(&by_rater[a]).intersection(&keys(&by_rater[b])).cloned().collect();
            if shared.is_empty() {
                continue;
            }
            let subset = |rater: &str| -> Vec<RatingRecord> {
                by_rater[rater]
                    .iter()
                    .filter(|r| shared.contains(&(r.item_id.clone(), r.slot)))
                    .map(|r| (*r).clone())
                    .collect()
            };
            let agreement = inter_annotator(&subset(a), &subset(b))?;
            out.push(PairAgreement { raters: [a.to_string(), b.to_string()], agreement });
        }
    }
    Ok(out)
}

fn aggregate(config: &RunConfig, args: AggregateArgs, io: &mut Io<'_>) -> Result<(), CliError> {
    let key: BlindingKey = serde_json::from_str(&read(&args.key)?).map_err(|e| CliError::data(format!("{}: {e}", args.key.display())))?;
    let mut ratings = Vec::new();
    for path in &args.ratings {
        ratings.extend(import_ratings(&read(path)?).map_err(|e| CliError::from(e).context(path.display()))?);
    }
    let summaries = likert_aggregate(&ratings, &key)?;
    let agreement = pairwise_agreement(&ratings)?;

    let width = summaries.iter().map(|s| s.method.len()).max().unwrap_or(6).max(6);
    say(io, format!("{:<width$}  {:>6}  {:>7}  {:>8}  {:>5}", "method", "agree", "neutral", "disagree", "n"));
    for s in &summaries {
        let [a, n, d] = s.rounded();
        say(io, format!("{:<width$}  {:>5}%  {:>6}%  {:>7}%  {:>5}", s.method, a, n, d, s.n));
    }
    for p in &agreement {
        say(
            io,
            format!(
                "agreement {} vs {}: raw {:.3}, kappa {:.3} (n={})",
                p.raters[0], p.raters[1], p.agreement.raw_agreement, p.agreement.cohen_kappa, p.agreement.n
            ),
        );
    }
    if let Some(path) = &args.output {
        let report = AggregateReport { meta: config.meta([("shuffle_seed", key.shuffle_seed)]), summaries, agreement };
        write(path, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    }
    Ok(())
}

fn fixture(config: &RunConfig, args: FixtureArgs, io: &mut Io<'_>) -> Result<(), CliError> {
    if args.distinct < 2 {
        return Err(CliError::usage("--distinct must be at least 2"));
    }
    std::fs::create_dir_all(&args.dir).map_err(|e| CliError::io(&args.dir, e))?;
    let open = synthetic_open_items(args.items, args.seed);
    let mcq = synthetic_mcq_items(args.items, args.seed);
    let mut mock = scripted_forward_backward(&open, &config.pipeline, args.distinct, args.seed)?;
    mock.merge(scripted_reasoning(&mcq));
    // Live MCQ answers: right on four items out of five.
    for (i, item) in mcq.iter().enumerate() {
        let letter = if i % 5 == 4 { Letter::from_index((item.answer_key().index() + 1) % 4).expect("in range") } else { item.answer_key() };
        let text = format!(" Let's think step by step. The presentation fits ({letter}). The answer is ({letter}).");
        mock.script(&render_prompt(PromptStrategy::McqClinicr, item)?, [text]);
    }
    // Single-prompt eliminative arm, right on every other item. The ClinicR
    // arm reuses the forward script.
    for (i, item) in open.iter().enumerate() {
        let answer = if i % 2 == 0 { item.gold_answer.as_str() } else { "Supportive care" };
        let text = format!(" Let's think step by step. Ruling out the less likely causes leaves one option.\nAnswer: {answer}.");
        mock.script(&render_prompt(PromptStrategy::Eliminative, item)?, [text]);
    }

    let mut fixture_config = config.clone();
    fixture_config.backend.kind = BackendKind::Mock;
    fixture_config.backend.mock_script = Some(PathBuf::from("mock.json"));
    let toml = toml::to_string(&fixture_config).map_err(|e| CliError::data(format!("config: {e}")))?;

    let script = args.dir.join("mock.json");
    write(&script, &(mock.to_json() + "\n"))?;
    write(&args.dir.join("clinreason.toml"), &toml)?;
    fixture_config.backend.mock_script = Some(script);
    let meta = OutputMeta::new(fixture_config.hash(), [("fixture_seed", args.seed)]);
    write(&args.dir.join("open.jsonl"), &(meta.to_line() + &write_open_items(&open)))?;
    write(&args.dir.join("mcq.jsonl"), &(meta.to_line() + &write_mcq_corpus(&mcq)))?;
    say(io, format!("wrote {} open and {} MCQ items with a scripted backend to {}", open.len(), mcq.len(), args.dir.display()));
    Ok(())
}
