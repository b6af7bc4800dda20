//! `clinreason` command line: corpus conversion, forward-backward runs,
//! verifier data, MCQ scoring and the blinded expert review loop.

pub mod commands;
pub mod config;
pub mod error;
pub mod serve;

use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use clinreason_core::corpus::{RewriteMode, Source};
use clinreason_core::prompting::PromptStrategy;

pub use error::{CliError, ExitClass};

#[derive(Debug, Parser)]
#[command(name = "clinreason", version, about = "Clinical-reasoning prompting and forward-backward answer selection")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rewrite MCQ JSONL as open-ended JSONL.
    Convert(ConvertArgs),
    /// Answer one item with one prompting strategy.
    Ask(AskArgs),
    /// Batch forward-backward answer selection over open-ended items.
    RunFb(RunFbArgs),
    /// Generate per-option reasoning, pointwise examples and preference pairs.
    BuildVerifierData(VerifierDataArgs),
    /// MCQ accuracy from a predictions file or a live strategy run.
    EvaluateMcq(EvaluateMcqArgs),
    /// Write a blinded review bundle and its separate key.
    ExportReview(ExportReviewArgs),
    /// Serve a bundle to raters: GET /bundle, POST /ratings.
    ServeReview(ServeReviewArgs),
    /// Validate ratings (CSV, JSON or JSONL) and normalize them to JSONL.
    ImportRatings(ImportRatingsArgs),
    /// Per-method Likert summaries and pairwise rater agreement.
    Aggregate(AggregateArgs),
    /// Write synthetic items, a scripted mock backend and a config for offline runs.
    Fixture(FixtureArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    RuleBased,
    LlmAssisted,
}

impl From<ModeArg> for RewriteMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::RuleBased => RewriteMode::RuleBased,
            ModeArg::LlmAssisted => RewriteMode::LlmAssisted,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SourceArg {
    MedqaTest,
    MedqaTrain,
    Synthetic,
}

impl From<SourceArg> for Source {
    fn from(s: SourceArg) -> Self {
        match s {
            SourceArg::MedqaTest => Source::MedqaTest,
            SourceArg::MedqaTrain => Source::MedqaTrain,
            SourceArg::Synthetic => Source::Synthetic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackwardArg {
    Mcq,
    Verifier,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value = "rule-based")]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value = "medqa-test")]
    pub source: SourceArg,
}

#[derive(Debug, Args)]
pub struct AskArgs {
    /// MCQ JSONL for MCQ strategies, open-ended JSONL otherwise.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub strategy: PromptStrategy,
    /// Item id; defaults to the first item.
    #[arg(long)]
    pub item: Option<String>,
    /// Include the rendered prompt in the output.
    #[arg(long)]
    pub show_prompt: bool,
}

#[derive(Debug, Args)]
pub struct RunFbArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value = "mcq")]
    pub backward: BackwardArg,
    /// Run a single-prompt baseline arm (clinicr or eliminative) instead.
    #[arg(long, conflicts_with = "backward")]
    pub single: Option<PromptStrategy>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Drop per-stage traces from the results.
    #[arg(long)]
    pub no_trace: bool,
}

#[derive(Debug, Args)]
pub struct VerifierDataArgs {
    /// MCQ JSONL.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub examples: PathBuf,
    #[arg(long)]
    pub pairs: PathBuf,
    /// Seeded sample of examples for manual checking.
    #[arg(long)]
    pub spot_check: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "medqa-train")]
    pub source: SourceArg,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateMcqArgs {
    /// MCQ JSONL with answer keys.
    #[arg(long)]
    pub gold: PathBuf,
    /// JSONL of `{"item_id", "letter"}` records.
    #[arg(long, required_unless_present = "strategy", conflicts_with = "strategy")]
    pub predictions: Option<PathBuf>,
    /// Answer every gold item with this MCQ strategy through the backend.
    #[arg(long)]
    pub strategy: Option<PromptStrategy>,
    /// Where to write predictions from a live run.
    #[arg(long, requires = "strategy")]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct ExportReviewArgs {
    /// Open-ended JSONL supplying the questions.
    #[arg(long)]
    pub questions: PathBuf,
    /// `NAME=results.jsonl`, or a bare path to use the method recorded in the results.
    #[arg(long = "responses", required = true)]
    pub responses: Vec<String>,
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub key: PathBuf,
    /// Overrides review.shuffle_seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ServeReviewArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Append-only ratings JSONL.
    #[arg(long)]
    pub ratings: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8787")]
    pub addr: SocketAddr,
}

#[derive(Debug, Args)]
pub struct ImportRatingsArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Reject ratings for slots the bundle does not contain.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    #[arg(long = "ratings", required = true)]
    pub ratings: Vec<PathBuf>,
    #[arg(long)]
    pub key: PathBuf,
    /// JSON summary file.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    #[arg(long)]
    pub dir: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub items: usize,
    /// Distinct forward answers scripted per open item.
    #[arg(long, default_value_t = 12)]
    pub distinct: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

/// Process boundary: output streams and environment lookup.
pub struct Io<'a> {
    pub out: &'a mut dyn Write,
    pub err: &'a mut dyn Write,
    pub env: &'a dyn Fn(&str) -> Option<String>,
}

/// Parses `args` (program name first) and runs the command; returns the
/// exit status.
pub fn run_with<I, T>(args: I, io: &mut Io<'_>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { ExitClass::Usage as i32 } else { 0 };
            let rendered = e.render().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { io.err } else { io.out };
            let _ = sink.write_all(rendered.as_bytes());
            return code;
        }
    };
    match commands::dispatch(cli, io) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(io.err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn run() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    let env = |k: &str| std::env::var(k).ok();
    let mut io = Io { out: &mut stdout.lock(), err: &mut stderr.lock(), env: &env };
    run_with(std::env::args_os(), &mut io)
}
