//! Open-ended medical question answering with clinical-reasoning prompts.
//!
//! The crate covers the whole offline side of the workflow:
//!
//! * [`corpus`] loads MedQA-style multiple-choice records and rewrites them as
//!   open-ended questions.
//! * [`prompting`] renders the four few-shot strategies and pulls answers back
//!   out of completions.
//! * [`backend`] talks to completion models (OpenAI-compatible HTTP or a
//!   scripted mock) and scores completions by mean token log-probability.
//! * [`pipeline`] is the forward-backward procedure: sample candidate answers,
//!   deduplicate, keep the most likely ones as a synthetic MCQ slate, then pick
//!   one by MCQ elimination or a reward-model verifier.
//! * [`verifier`] builds reward-model training data and scores options.
//! * [`evaluation`] computes MCQ accuracy, Likert summaries, agreement, and
//!   produces blinded review bundles.

pub mod backend;
pub mod corpus;
pub mod evaluation;
pub mod fixtures;
pub mod pipeline;
pub mod prompting;
pub mod provenance;
pub mod seed;
pub mod verifier;

pub use corpus::{Letter, McqItem, OpenItem};
