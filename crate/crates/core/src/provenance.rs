//! Provenance header written into every output file.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::is_meta_line;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputMeta {
    pub tool: String,
    pub version: String,
    /// SHA-256 of the effective configuration.
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
}

impl OutputMeta {
    pub fn new(config_hash: impl Into<String>, seeds: impl IntoIterator<Item = (&'static str, u64)>) -> Self {
        OutputMeta {
            tool: "clinreason".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash.into(),
            seeds: seeds.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }

    /// `{"_meta": {...}}` plus a newline, the first line of a JSONL output.
    pub fn to_line(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            _meta: &'a OutputMeta,
        }
        serde_json::to_string(&Line { _meta: self }).expect("meta serializes") + "\n"
    }

    /// Reads the header from the first non-blank line of `text`, if any.
    pub fn from_jsonl(text: &str) -> Option<OutputMeta> {
        #[derive(Deserialize)]
        struct Line {
            _meta: OutputMeta,
        }
        let first = text.lines().find(|l| !l.trim().is_empty())?;
        if !is_meta_line(first) {
            return None;
        }
        serde_json::from_str::<Line>(first).ok().map(|l| l._meta)
    }
}
