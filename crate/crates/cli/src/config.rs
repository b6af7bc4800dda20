//! Run configuration: one TOML file plus environment overrides.

use std::path::{Path, PathBuf};
use std::time::Duration;

use clinreason_core::backend::{BackendConfig, BackendKind, RetryPolicy, SamplingParams};
use clinreason_core::pipeline::PipelineConfig;
use clinreason_core::provenance::OutputMeta;
use clinreason_core::seed::sha256_hex;
use clinreason_core::verifier::reasoning_params;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const ENV_BASE_URL: &str = "CLINREASON_BASE_URL";
pub const ENV_MODEL: &str = "CLINREASON_MODEL";
pub const ENV_VERIFIER_URL: &str = "CLINREASON_VERIFIER_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifierConfig {
    /// Base URL of the `/score` service.
    pub url: Option<String>,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        VerifierConfig { url: None, timeout_secs: 60, max_in_flight: 4, retry: RetryPolicy::default() }
    }
}

impl VerifierConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReviewConfig {
    pub shuffle_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpotCheckConfig {
    pub per_label: usize,
    pub seed: u64,
}

impl Default for SpotCheckConfig {
    fn default() -> Self {
        SpotCheckConfig { per_label: 50, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub backend: BackendConfig,
    pub pipeline: PipelineConfig,
    /// Decoding for verifier reasoning generation.
    pub reasoning: SamplingParams,
    pub verifier: VerifierConfig,
    pub review: ReviewConfig,
    pub spot_check: SpotCheckConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            backend: BackendConfig::default(),
            pipeline: PipelineConfig::default(),
            reasoning: reasoning_params(),
            verifier: VerifierConfig::default(),
            review: ReviewConfig::default(),
            spot_check: SpotCheckConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads `path` (defaults when `None`), applies overrides from `env`,
    /// resolves relative paths against the file's directory and validates.
    pub fn load(path: Option<&Path>, env: impl Fn(&str) -> Option<String>) -> Result<Self, CliError> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                let mut c = Self::from_toml(&text).map_err(|e| e.context(p.display()))?;
                let base = p.parent().unwrap_or(Path::new(""));
                if let Some(script) = &c.backend.mock_script {
                    if script.is_relative() {
                        c.backend.mock_script = Some(base.join(script));
                    }
                }
                c
            }
            None => RunConfig::default(),
        };
        config.apply_env(env);
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::data(format!("config: {}", e.message())))
    }

    pub fn apply_env(&mut self, env: impl Fn(&str) -> Option<String>) {
        if let Some(url) = env(ENV_BASE_URL).filter(|v| !v.is_empty()) {
            self.backend.base_url = Some(url);
            self.backend.kind = BackendKind::Http;
        }
        if let Some(model) = env(ENV_MODEL).filter(|v| !v.is_empty()) {
            self.backend.model_name = model;
        }
        if let Some(url) = env(ENV_VERIFIER_URL).filter(|v| !v.is_empty()) {
            self.verifier.url = Some(url);
        }
    }

    /// Checks values and that referenced files exist. A mock backend without
    /// a script is allowed here; commands that need a backend fail later.
    pub fn validate(&self) -> Result<(), CliError> {
        self.pipeline.validate()?;
        self.reasoning.validate()?;
        if let Some(script) = &self.backend.mock_script {
            if !script.is_file() {
                return Err(CliError::data(format!("backend.mock_script {} does not exist", script.display())));
            }
        }
        if self.verifier.max_in_flight == 0 {
            return Err(CliError::data("verifier.max_in_flight must be positive"));
        }
        Ok(())
    }

    /// SHA-256 over the effective configuration. The mock script enters by
    /// content so the hash does not depend on where fixtures live.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        if let Some(script) = &self.backend.mock_script {
            let digest = std::fs::read(script).map(sha256_hex).unwrap_or_default();
            canonical.backend.mock_script = Some(PathBuf::from(format!("sha256:{digest}")));
        }
        sha256_hex(serde_json::to_vec(&canonical).expect("config serializes"))
    }

    pub fn meta(&self, seeds: impl IntoIterator<Item = (&'static str, u64)>) -> OutputMeta {
        OutputMeta::new(self.hash(), seeds)
    }

    pub fn pipeline_seeds(&self) -> [(&'static str, u64); 3] {
        [
            ("sample_seed", self.pipeline.sample_seed),
            ("permutation_seed", self.pipeline.permutation_seed),
            ("backward_seed", self.pipeline.backward_seed),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let c = RunConfig::from_toml("[pipeline]\ntau = 0.5\nk = 3\n[backend]\nmodel_name = \"m\"\n").unwrap();
        assert_eq!(c.pipeline.tau, 0.5);
        assert_eq!(c.pipeline.k, 3);
        assert_eq!(c.pipeline.target_unique, 10);
        assert_eq!(c.backend.model_name, "m");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("[pipeline]\ntua = 0.5\n").is_err());
        assert!(RunConfig::from_toml("[pipelin]\n").is_err());
    }

    #[test]
    fn env_overrides_apply() {
        let mut c = RunConfig::default();
        c.apply_env(|k| match k {
            ENV_BASE_URL => Some("http://h:1/v1".into()),
            ENV_MODEL => Some("llama-2-70b-chat".into()),
            ENV_VERIFIER_URL => Some("http://v:2".into()),
            _ => None,
        });
        assert_eq!(c.backend.kind, BackendKind::Http);
        assert_eq!(c.backend.base_url.as_deref(), Some("http://h:1/v1"));
        assert_eq!(c.backend.model_name, "llama-2-70b-chat");
        assert_eq!(c.verifier.url.as_deref(), Some("http://v:2"));
    }

    #[test]
    fn missing_mock_script_fails_at_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[backend]\nkind = \"mock\"\nmock_script = \"nope.json\"\n").unwrap();
        let err = RunConfig::load(Some(&path), |_| None).unwrap_err();
        assert!(err.message.contains("nope.json"), "{}", err.message);
    }

    #[test]
    fn hash_ignores_fixture_location() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for d in [&a, &b] {
            std::fs::write(d.path().join("mock.json"), "{}").unwrap();
            std::fs::write(d.path().join("c.toml"), "[backend]\nmock_script = \"mock.json\"\n").unwrap();
        }
        let ca = RunConfig::load(Some(&a.path().join("c.toml")), |_| None).unwrap();
        let cb = RunConfig::load(Some(&b.path().join("c.toml")), |_| None).unwrap();
        assert_ne!(ca.backend.mock_script, cb.backend.mock_script);
        assert_eq!(ca.hash(), cb.hash());
        let mut cc = ca.clone();
        cc.pipeline.tau = 0.5;
        assert_ne!(cc.hash(), ca.hash());
    }
}
