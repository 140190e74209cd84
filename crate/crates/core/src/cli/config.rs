//! Layered configuration: defaults, then a TOML file, then
//! `PROMPTSEARCH_*` environment variables, then command-line flags.
//!
//! ```toml
//! backend = "mock"            # or "http"
//! templates_dir = "my/templates"
//! catalog = "my/patterns.toml"
//!
//! [pipeline]                  # search hyperparameters
//! n_candidates = 20
//! k_clusters = 5
//! max_iterations = 10
//! m_samples = 3
//! score_target = 5.0
//! patience = 3
//! seed = 0
//!
//! [chat]                      # also [t2i] and [embed]
//! base_url = "https://api.example.com/v1"
//! api_key_env = "OPENAI_API_KEY"
//! model_name = "some-vision-model"
//!
//! [t2i.endpoint]              # optional custom image endpoint
//! style = "template"
//! url = "https://images.example.com/generate"
//! body = { size = "1024x1024" }
//! prompt_field = "input.prompt"
//! seed_field = "input.seed"
//! response_path = "images.0"
//!
//! [mock]                      # synthetic environment for --backend mock
//! susceptibility = 0.5
//! clutter = 0.05
//! ```
//!
//! An environment variable `PROMPTSEARCH_<SECTION>__<FIELD>` sets
//! `[section] field`; `PROMPTSEARCH_<FIELD>` sets a top-level field.
//! Values parse as TOML scalars and fall back to strings.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backends::http::ImageEndpoint;
use crate::backends::BackendConfig;
use crate::optimizer::RunConfig;

pub const ENV_PREFIX: &str = "PROMPTSEARCH_";
pub const REDACTED: &str = "[redacted]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImageSection {
    #[serde(flatten)]
    pub backend: BackendConfig,
    pub endpoint: ImageEndpoint,
}

impl Default for ImageSection {
    fn default() -> Self {
        Self { backend: BackendConfig::default(), endpoint: ImageEndpoint::OpenAi }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockSection {
    /// Corruption susceptibility of every aspect.
    pub susceptibility: f64,
    pub clutter: f64,
}

impl Default for MockSection {
    fn default() -> Self {
        Self { susceptibility: 0.5, clutter: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub backend: BackendKind,
    pub templates_dir: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub pipeline: RunConfig,
    pub chat: BackendConfig,
    pub t2i: ImageSection,
    pub embed: BackendConfig,
    pub mock: MockSection,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Mock,
            templates_dir: None,
            catalog: None,
            pipeline: RunConfig::default(),
            chat: BackendConfig::default(),
            t2i: ImageSection::default(),
            embed: BackendConfig::default(),
            mock: MockSection::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

fn scalar(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Apply `PROMPTSEARCH_*` overrides from `vars` onto a config table.
pub fn apply_env<I>(table: &mut toml::Table, vars: I)
where
    I: IntoIterator<Item = (String, String)>,
{
    for (key, value) in vars {
        let Some(rest) = key.strip_prefix(ENV_PREFIX) else { continue };
        let path: Vec<String> = rest.split("__").map(str::to_lowercase).collect();
        let (last, parents) = path.split_last().expect("split yields one item");
        let mut cur = &mut *table;
        for p in parents {
            if !cur.get(p).is_some_and(toml::Value::is_table) {
                cur.insert(p.clone(), toml::Value::Table(toml::Table::new()));
            }
            cur = cur.get_mut(p).and_then(toml::Value::as_table_mut).expect("inserted above");
        }
        cur.insert(last.clone(), scalar(&value));
    }
}

/// Defaults, overlaid by the file at `path` (when given), then by
/// environment variables from `vars`.
pub fn load_config<I>(path: Option<&Path>, vars: I) -> Result<CliConfig, ConfigError>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut table = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|source| ConfigError::Io { path: p.to_path_buf(), source })?;
            toml::from_str::<toml::Table>(&text).map_err(|e| ConfigError::Invalid(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    apply_env(&mut table, vars);
    let config: CliConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| ConfigError::Invalid(e.to_string()))?;
    config.pipeline.validate().map_err(ConfigError::Invalid)?;
    for b in [&config.chat, &config.t2i.backend, &config.embed] {
        b.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    }
    if !(0.0..=1.0).contains(&config.mock.susceptibility) || !(0.0..=1.0).contains(&config.mock.clutter) {
        return Err(ConfigError::Invalid("mock susceptibilities must lie in [0, 1]".into()));
    }
    Ok(config)
}

fn is_secret_key(key: &str) -> bool {
    let k = key.to_ascii_lowercase();
    if k.ends_with("_env") {
        return false;
    }
    ["key", "token", "secret", "password", "authorization", "credential"].iter().any(|s| k.contains(s))
}

/// Replace secret-looking fields and any of the `secrets` values anywhere
/// in `value`.
pub fn redact(value: &mut Value, secrets: &[String]) {
    match value {
        Value::Object(map) => {
            for (k, v) in map.iter_mut() {
                if is_secret_key(k) && !v.is_null() {
                    *v = Value::String(REDACTED.into());
                } else {
                    redact(v, secrets);
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(|v| redact(v, secrets)),
        Value::String(s) => {
            for secret in secrets.iter().filter(|s| !s.is_empty()) {
                if s.contains(secret.as_str()) {
                    *s = s.replace(secret.as_str(), REDACTED);
                }
            }
        }
        _ => {}
    }
}

impl CliConfig {
    /// Values of the environment variables that hold API keys.
    pub fn secret_values(&self) -> Vec<String> {
        [&self.chat, &self.t2i.backend, &self.embed]
            .iter()
            .filter_map(|b| std::env::var(&b.api_key_env).ok())
            .filter(|v| !v.is_empty())
            .collect()
    }

    /// The configuration as JSON with secrets removed.
    pub fn snapshot(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        redact(&mut v, &self.secret_values());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vars(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_match_the_pipeline_defaults() {
        let c = load_config(None, vars(&[])).unwrap();
        assert_eq!(c.pipeline, RunConfig::default());
        assert_eq!(c.backend, BackendKind::Mock);
    }

    #[test]
    fn env_overrides_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "backend = \"http\"\n[pipeline]\nseed = 3\nn_candidates = 8\n[chat]\nmodel_name = \"m1\"\n").unwrap();
        let c = load_config(
            Some(&path),
            vars(&[
                ("PROMPTSEARCH_PIPELINE__SEED", "9"),
                ("PROMPTSEARCH_CHAT__MODEL_NAME", "m2"),
                ("PROMPTSEARCH_BACKEND", "mock"),
                ("OTHER", "x"),
            ]),
        )
        .unwrap();
        assert_eq!(c.pipeline.seed, 9);
        assert_eq!(c.pipeline.n_candidates, 8);
        assert_eq!(c.chat.model_name, "m2");
        assert_eq!(c.backend, BackendKind::Mock);
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(load_config(None, vars(&[("PROMPTSEARCH_PIPELINE__K_CLUSTERS", "0")])).is_err());
        assert!(load_config(None, vars(&[("PROMPTSEARCH_PIPELINE__BOGUS", "1")])).is_err());
        assert!(load_config(Some(Path::new("/nonexistent/c.toml")), vars(&[])).is_err());
    }

    #[test]
    fn redaction_covers_keys_and_values() {
        let mut v = serde_json::json!({
            "api_key_env": "MY_KEY",
            "body": {"api_key": "sk-1", "note": "uses sk-2 inline"},
            "list": ["Bearer sk-2"],
        });
        redact(&mut v, &["sk-2".to_string()]);
        let text = v.to_string();
        assert!(!text.contains("sk-1") && !text.contains("sk-2"));
        assert!(text.contains("MY_KEY"));
    }
}
