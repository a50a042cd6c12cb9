//! Optional TOML configuration. Flags and environment variables (resolved by
//! clap) win over the file; the file wins over built-in defaults.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub compare: CompareSection,
    pub table: TableSection,
    pub select: SelectSection,
    pub study: StudySection,
    pub qc: QcSection,
    pub api: ApiSection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    pub alpha: Option<f64>,
    pub min_count_a: Option<u64>,
    pub yates: Option<bool>,
    pub exclude_punct: Option<bool>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TableSection {
    pub permissive: Option<bool>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectSection {
    pub k: Option<usize>,
    pub length_tol: Option<usize>,
    pub min_words: Option<usize>,
    pub max_words: Option<usize>,
    pub mode: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySection {
    pub critical_per_session: Option<usize>,
    pub char_length: Option<String>,
    pub admin_token: Option<String>,
    pub static_dir: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QcSection {
    pub min_items: Option<usize>,
    pub speed_factor: Option<f64>,
    pub fast_trial_limit: Option<usize>,
    pub gotcha_rule: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApiSection {
    pub base_url: Option<String>,
    pub api_key: Option<String>,
    pub path: Option<String>,
    pub rate_per_second: Option<f64>,
    pub attempts: Option<u32>,
    pub backoff_ms: Option<u64>,
    pub timeout_secs: Option<u64>,
    pub models: BTreeMap<String, String>,
    pub params: BTreeMap<String, serde_json::Value>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: FileConfig =
            toml::from_str(&text).map_err(|e| lexdrift_core::Error::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }
}

/// First present value wins.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}
