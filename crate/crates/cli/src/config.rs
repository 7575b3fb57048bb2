//! Optional TOML defaults. Keys mirror the long flag names; flags win.

use std::path::Path;

use anyhow::{Context, Result};
use serde::Deserialize;

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub preset: Option<String>,
    pub quality: Option<u32>,
    pub block: Option<usize>,
    pub chroma: Option<bool>,
    pub seed: Option<u64>,
    pub temperature: Option<f64>,
    pub max_len: Option<usize>,
    pub alpha: Option<f64>,
    pub chunk: Option<usize>,
    pub stride: Option<usize>,
    pub threads: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}
