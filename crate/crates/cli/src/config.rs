//! Settings file. Flags win over environment variables, which win over the file.

use std::path::{Path, PathBuf};

use lvd_core::llm::LlmConfig;
use serde::Deserialize;

use crate::Failure;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub backend: Option<String>,
    pub replay_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub llm: LlmConfig,
}

pub const DEFAULT_CONFIG: &str = "lvd.toml";

/// Reads `path` if given, else `./lvd.toml` when present.
pub fn load(path: Option<&Path>) -> Result<FileConfig, Failure> {
    let path = match path {
        Some(p) => p.to_path_buf(),
        None if Path::new(DEFAULT_CONFIG).exists() => PathBuf::from(DEFAULT_CONFIG),
        None => return Ok(FileConfig::default()),
    };
    let text = std::fs::read_to_string(&path).map_err(|e| Failure::io(&path, e))?;
    toml::from_str(&text).map_err(|e| Failure::new(1, "config", format!("{}: {e}", path.display())))
}
