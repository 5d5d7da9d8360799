use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::scenedata::{split_file_name, Split, CONFIG_FILE};

/// Per-command record of what ran, on which inputs, and what it wrote.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    /// Resolved configuration as `key=value` lines.
    pub config: Vec<String>,
    pub seed: u64,
    pub corpus_sha256: String,
    pub checkpoint: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub wall_clock_secs: f64,
}

impl RunManifest {
    pub fn new(
        command: &str,
        config_kv: String,
        seed: u64,
        corpus_sha256: String,
        checkpoint: Option<PathBuf>,
        metrics: Option<PathBuf>,
        start: Instant,
    ) -> Self {
        Self {
            command: command.to_string(),
            config: config_kv.lines().map(str::to_string).collect(),
            seed,
            corpus_sha256,
            checkpoint,
            metrics,
            wall_clock_secs: start.elapsed().as_secs_f64(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest fields serialize") + "\n"
    }
}

/// SHA-256 over the config echo and the three split files, in that order.
pub fn corpus_hash(dir: &Path) -> Result<String> {
    let mut h = Sha256::new();
    let mut names = vec![CONFIG_FILE.to_string()];
    names.extend(Split::ALL.iter().map(|&s| split_file_name(s)));
    for name in names {
        h.update(name.as_bytes());
        h.update([0]);
        h.update(std::fs::read(dir.join(&name))?);
    }
    Ok(hex::encode(h.finalize()))
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
