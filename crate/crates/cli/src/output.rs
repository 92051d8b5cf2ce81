//! Atomic file output and the provenance header carried by every CSV.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::error::{CliError, Result};

/// Writes through a temporary file in the target directory, then renames.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(path, e))?;
    tmp.write_all(bytes).and_then(|_| tmp.as_file().sync_all()).map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

/// Effective settings of one run, in key order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EffectiveConfig(pub BTreeMap<String, String>);

impl EffectiveConfig {
    pub fn insert(&mut self, key: &str, value: impl ToString) {
        self.0.insert(key.to_string(), value.to_string());
    }

    pub fn canonical(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// CRC-32 of the canonical `key=value` listing, as 8 hex digits.
    pub fn hash(&self) -> String {
        format!("{:08x}", crc32fast::hash(self.canonical().as_bytes()))
    }

    pub fn seed(&self) -> &str {
        self.0.get("seed").map_or("none", String::as_str)
    }

    /// Header lines without the leading `# `.
    pub fn provenance(&self) -> Vec<String> {
        let mut lines = vec![
            format!("crc {}", env!("CARGO_PKG_VERSION")),
            format!("seed={}", self.seed()),
            format!("config_hash={}", self.hash()),
        ];
        lines.extend(self.0.iter().map(|(k, v)| format!("config {k}={v}")));
        lines
    }
}

pub fn comment_block(lines: &[String]) -> String {
    lines.iter().map(|l| format!("# {l}\n")).collect()
}
