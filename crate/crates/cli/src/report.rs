use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use qrnnt::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Machine-readable record of one command run. Reruns with the same seed and
/// inputs differ only in `timestamp`.
#[derive(Debug, Serialize)]
pub struct RunReport {
    pub command: String,
    pub seed: Option<u64>,
    /// sha256 of every input by role.
    pub digests: BTreeMap<String, String>,
    pub outputs: serde_json::Value,
    pub timestamp: u64,
}

impl RunReport {
    pub fn new(command: &str, seed: Option<u64>) -> Self {
        Self {
            command: command.to_string(),
            seed,
            digests: BTreeMap::new(),
            outputs: serde_json::Value::Null,
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        }
    }

    pub fn digest_bytes(&mut self, role: &str, bytes: &[u8]) {
        self.digests.insert(role.to_string(), sha256_hex(bytes));
    }

    pub fn digest_file(&mut self, role: &str, path: &Path) -> Result<()> {
        let bytes = read(path)?;
        self.digest_bytes(role, &bytes);
        Ok(())
    }

    pub fn set_outputs(&mut self, outputs: impl Serialize) -> Result<()> {
        self.outputs = serde_json::to_value(outputs).map_err(|e| Error::Serde(e.to_string()))?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| io_error(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| io_error(path, e))
}

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}
