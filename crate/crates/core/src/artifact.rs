//! Provenance metadata shared by every file the harness writes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Provenance {
    pub command: String,
    pub args: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Input path → hex SHA-256 of its bytes.
    pub input_hashes: BTreeMap<String, String>,
    pub tool_version: String,
}

impl Provenance {
    pub fn new(command: impl Into<String>, args: Vec<String>, seed: Option<u64>) -> Self {
        Self {
            command: command.into(),
            args,
            seed,
            input_hashes: BTreeMap::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn add_input(&mut self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let path = path.as_ref();
        let digest = file_sha256(path)?;
        self.input_hashes.insert(path.display().to_string(), digest);
        Ok(())
    }
}

pub fn file_sha256(path: impl AsRef<Path>) -> std::io::Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
