//! Provenance record written next to every set of outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const FILE_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    /// Resolved configuration per subcommand that wrote into the directory.
    pub commands: BTreeMap<String, serde_json::Value>,
    /// SHA-256 of every output file, keyed by file name.
    pub files: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Manifest {
    /// Loads the manifest in `dir`, or starts an empty one.
    pub fn load_or_new(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(FILE_NAME);
        if !path.exists() {
            return Ok(Manifest {
                version: env!("CARGO_PKG_VERSION").to_string(),
                commands: BTreeMap::new(),
                files: BTreeMap::new(),
            });
        }
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let mut m: Manifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        m.version = env!("CARGO_PKG_VERSION").to_string();
        Ok(m)
    }

    pub fn record(&mut self, name: &str, bytes: &[u8]) {
        self.files.insert(name.to_string(), sha256_hex(bytes));
    }

    pub fn save(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(FILE_NAME);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }

    /// Names of listed files whose current contents do not match the recorded
    /// checksum, including missing files.
    pub fn verify(&self, dir: &Path) -> Vec<String> {
        self.files
            .iter()
            .filter(|(name, sum)| match fs::read(dir.join(name)) {
                Ok(bytes) => sha256_hex(&bytes) != **sum,
                Err(_) => true,
            })
            .map(|(name, _)| name.clone())
            .collect()
    }
}
