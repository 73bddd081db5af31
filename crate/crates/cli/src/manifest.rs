//! Run manifests: the command line, the effective configuration and its
//! hash, enough to repeat a run exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{CliError, CliResult};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Arguments after the program name.
    pub argv: Vec<String>,
    /// Directory relative paths in `argv` refer to.
    pub cwd: Option<String>,
    pub master_seed: Option<u64>,
    pub n_sims: Option<usize>,
    pub horizon: Option<u64>,
    pub workers: Option<usize>,
    /// Effective network config after command-line overrides.
    pub config: Option<serde_json::Value>,
    /// SHA-256 of the canonical JSON of `config` and any spectral data.
    pub config_hash: Option<String>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, argv: &[String]) -> Self {
        Self {
            tool: "urnnet".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            argv: argv.to_vec(),
            cwd: std::env::current_dir().ok().map(|d| d.display().to_string()),
            master_seed: None,
            n_sims: None,
            horizon: None,
            workers: None,
            config: None,
            config_hash: None,
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let path = dir.join(format!("{}.manifest.json", self.command));
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Core(urnnet::Error::Parse(e.to_string())))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
