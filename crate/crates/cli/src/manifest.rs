use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one run: enough to repeat it and to check that the inputs are
/// unchanged.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: &'static str,
    pub version: &'static str,
    pub config: serde_json::Value,
    /// Input path to lowercase hex SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub duration_seconds: f64,
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, serde_json::Value>,
    #[serde(skip)]
    started: Option<Instant>,
}

impl RunManifest {
    pub fn start(command: &'static str, config: &impl Serialize, seed: Option<u64>) -> CliResult<Self> {
        let config = serde_json::to_value(config).map_err(|e| CliError::Input(e.to_string()))?;
        Ok(RunManifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config,
            inputs: BTreeMap::new(),
            seed,
            duration_seconds: 0.0,
            outputs: Vec::new(),
            details: BTreeMap::new(),
            started: Some(Instant::now()),
        })
    }

    /// Reads an input file as UTF-8 and records its digest.
    pub fn read_input(&mut self, path: &Path) -> CliResult<String> {
        let bytes = fs::read(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
        self.inputs.insert(path.display().to_string(), hex::encode(Sha256::digest(&bytes)));
        String::from_utf8(bytes).map_err(|_| CliError::Input(format!("{} is not valid UTF-8", path.display())))
    }

    pub fn detail(&mut self, key: &str, value: &impl Serialize) -> CliResult<()> {
        let v = serde_json::to_value(value).map_err(|e| CliError::Numerical(e.to_string()))?;
        self.details.insert(key.to_string(), v);
        Ok(())
    }

    /// Writes `name` into `dir` and lists it among the outputs.
    pub fn write_output(&mut self, dir: &Path, name: &str, body: &str) -> CliResult<()> {
        let path = dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
        }
        fs::write(&path, body).map_err(|e| io_error(&path, e))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    /// Stamps the duration and writes `manifest.json` via a temporary file
    /// and a rename, so a reader never sees a partial manifest.
    pub fn finish(mut self, dir: &Path) -> CliResult<()> {
        if let Some(t) = self.started {
            self.duration_seconds = t.elapsed().as_secs_f64();
        }
        let body = serde_json::to_string_pretty(&self).map_err(|e| CliError::Numerical(e.to_string()))?;
        let tmp = dir.join(format!(".{MANIFEST_FILE}.tmp"));
        fs::write(&tmp, body + "\n").map_err(|e| io_error(&tmp, e))?;
        let target = dir.join(MANIFEST_FILE);
        fs::rename(&tmp, &target).map_err(|e| io_error(&target, e))
    }
}

pub fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}
