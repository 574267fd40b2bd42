//! Output directory bookkeeping and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thermalab_core::export::Table;

use crate::RunError;

pub const MANIFEST: &str = "manifest.json";
pub const FAILED_MARKER: &str = "FAILED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub experiment: String,
    pub config_file: String,
    pub config_sha256: String,
    pub seed: u64,
    pub started_unix: u64,
    pub wall_time_s: f64,
    pub blas_coretype: Option<String>,
    pub status: String,
    pub outputs: Vec<OutputFile>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self, RunError> {
        let p = dir.join(MANIFEST);
        let src = fs::read_to_string(&p).map_err(|_| RunError::Missing(vec![p.display().to_string()]))?;
        serde_json::from_str(&src).map_err(|e| RunError::Output(format!("{}: {e}", p.display())))
    }

    pub fn output(&self, name: &str) -> Option<&OutputFile> {
        self.outputs.iter().find(|o| o.path == name)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> std::io::Result<(String, u64)> {
    let bytes = fs::read(path)?;
    Ok((sha256_hex(&bytes), bytes.len() as u64))
}

/// Every file written for a run goes through here so the manifest can
/// list it.
pub struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self, RunError> {
        fs::create_dir_all(dir)?;
        for stale in [MANIFEST, FAILED_MARKER] {
            let p = dir.join(stale);
            if p.exists() {
                fs::remove_file(p)?;
            }
        }
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn record(&mut self, name: &str) {
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
    }

    pub fn table(&mut self, name: &str, table: &Table) -> Result<(), RunError> {
        table.write(&self.dir.join(name))?;
        self.record(name);
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), RunError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| RunError::Output(e.to_string()))?;
        text.push('\n');
        fs::write(self.dir.join(name), text)?;
        self.record(name);
        Ok(())
    }

    pub fn files(&self) -> Result<Vec<OutputFile>, RunError> {
        self.written
            .iter()
            .map(|name| {
                let (sha256, bytes) = file_digest(&self.dir.join(name))?;
                Ok(OutputFile { path: name.clone(), sha256, bytes })
            })
            .collect()
    }
}
