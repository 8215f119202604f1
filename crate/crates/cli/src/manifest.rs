//! Stage bookkeeping: every file a stage reads or writes goes through a
//! [`Recorder`], which hashes it and lists it in the stage manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mrnr::{io, Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

/// Provenance record of one stage run. Contains no timestamps, so identical
/// runs give identical manifests.
#[derive(Debug, Serialize)]
pub struct StageManifest<'a> {
    pub stage: &'a str,
    pub version: &'a str,
    pub config: &'a PipelineConfig,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
}

pub struct Recorder {
    stage: &'static str,
    roots: Vec<(String, PathBuf)>,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl Recorder {
    /// Paths under one of `roots` are recorded as `<label>/<relative path>`.
    pub fn new(stage: &'static str, roots: Vec<(String, PathBuf)>) -> Self {
        Recorder {
            stage,
            roots,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    fn label(&self, path: &Path) -> String {
        for (name, root) in &self.roots {
            if let Ok(rel) = path.strip_prefix(root) {
                let rel: Vec<_> = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect();
                return format!("{name}/{}", rel.join("/"));
            }
        }
        path.display().to_string()
    }

    pub fn read(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = io::read_bytes(path)?;
        self.inputs.insert(self.label(path), sha256_hex(&bytes));
        Ok(bytes)
    }

    pub fn read_string(&mut self, path: &Path) -> Result<String> {
        String::from_utf8(self.read(path)?)
            .map_err(|_| Error::Format { field: path.display().to_string(), message: "not UTF-8 text".into() })
    }

    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        io::write_atomic(path, bytes)?;
        self.outputs.insert(self.label(path), sha256_hex(bytes));
        Ok(())
    }

    /// Writes `<manifest_dir>/<stage>.json`.
    pub fn finish(self, config: &PipelineConfig, manifest_dir: &Path) -> Result<()> {
        let entries = |m: BTreeMap<String, String>| {
            m.into_iter()
                .map(|(path, sha256)| FileEntry { path, sha256 })
                .collect()
        };
        let manifest = StageManifest {
            stage: self.stage,
            version: mrnr::VERSION,
            config,
            inputs: entries(self.inputs),
            outputs: entries(self.outputs),
        };
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::Pipeline(format!("cannot serialize manifest: {e}")))?;
        io::write_atomic(&manifest_dir.join(format!("{}.json", self.stage)), (text + "\n").as_bytes())
    }
}
