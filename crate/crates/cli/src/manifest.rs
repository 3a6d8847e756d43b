use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Record of one run: enough to re-run it and to check that its inputs did
/// not change in between.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub corpora: Vec<CorpusRef>,
    pub model: Option<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusRef {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
    pub sentences: usize,
}

pub fn version() -> String {
    format!("brm {}", env!("CARGO_PKG_VERSION"))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        RunManifest {
            version: version(),
            command: command.to_string(),
            config,
            seeds: Vec::new(),
            corpora: Vec::new(),
            model: None,
            outputs: Vec::new(),
        }
    }

    pub fn add_corpus(&mut self, role: &str, path: &Path, sentences: usize) -> Result<()> {
        self.corpora.push(CorpusRef {
            role: role.to_string(),
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
            sentences,
        });
        Ok(())
    }

    pub fn corpus(&self, role: &str) -> Option<&CorpusRef> {
        self.corpora.iter().find(|c| c.role == role)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }
}

/// Sidecar manifest path of an output file: `out.conllu` -> `out.conllu.manifest.json`.
pub fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}
