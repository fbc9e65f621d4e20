//! Output directories: atomic artifact writes, tracked file list, and a
//! manifest written last to mark the run complete.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use rdsteer::io::write_atomic;
use rdsteer::{Error, Result};

pub const MANIFEST: &str = "manifest.json";
pub const ARTIFACT_VERSION: &str = "rdsteer-run/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifact_version: String,
    pub tool_version: String,
    pub subcommand: String,
    pub config: Value,
    pub checkpoint_hash: Option<String>,
    pub wall_clock_seconds: f64,
    pub files: Vec<FileEntry>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Git-style object hash: SHA-256 over `"blob <len>\0"` followed by the content.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex(&h.finalize())
}

pub fn is_complete(dir: &Path) -> bool {
    dir.join(MANIFEST).is_file()
}

#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    files: Vec<String>,
    started: Instant,
}

impl RunDir {
    /// Creates the directory and withdraws any previous manifest, so that an
    /// interrupted run is recognisable as incomplete.
    pub fn open(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let m = root.join(MANIFEST);
        if m.exists() {
            fs::remove_file(&m).map_err(|e| Error::io(&m, e))?;
        }
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Tracks files written by other helpers (paths inside the root).
    pub fn track(&mut self, paths: &[PathBuf]) {
        for p in paths {
            let rel = p
                .strip_prefix(&self.root)
                .unwrap_or(p)
                .to_string_lossy()
                .replace('\\', "/");
            if !self.files.contains(&rel) {
                self.files.push(rel);
            }
        }
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let p = self.path(name);
        write_atomic(&p, bytes)?;
        self.track(std::slice::from_ref(&p));
        Ok(p)
    }

    pub fn finish(
        self,
        subcommand: &str,
        config: Value,
        checkpoint: Option<&Path>,
    ) -> Result<Manifest> {
        let mut files = Vec::with_capacity(self.files.len());
        let mut names = self.files.clone();
        names.sort();
        for name in names {
            let p = self.root.join(&name);
            let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            files.push(FileEntry {
                path: name,
                bytes: bytes.len() as u64,
                sha256: sha256_hex(&bytes),
            });
        }
        let checkpoint_hash = match checkpoint {
            Some(p) => Some(blob_hash(&fs::read(p).map_err(|e| Error::io(p, e))?)),
            None => None,
        };
        let manifest = Manifest {
            artifact_version: ARTIFACT_VERSION.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: subcommand.to_string(),
            config,
            checkpoint_hash,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            files,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        write_atomic(&self.root.join(MANIFEST), text.as_bytes())?;
        Ok(manifest)
    }
}
