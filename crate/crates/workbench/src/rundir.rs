//! Run directory layout and the manifest written when a command finishes.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex, ExperimentConfig};
use crate::error::{Error, Result};

pub const SNAPSHOT: &str = "config.snapshot";
pub const MANIFEST: &str = "manifest";
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub artifact_version: String,
    pub seed: u64,
    pub timings: Vec<StageTiming>,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        toml::from_str(&text)
            .map_err(|e| Error::Runtime(format!("bad manifest {}: {e}", path.display())))
    }
}

/// Writes through a temporary sibling and a rename, so readers never see
/// a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// An output directory being filled by one command.
pub struct RunDir {
    root: PathBuf,
    config_hash: String,
    seed: u64,
    timings: Vec<StageTiming>,
}

impl RunDir {
    /// Creates `root` and writes the configuration snapshot.
    pub fn create(root: &Path, cfg: &ExperimentConfig) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let rd = Self {
            root: root.to_path_buf(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            timings: Vec::new(),
        };
        rd.write(SNAPSHOT, cfg.canonical().as_bytes())?;
        Ok(rd)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Absolute path of `rel`, creating its parent directory.
    pub fn path(&self, rel: &str) -> Result<PathBuf> {
        let p = self.root.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        Ok(p)
    }

    pub fn write(&self, rel: &str, bytes: &[u8]) -> Result<()> {
        let p = self.path(rel)?;
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
    }

    /// Runs `f` and records its wall time under `stage`.
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce(&Self) -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f(self)?;
        self.timings.push(StageTiming {
            stage: stage.to_string(),
            seconds: t.elapsed().as_secs_f64(),
        });
        Ok(out)
    }

    /// Inventories every file and writes the manifest last.
    pub fn finish(self, command: &str) -> Result<RunManifest> {
        let mut files = Vec::new();
        collect_files(&self.root, &self.root, &mut files)?;
        files.sort_by(|a, b| a.path.cmp(&b.path));
        let m = RunManifest {
            command: command.to_string(),
            config_hash: self.config_hash,
            artifact_version: ARTIFACT_VERSION.to_string(),
            seed: self.seed,
            timings: self.timings,
            files,
        };
        let text = toml::to_string(&m).map_err(|e| Error::Runtime(e.to_string()))?;
        write_atomic(&self.root.join(MANIFEST), text.as_bytes())?;
        Ok(m)
    }
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<FileEntry>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let p = entry.path();
        let rel = p
            .strip_prefix(root)
            .expect("under root")
            .to_string_lossy()
            .replace('\\', "/");
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else if rel != MANIFEST && !rel.rsplit('/').next().is_some_and(|n| n.starts_with('.')) {
            let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            out.push(FileEntry {
                path: rel,
                bytes: bytes.len() as u64,
                sha256: hex(&Sha256::digest(&bytes)),
            });
        }
    }
    Ok(())
}
