//! Run manifest, output lock and small file helpers.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".sci.lock";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_hash: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// Path, relative to the output directory, to SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub config_hash: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl Manifest {
    pub fn load(out: &Path) -> Result<Self, CliError> {
        let path = out.join(MANIFEST_FILE);
        match std::fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .map_err(|e| CliError::Data(format!("corrupt manifest {}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(CliError::io(&path, e)),
        }
    }

    /// Records a finished stage. An output path claimed by another stage moves here.
    pub fn record(&mut self, stage: &str, record: StageRecord) {
        for (name, other) in self.stages.iter_mut() {
            if name != stage {
                other.outputs.retain(|p, _| !record.outputs.contains_key(p));
            }
        }
        self.tool_version = env!("CARGO_PKG_VERSION").to_string();
        self.config_hash = record.config_hash.clone();
        self.stages.insert(stage.to_string(), record);
    }

    pub fn save(&self, out: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        write_atomic(&out.join(MANIFEST_FILE), text.as_bytes())
    }
}

/// Tracks one stage's files while it runs.
pub struct StageTracker {
    out: PathBuf,
    record: StageRecord,
}

impl StageTracker {
    pub fn start(out: &Path, config_hash: &str) -> Self {
        Self {
            out: out.to_path_buf(),
            record: StageRecord { config_hash: config_hash.into(), started_unix: now(), ..Default::default() },
        }
    }

    fn key(&self, path: &Path) -> String {
        path.strip_prefix(&self.out).unwrap_or(path).to_string_lossy().into_owned()
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let key = self.key(path);
        self.record.inputs.insert(key, file_sha256(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<(), CliError> {
        let key = self.key(path);
        self.record.outputs.insert(key, file_sha256(path)?);
        Ok(())
    }

    pub fn finish(mut self, stage: &str) -> Result<(), CliError> {
        self.record.finished_unix = now();
        let mut manifest = Manifest::load(&self.out)?;
        manifest.record(stage, self.record);
        manifest.save(&self.out)
    }
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn file_sha256(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(out: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
        let path = out.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Usage(format!(
                "{} is in use by another run (remove {} if that run is gone)",
                out.display(),
                path.display()
            ))),
            Err(e) => Err(CliError::io(&path, e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

pub fn create_file(path: &Path) -> Result<File, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    File::create(path).map_err(|e| CliError::io(path, e))
}
