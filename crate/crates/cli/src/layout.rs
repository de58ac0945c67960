//! Output directory layout, the run lock and per-stage run records.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use skinaug_core::digest::sha256_hex;

use crate::error::{CliError, Result};

pub const LOCK_FILE: &str = ".skinaug.lock";

#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Layout {
        Layout { root: root.into() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.csv")
    }
    pub fn counts_json(&self) -> PathBuf {
        self.root.join("counts.json")
    }
    pub fn counts_md(&self) -> PathBuf {
        self.root.join("counts.md")
    }
    pub fn seeds(&self) -> PathBuf {
        self.root.join("seeds.json")
    }
    pub fn curation(&self) -> PathBuf {
        self.root.join("curation")
    }
    pub fn request_log(&self) -> PathBuf {
        self.root.join("requests.jsonl")
    }
    pub fn selections(&self) -> PathBuf {
        self.root.join("selections")
    }
    pub fn selection_stats(&self) -> PathBuf {
        self.root.join("selections").join("prompt_stats.json")
    }
    pub fn augmented_manifest(&self) -> PathBuf {
        self.root.join("manifest.augmented.csv")
    }
    pub fn plans(&self) -> PathBuf {
        self.root.join("plans")
    }
    pub fn models(&self) -> PathBuf {
        self.root.join("models")
    }
    pub fn predictions(&self) -> PathBuf {
        self.root.join("predictions")
    }
    pub fn results(&self) -> PathBuf {
        self.root.join("results")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }
    pub fn runs(&self) -> PathBuf {
        self.root.join("runs")
    }
    pub fn run_record(&self, stage: &str) -> PathBuf {
        self.runs().join(format!("{stage}.json"))
    }

    /// Path relative to the output root, for run records.
    pub fn rel(&self, p: &Path) -> String {
        p.strip_prefix(&self.root).unwrap_or(p).to_string_lossy().replace('\\', "/")
    }
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

fn holder_alive(pid: u32) -> bool {
    if cfg!(target_os = "linux") {
        Path::new(&format!("/proc/{pid}")).exists()
    } else {
        true
    }
}

impl RunLock {
    pub fn acquire(root: &Path) -> Result<RunLock> {
        fs::create_dir_all(root)?;
        let path = root.join(LOCK_FILE);
        for _ in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    writeln!(f, "{}", std::process::id())?;
                    f.sync_all()?;
                    return Ok(RunLock { path });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    let holder = fs::read_to_string(&path).unwrap_or_default();
                    match holder.trim().parse::<u32>() {
                        Ok(pid) if !holder_alive(pid) => {
                            tracing::warn!("removing stale lock left by process {pid}");
                            fs::remove_file(&path)?;
                        }
                        _ => {
                            return Err(CliError::Validation(format!(
                                "{} is locked by another run (process {}); remove {} if that run is gone",
                                root.display(),
                                holder.trim(),
                                path.display()
                            )))
                        }
                    }
                }
                Err(e) => return Err(e.into()),
            }
        }
        Err(CliError::Validation(format!("could not acquire {}", path.display())))
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Machine-readable record of one stage execution. Timestamps appear only
/// here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub stage: String,
    pub config_digest: String,
    pub rng_seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub tool_version: String,
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Digests of `paths`, descending into directories; keys are relative to
/// the layout root. Missing paths are skipped.
pub fn digest_paths(layout: &Layout, paths: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut stack: Vec<PathBuf> = paths.to_vec();
    while let Some(p) = stack.pop() {
        if p.is_dir() {
            for entry in fs::read_dir(&p)? {
                stack.push(entry?.path());
            }
        } else if p.is_file() {
            out.insert(layout.rel(&p), file_digest(&p)?);
        }
    }
    Ok(out)
}

pub fn write_record(layout: &Layout, record: &RunRecord) -> Result<()> {
    fs::create_dir_all(layout.runs())?;
    fs::write(layout.run_record(&record.stage), serde_json::to_vec_pretty(record)?)?;
    Ok(())
}

pub fn read_record(layout: &Layout, stage: &str) -> Option<RunRecord> {
    serde_json::from_slice(&fs::read(layout.run_record(stage)).ok()?).ok()
}

/// True when the stage's last record was made under `config_digest` and
/// every input and output still has the recorded digest.
pub fn is_current(layout: &Layout, stage: &str, config_digest: &str) -> bool {
    let Some(rec) = read_record(layout, stage) else { return false };
    if rec.config_digest != config_digest {
        return false;
    }
    rec.inputs.iter().chain(&rec.outputs).all(|(rel, digest)| {
        let p = Path::new(rel);
        let p = if p.is_absolute() { p.to_path_buf() } else { layout.root.join(p) };
        file_digest(&p).map(|d| &d == digest).unwrap_or(false)
    })
}

/// Write bytes, replacing any previous file atomically.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}
