//! Run manifests and run directories.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use synthparse_core::paraphrase::IterationRecord;
use synthparse_core::selection::BucketReport;

use crate::error::{Error, Result};
use crate::io::{write_atomic, InputFile};

pub const TOOL: &str = "synthparse";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FAILED_MARKER: &str = "FAILED";
pub const LOCK_FILE: &str = ".lock";

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

impl From<&InputFile> for InputDigest {
    fn from(f: &InputFile) -> Self {
        InputDigest {
            path: f.path.display().to_string(),
            sha256: f.sha256.clone(),
            bytes: f.bytes,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub enumerated: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constrained: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paraphrased: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accepted: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rejected: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampled: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BucketSummary {
    pub depth: u32,
    pub input: usize,
    pub groups: usize,
    pub groups_kept: usize,
    pub pruned_by_gap: usize,
    pub selected: usize,
}

impl From<&BucketReport> for BucketSummary {
    fn from(b: &BucketReport) -> Self {
        BucketSummary {
            depth: b.depth,
            input: b.input,
            groups: b.groups,
            groups_kept: b.groups_kept,
            pruned_by_gap: b.pruned_by_gap,
            selected: b.selected,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub stage: u32,
    pub iteration: u32,
    pub candidates: usize,
    pub duplicates: usize,
    pub accepted: usize,
    pub rejected: usize,
    /// accepted / (accepted + rejected); null when nothing was filtered.
    pub acceptance_rate: Option<f64>,
    pub dataset_size: usize,
    pub model_ref: Option<String>,
}

impl From<&IterationRecord> for IterationSummary {
    fn from(r: &IterationRecord) -> Self {
        IterationSummary {
            stage: r.stage,
            iteration: r.iteration,
            candidates: r.candidates,
            duplicates: r.duplicates,
            accepted: r.accepted.len(),
            rejected: r.rejected.len(),
            acceptance_rate: r.acceptance_rate(),
            dataset_size: r.dataset_size,
            model_ref: r.model_ref.clone(),
        }
    }
}

/// Wall-clock information, kept apart from everything else so that two
/// runs can be compared with it removed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub started_at: String,
    /// Seconds per stage, in execution order.
    pub stages: Vec<(String, f64)>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, InputDigest>,
    pub counts: Counts,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub buckets: Vec<BucketSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub iterations: Vec<IterationSummary>,
    /// Overall accepted / (accepted + rejected) across iterations.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acceptance_rate: Option<f64>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub extra: BTreeMap<String, serde_json::Value>,
    pub timing: Timing,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        RunManifest {
            tool: TOOL.into(),
            version: VERSION.into(),
            command: command.into(),
            status: "running".into(),
            config,
            timing: Timing {
                started_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
                stages: Vec::new(),
            },
            ..RunManifest::default()
        }
    }

    pub fn input(&mut self, role: &str, file: &InputFile) {
        self.inputs.insert(role.into(), file.into());
    }

    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce(&mut Self) -> T) -> T {
        let start = std::time::Instant::now();
        let out = f(self);
        self.timing.stages.push((stage.into(), start.elapsed().as_secs_f64()));
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest always serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }
}

/// An exclusively locked run directory. The lock file is removed on drop.
#[derive(Debug)]
pub struct RunDir {
    path: PathBuf,
}

impl RunDir {
    /// Creates `<runs>/<UTC timestamp>-<seed>` (with a numeric suffix if
    /// that name is taken) and locks it.
    pub fn create(runs: &Path, seed: u64) -> Result<RunDir> {
        fs::create_dir_all(runs).map_err(|e| Error::io(runs, e))?;
        let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
        for n in 0..1000 {
            let name = if n == 0 {
                format!("{stamp}-{seed}")
            } else {
                format!("{stamp}-{seed}-{n}")
            };
            let path = runs.join(name);
            match fs::create_dir(&path) {
                Ok(()) => return RunDir::lock(path),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(Error::io(&path, e)),
            }
        }
        Err(Error::runtime(format!(
            "could not allocate a run directory under {}",
            runs.display()
        )))
    }

    /// Locks an existing or new directory; fails if another writer holds it.
    pub fn lock(path: PathBuf) -> Result<RunDir> {
        fs::create_dir_all(&path).map_err(|e| Error::io(&path, e))?;
        let lock = path.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(RunDir { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::runtime(format!(
                "{} is locked by another run (remove {} if that run is gone)",
                path.display(),
                lock.display()
            ))),
            Err(e) => Err(Error::io(&lock, e)),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn join(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.path.join(rel)
    }

    pub fn mark_failed(&self, reason: &str) -> Result<()> {
        write_atomic(&self.join(FAILED_MARKER), format!("{reason}\n").as_bytes())
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.path.join(LOCK_FILE));
    }
}
