use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};

/// Crate version with the `git describe` output of the build tree.
pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"), "-", env!("ADVOBF_GIT_DESCRIBE"));

pub const RUN_RECORD: &str = "run.json";
pub const ERROR_RECORD: &str = "error.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Ok,
    Failed,
}

/// Contents of `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub status: RunStatus,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub started_at: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<String>,
    /// Upstream artifacts this run consumed, by role.
    #[serde(default)]
    pub upstream: BTreeMap<String, PathBuf>,
    /// Files written, relative to the run directory.
    #[serde(default)]
    pub artifacts: Vec<PathBuf>,
    pub config: ExperimentConfig,
}

/// Machine-readable description of a failed command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub status: String,
    pub command: String,
    pub kind: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_dir: Option<PathBuf>,
}

impl ErrorRecord {
    pub fn new(command: &str, error: &Error, run_dir: Option<&Path>) -> Self {
        Self {
            status: "error".into(),
            command: command.into(),
            kind: error.kind().into(),
            message: error.to_string(),
            run_dir: run_dir.map(Path::to_path_buf),
        }
    }
}

fn now() -> chrono::DateTime<chrono::Utc> {
    chrono::Utc::now()
}

pub fn runs_root(output_dir: &Path) -> PathBuf {
    output_dir.join("runs")
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// An open run directory.
#[derive(Debug)]
pub struct RunContext {
    pub dir: PathBuf,
    pub config: ExperimentConfig,
    pub hash: String,
    record: RunRecord,
}

impl RunContext {
    /// Creates `<output_dir>/runs/<timestamp>-<command>` and writes `run.json`.
    pub fn create(config: &ExperimentConfig, command: &str) -> Result<Self> {
        let output_dir = std::path::absolute(&config.output_dir).map_err(|e| Error::io(&config.output_dir, e))?;
        let root = runs_root(&output_dir);
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        let started = now();
        let stem = format!("{}-{command}", started.format("%Y%m%d-%H%M%S-%6f"));
        let mut dir = root.join(&stem);
        let mut k = 1;
        loop {
            match fs::create_dir(&dir) {
                Ok(()) => break,
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    dir = root.join(format!("{stem}.{k}"));
                    k += 1;
                }
                Err(e) => return Err(Error::io(&dir, e)),
            }
        }
        let hash = config.hash();
        let record = RunRecord {
            command: command.into(),
            status: RunStatus::Running,
            config_hash: hash.clone(),
            seed: config.seed,
            version: VERSION.into(),
            started_at: started.to_rfc3339(),
            finished_at: None,
            upstream: BTreeMap::new(),
            artifacts: Vec::new(),
            config: config.clone(),
        };
        let ctx = Self {
            dir,
            config: ExperimentConfig {
                output_dir,
                ..config.clone()
            },
            hash,
            record,
        };
        ctx.save()?;
        Ok(ctx)
    }

    fn save(&self) -> Result<()> {
        write_json(&self.dir.join(RUN_RECORD), &self.record)
    }

    pub fn command(&self) -> &str {
        &self.record.command
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.dir.join(rel)
    }

    /// `(key, value)` pairs embedded in every artifact.
    pub fn tags(&self) -> [(&str, &str); 1] {
        [("config_hash", self.hash.as_str())]
    }

    pub fn upstream(&mut self, role: &str, path: impl Into<PathBuf>) {
        self.record.upstream.insert(role.into(), path.into());
    }

    /// Registers a file inside the run directory as an artifact.
    pub fn artifact(&mut self, rel: impl Into<PathBuf>) {
        self.record.artifacts.push(rel.into());
    }

    /// Writes `value` as pretty JSON and registers it.
    pub fn write_json(&mut self, rel: &str, value: &impl Serialize) -> Result<PathBuf> {
        let path = self.path(rel);
        write_json(&path, value)?;
        self.artifact(rel);
        Ok(path)
    }

    /// Writes a text artifact and registers it.
    pub fn write_text(&mut self, rel: &str, text: &str) -> Result<PathBuf> {
        let path = self.path(rel);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        self.artifact(rel);
        Ok(path)
    }

    pub fn mkdir(&self, rel: &str) -> Result<PathBuf> {
        let path = self.path(rel);
        fs::create_dir_all(&path).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn record(&self) -> &RunRecord {
        &self.record
    }

    pub fn finish(mut self) -> Result<RunRecord> {
        self.record.status = RunStatus::Ok;
        self.record.finished_at = Some(now().to_rfc3339());
        self.save()?;
        Ok(self.record)
    }

    /// Marks the run failed and writes `error.json` beside `run.json`.
    pub fn fail(mut self, error: &Error) -> ErrorRecord {
        let rec = ErrorRecord::new(&self.record.command, error, Some(&self.dir));
        self.record.status = RunStatus::Failed;
        self.record.finished_at = Some(now().to_rfc3339());
        if let Err(e) = self.save().and_then(|_| write_json(&self.dir.join(ERROR_RECORD), &rec)) {
            log::warn!("could not record the failure in {}: {e}", self.dir.display());
        }
        rec
    }
}

/// Successful runs under `output_dir` whose command is one of `commands`, oldest first.
pub fn completed_runs(output_dir: &Path, commands: &[&str]) -> Result<Vec<(PathBuf, RunRecord)>> {
    let root = runs_root(output_dir);
    let Ok(rd) = fs::read_dir(&root) else {
        return Ok(Vec::new());
    };
    let mut dirs: Vec<PathBuf> = rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    dirs.sort();
    let mut out = Vec::new();
    for d in dirs {
        let path = d.join(RUN_RECORD);
        let Ok(text) = fs::read_to_string(&path) else {
            continue;
        };
        let rec: RunRecord = match serde_json::from_str(&text) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                continue;
            }
        };
        if rec.status == RunStatus::Ok && commands.contains(&rec.command.as_str()) {
            out.push((d, rec));
        }
    }
    Ok(out)
}

/// The most recent successful run of any of `commands`.
pub fn latest_run(output_dir: &Path, commands: &[&str]) -> Result<Option<(PathBuf, RunRecord)>> {
    Ok(completed_runs(output_dir, commands)?.pop())
}

/// Like [`latest_run`], but a missing run is a dependency error naming `what`.
pub fn require_run(output_dir: &Path, commands: &[&str], what: &str) -> Result<(PathBuf, RunRecord)> {
    latest_run(output_dir, commands)?.ok_or_else(|| {
        let cmds: Vec<String> = commands.iter().map(|c| format!("`{c}`")).collect();
        Error::Dependency(format!("{what} (run {} first)", cmds.join(" or ")))
    })
}
