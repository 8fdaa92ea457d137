//! Output directory bookkeeping and the run record.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const PARTIAL: &str = ".partial";

/// One derived seed: which stage uses it and how it was obtained.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SeedEntry {
    pub stage: String,
    pub parent: u64,
    pub stream: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SeedSchedule {
    pub master: u64,
    pub derived: Vec<SeedEntry>,
}

impl SeedSchedule {
    pub fn new(master: u64) -> Self {
        Self { master, derived: Vec::new() }
    }

    /// `child_seed(parent, stream)`, recorded under `stage`.
    pub fn derive(&mut self, stage: impl Into<String>, parent: u64, stream: u64) -> u64 {
        let seed = sr_options::rng::child_seed(parent, stream);
        self.derived.push(SeedEntry { stage: stage.into(), parent, stream, seed });
        seed
    }
}

#[derive(Debug, Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    status: &'a str,
    error: Option<String>,
    version: &'static str,
    wall_time_s: f64,
    config: &'a serde_json::Value,
    seeds: &'a SeedSchedule,
    files: Vec<String>,
}

/// Files written into one output directory, in creation order.
pub struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
    started: Instant,
}

impl Artifacts {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new(), started: Instant::now() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    /// Create `name` in the output directory and hand a buffered writer to `body`.
    pub fn write<F>(&mut self, name: &str, body: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut dyn Write) -> sr_options::Result<()>,
    {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        let mut w = BufWriter::new(file);
        body(&mut w).map_err(CliError::from)?;
        w.flush().map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }

    /// Write a CSV from a header and pre-formatted rows.
    pub fn write_rows(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        self.write(name, |w| {
            let mut wr = csv::Writer::from_writer(w);
            let io = |e: csv::Error| sr_options::Error::Numeric(format!("csv write: {e}"));
            wr.write_record(header).map_err(io)?;
            for r in rows {
                wr.write_record(r).map_err(io)?;
            }
            wr.flush().map_err(|e| sr_options::Error::Numeric(format!("csv write: {e}")))
        })
    }

    /// Write the run record listing every file.
    pub fn finish(self, command: &str, config: &serde_json::Value, seeds: &SeedSchedule) -> Result<PathBuf, CliError> {
        let record = RunRecord {
            command,
            status: "ok",
            error: None,
            version: env!("CARGO_PKG_VERSION"),
            wall_time_s: self.started.elapsed().as_secs_f64(),
            config,
            seeds,
            files: self.files.clone(),
        };
        let path = self.dir.join(MANIFEST);
        write_json(&path, &record)?;
        Ok(path)
    }

    /// Keep what was written under a `.partial` suffix, with a matching
    /// partial run record naming the error.
    pub fn abandon(self, command: &str, config: &serde_json::Value, seeds: &SeedSchedule, error: &CliError) -> Result<(), CliError> {
        let mut renamed = Vec::with_capacity(self.files.len());
        for f in &self.files {
            let from = self.dir.join(f);
            let to_name = format!("{f}{PARTIAL}");
            if from.exists() {
                fs::rename(&from, self.dir.join(&to_name)).map_err(|e| CliError::Io(format!("{}: {e}", from.display())))?;
            }
            renamed.push(to_name);
        }
        let record = RunRecord {
            command,
            status: "failed",
            error: Some(error.to_string()),
            version: env!("CARGO_PKG_VERSION"),
            wall_time_s: self.started.elapsed().as_secs_f64(),
            config,
            seeds,
            files: renamed,
        };
        write_json(&self.dir.join(format!("{MANIFEST}{PARTIAL}")), &record)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failed_runs_keep_partial_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut art = Artifacts::create(dir.path()).unwrap();
        art.write_rows("a.csv", &["x"], &[vec!["1".into()]]).unwrap();
        let err = CliError::Runtime("boom".into());
        art.abandon("test", &serde_json::Value::Null, &SeedSchedule::new(0), &err).unwrap();
        assert!(dir.path().join("a.csv.partial").exists());
        assert!(!dir.path().join("a.csv").exists());
        let rec = fs::read_to_string(dir.path().join("manifest.json.partial")).unwrap();
        assert!(rec.contains("boom") && rec.contains("a.csv.partial"));
    }
}
