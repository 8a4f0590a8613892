use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

/// Provenance record written next to a command's outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: RunConfig,
    pub seed: u64,
    pub outputs: Vec<Artifact>,
    pub duration_secs: f64,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> CliResult<PathBuf> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Io(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;
        Ok(path)
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Collects the files a command writes under one output directory.
#[derive(Debug)]
pub struct Outputs {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Outputs {
    pub fn new(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn create(&mut self, name: &str) -> CliResult<(PathBuf, File)> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        let file = File::create(&path).map_err(|e| io_err(&path, e))?;
        self.files.push(path.clone());
        Ok((path, file))
    }

    /// Writes serializable rows; the header comes from the field names.
    pub fn csv<S: Serialize>(&mut self, name: &str, rows: impl IntoIterator<Item = S>) -> CliResult<PathBuf> {
        let (path, file) = self.create(name)?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        for row in rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;
        Ok(path)
    }

    /// Writes a table with explicit header and numeric columns.
    pub fn csv_table(&mut self, name: &str, header: &[String], rows: &[Vec<f64>]) -> CliResult<PathBuf> {
        let (path, file) = self.create(name)?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        w.write_record(header)?;
        for row in rows {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;
        Ok(path)
    }

    pub fn with_writer(&mut self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> CliResult<()>) -> CliResult<PathBuf> {
        let (path, file) = self.create(name)?;
        let mut w = BufWriter::new(file);
        f(&mut w)?;
        w.flush().map_err(|e| io_err(&path, e))?;
        Ok(path)
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.files
    }

    pub fn finish(self, command: &str, config: &RunConfig, elapsed: Duration) -> CliResult<RunManifest> {
        let outputs = self
            .files
            .iter()
            .map(|p| Ok(Artifact { path: p.display().to_string(), sha256: sha256_file(p)? }))
            .collect::<CliResult<Vec<_>>>()?;
        let manifest = RunManifest {
            command: command.to_string(),
            config: config.clone(),
            seed: config.experiment.seed,
            outputs,
            duration_secs: elapsed.as_secs_f64(),
        };
        manifest.write(&self.dir)?;
        Ok(manifest)
    }
}
