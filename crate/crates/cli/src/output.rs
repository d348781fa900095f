//! Run directories, metric files and the end-of-run manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use neurodecode::storage;
use serde::Serialize;
use serde_json::Value;

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const SOURCE_REVISION: &str = env!("NEURODECODE_REVISION");

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub config: Value,
    pub source_revision: String,
    pub seeds: Vec<u64>,
    pub wall_clock_s: f64,
    pub artifacts: Vec<String>,
    pub metrics: Value,
}

/// An output directory owned by one command invocation.
pub struct RunDir {
    root: PathBuf,
    started: Instant,
    artifacts: Vec<String>,
}

impl RunDir {
    /// Creates `root`; an existing path is refused unless `force` is set.
    pub fn create(root: &Path, force: bool, config: &RunConfig) -> Result<Self> {
        if root.exists() && !force {
            return Err(CliError::Usage(format!(
                "output directory {} already exists (pass --force to reuse it)",
                root.display()
            )));
        }
        std::fs::create_dir_all(root)
            .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", root.display())))?;
        let mut dir = Self {
            root: root.to_path_buf(),
            started: Instant::now(),
            artifacts: Vec::new(),
        };
        dir.json("config.json", config)?;
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Notes a file written by someone else.
    pub fn record(&mut self, rel: impl Into<String>) {
        self.artifacts.push(rel.into());
    }

    pub fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        storage::write_json(&self.path(rel), value)?;
        self.record(rel);
        Ok(())
    }

    pub fn csv(&mut self, rel: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        storage::write_csv(&self.path(rel), header, rows)?;
        self.record(rel);
        Ok(())
    }

    /// Writes `manifest.json`, marking the run failed when `outcome` is an error.
    pub fn finish(mut self, command: &str, config: &RunConfig, outcome: &Result<Value>) -> Result<()> {
        self.artifacts.sort();
        self.artifacts.dedup();
        let (status, error, metrics) = match outcome {
            Ok(m) => ("ok", None, m.clone()),
            Err(e) => ("failed", Some(e.to_string()), Value::Null),
        };
        let manifest = RunManifest {
            command: command.to_string(),
            status: status.to_string(),
            error,
            config: serde_json::to_value(config).map_err(neurodecode::Error::from)?,
            source_revision: SOURCE_REVISION.to_string(),
            seeds: config.seeds.clone(),
            wall_clock_s: self.started.elapsed().as_secs_f64(),
            artifacts: self.artifacts,
            metrics,
        };
        storage::write_json(&self.root.join("manifest.json"), &manifest)?;
        Ok(())
    }
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn fmt_pct(mean: f64, std: f64) -> String {
    format!("{:.1} ± {:.1}", 100.0 * mean, 100.0 * std)
}

pub fn seed_dir(seed: u64) -> String {
    format!("seed-{seed}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert_eq!(s, 1.0);
        assert_eq!(mean_std(&[0.4]), (0.4, 0.0));
    }
}
