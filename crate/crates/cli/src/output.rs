//! Output directory, CSV helpers and the run manifest.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::CliError;

pub struct Output {
    dir: PathBuf,
    files: Vec<String>,
    summary: serde_json::Map<String, Value>,
}

impl Output {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Config(format!("cannot create output directory {}: {e}", dir.display())))?;
        Ok(Output {
            dir: dir.to_path_buf(),
            files: vec![],
            summary: Default::default(),
        })
    }

    /// Buffered writer for a new file in the output directory.
    pub fn file(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.dir.join(name);
        let f = File::create(&path).map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
        self.files.push(name.to_string());
        Ok(BufWriter::new(f))
    }

    pub fn csv(&mut self, name: &str) -> Result<csv::Writer<BufWriter<File>>, CliError> {
        Ok(csv::Writer::from_writer(self.file(name)?))
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        serde_json::to_writer_pretty(self.file(name)?, value)?;
        Ok(())
    }

    /// Headline numbers recorded in the manifest.
    pub fn note(&mut self, key: &str, value: impl Serialize) {
        self.summary.insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    pub fn write_manifest(mut self, run: &RunInfo<'_>) -> Result<(), CliError> {
        let manifest = json!({
            "command": run.command,
            "config": run.config.display().to_string(),
            "seed": run.seed,
            "threads": run.threads,
            "params": run.params,
            "solve": run.solve,
            "experiment": run.knobs,
            "versions": {
                "efpmm": efpmm::VERSION,
                "efpmm-cli": env!("CARGO_PKG_VERSION"),
            },
            "wall_time_s": run.started.elapsed().as_secs_f64(),
            "outputs": self.files.clone(),
            "summary": self.summary,
        });
        let f = self.file("manifest.json")?;
        serde_json::to_writer_pretty(f, &manifest)?;
        Ok(())
    }
}

pub struct RunInfo<'a> {
    pub command: &'a str,
    pub config: &'a Path,
    pub seed: u64,
    pub threads: Option<usize>,
    pub params: Value,
    pub solve: Value,
    pub knobs: Value,
    pub started: Instant,
}

/// Writes one CSV row of numbers.
pub fn row<W: std::io::Write>(w: &mut csv::Writer<W>, values: &[f64]) -> Result<(), CliError> {
    w.write_record(values.iter().map(|v| v.to_string()))?;
    Ok(())
}
