//! Experiment configuration files.

use std::path::{Path, PathBuf};

use efpmm::{ModelParams, SolveOptions};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Model parameters written inline or as a path relative to the config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamsRef {
    File(PathBuf),
    Inline(Box<ModelParams>),
}

/// Riccati solve settings shared by every command.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveKnobs {
    pub dt_max: f64,
    /// Ladder size at which Ȟ is fitted; the smallest size when absent.
    pub fit_size: Option<f64>,
}

impl Default for SolveKnobs {
    fn default() -> Self {
        let d = SolveOptions::default();
        SolveKnobs {
            dt_max: d.dt_max,
            fit_size: d.fit_size,
        }
    }
}

impl SolveKnobs {
    pub fn options(&self) -> SolveOptions {
        SolveOptions {
            dt_max: self.dt_max,
            fit_size: self.fit_size,
            ..SolveOptions::default()
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment<K> {
    params: Option<ParamsRef>,
    #[serde(default)]
    solve: SolveKnobs,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    experiment: Option<K>,
}

/// A loaded config: resolved parameters plus the command's knobs.
#[derive(Debug, Clone)]
pub struct Experiment<K> {
    pub params: ModelParams,
    pub solve: SolveKnobs,
    pub seed: u64,
    pub knobs: K,
    /// Directory of the config file, for resolving relative input paths.
    pub base_dir: PathBuf,
}

impl<K: DeserializeOwned + Default> Experiment<K> {
    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let raw: RawExperiment<K> =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let params = match raw.params {
            None => ModelParams::gold(),
            Some(ParamsRef::Inline(p)) => p.validate()?,
            Some(ParamsRef::File(rel)) => {
                let file = base_dir.join(rel);
                let text = std::fs::read_to_string(&file)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", file.display())))?;
                ModelParams::from_json(&text)?
            }
        };
        if !(raw.solve.dt_max > 0.0 && raw.solve.dt_max.is_finite()) {
            return Err(CliError::Config("solve.dt_max must be positive".into()));
        }
        Ok(Experiment {
            params,
            solve: raw.solve,
            seed: seed_override.unwrap_or(raw.seed),
            knobs: raw.experiment.unwrap_or_default(),
            base_dir,
        })
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        self.base_dir.join(path)
    }
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>, CliError> {
    if n == 0 || !lo.is_finite() || !hi.is_finite() {
        return Err(CliError::Config(format!("grid [{lo}, {hi}] with {n} points is empty or not finite")));
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect())
}

/// Checks that a list knob is non-empty and finite.
pub fn nonempty(name: &str, values: &[f64]) -> Result<(), CliError> {
    if values.is_empty() || !values.iter().all(|v| v.is_finite()) {
        return Err(CliError::Config(format!("{name} must be a non-empty list of finite numbers")));
    }
    Ok(())
}
