//! Run configuration and manifests.

use std::path::Path;

use collapsar::ensemble::EnsembleModel;
use collapsar::units::UnitSystem;
use collapsar::CollapseError;
use serde::{Deserialize, Serialize};

pub const ARTIFACT: &str = "collapsar";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub trajectories: usize,
    pub master_seed: u64,
    /// Worker threads; never affects output content, so it is left out of manifests.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SeriesFormat {
    #[default]
    Csv,
    Json,
    Ndjson,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directory: Option<String>,
    /// Format of the per-time-point series file.
    #[serde(default)]
    pub format: SeriesFormat,
    #[serde(default)]
    pub gzip: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub simulation: EnsembleModel,
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub output: OutputSection,
    /// Optional mapping of simulation units to SI, echoed for downstream conversion.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<UnitSystem>,
}

impl RunConfig {
    pub fn validate(&self) -> collapsar::Result<()> {
        if self.ensemble.trajectories == 0 {
            return Err(CollapseError::Config("ensemble.trajectories must be at least 1".into()));
        }
        if self.ensemble.workers == Some(0) {
            return Err(CollapseError::Config("ensemble.workers must be at least 1".into()));
        }
        if let Some(u) = &self.units {
            u.validate()?;
        }
        self.simulation.validate()
    }

    /// The config as recorded in a manifest: everything that determines output
    /// content, nothing that only affects where or how fast it is produced.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.ensemble.workers = None;
        c.output.directory = None;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub artifact: String,
    pub version: String,
    pub command: String,
    pub config: RunConfig,
    /// Extra command parameters (e.g. checkpoints) needed to reproduce the run.
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub parameters: serde_json::Map<String, serde_json::Value>,
    pub files: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: String, source: serde_json::Error },
    #[error("{path}: {source}")]
    Invalid { path: String, source: CollapseError },
}

/// Read a run config, or the config embedded in a manifest from an earlier run.
/// Returns the config and any manifest parameters. Nothing is allocated for the
/// simulation until the config has validated.
pub fn load(path: &Path) -> Result<(RunConfig, serde_json::Map<String, serde_json::Value>), ConfigError> {
    let p = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: p.clone(),
        source,
    })?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
        path: p.clone(),
        source,
    })?;
    let (config, parameters) = if value.get("artifact").is_some() {
        let m: Manifest = serde_json::from_value(value).map_err(|source| ConfigError::Parse {
            path: p.clone(),
            source,
        })?;
        (m.config, m.parameters)
    } else {
        let c: RunConfig = serde_json::from_value(value).map_err(|source| ConfigError::Parse {
            path: p.clone(),
            source,
        })?;
        (c, serde_json::Map::new())
    };
    config
        .validate()
        .map_err(|source| ConfigError::Invalid { path: p, source })?;
    Ok((config, parameters))
}
