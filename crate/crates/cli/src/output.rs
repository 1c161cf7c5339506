//! Run directory writer. Files are written in a fixed order and listed in the
//! manifest, which is written last.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use collapsar::ensemble::EnsembleStats;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::Serialize;

use crate::config::{Manifest, RunConfig, SeriesFormat, ARTIFACT, VERSION};

pub struct RunDir {
    root: PathBuf,
    gzip: bool,
    files: Vec<String>,
}

impl RunDir {
    pub fn create(root: &Path, gzip: bool) -> std::io::Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            gzip,
            files: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, content: &str) -> std::io::Result<()> {
        let name = if self.gzip {
            format!("{name}.gz")
        } else {
            name.to_string()
        };
        let path = self.root.join(&name);
        if self.gzip {
            // Header mtime stays zero, so compressed output is reproducible too.
            let mut enc = GzEncoder::new(Vec::new(), Compression::default());
            enc.write_all(content.as_bytes())?;
            fs::write(path, enc.finish()?)?;
        } else {
            fs::write(path, content)?;
        }
        self.files.push(name);
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> std::io::Result<()> {
        let mut s = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
        s.push('\n');
        self.write(name, &s)
    }

    pub fn write_ndjson<T: Serialize>(&mut self, name: &str, rows: &[T]) -> std::io::Result<()> {
        let mut s = String::new();
        for r in rows {
            s.push_str(&serde_json::to_string(r).map_err(std::io::Error::other)?);
            s.push('\n');
        }
        self.write(name, &s)
    }

    pub fn write_series(&mut self, stats: &EnsembleStats, format: SeriesFormat) -> std::io::Result<()> {
        match format {
            SeriesFormat::Csv => self.write("series.csv", &stats.to_csv()),
            SeriesFormat::Json => self.write_json("series.json", &series_rows(stats)),
            SeriesFormat::Ndjson => self.write_ndjson("series.ndjson", &series_rows(stats)),
        }
    }

    /// Writes `manifest.json` (never compressed) and returns its path.
    pub fn finish(
        self,
        command: &str,
        config: &RunConfig,
        parameters: serde_json::Map<String, serde_json::Value>,
    ) -> std::io::Result<PathBuf> {
        let manifest = Manifest {
            artifact: ARTIFACT.into(),
            version: VERSION.into(),
            command: command.into(),
            config: config.resolved(),
            parameters,
            files: self.files,
        };
        let path = self.root.join("manifest.json");
        let mut s = serde_json::to_string_pretty(&manifest).map_err(std::io::Error::other)?;
        s.push('\n');
        fs::write(&path, s)?;
        Ok(path)
    }
}

/// One object per time point: `t` plus the mean/variance/SE of every series.
fn series_rows(stats: &EnsembleStats) -> Vec<serde_json::Map<String, serde_json::Value>> {
    (0..stats.t.len())
        .map(|k| {
            let mut row = serde_json::Map::new();
            row.insert("t".into(), stats.t[k].into());
            for s in &stats.series {
                row.insert(format!("{}_mean", s.name), s.mean[k].into());
                row.insert(format!("{}_var", s.name), s.variance[k].into());
                row.insert(format!("{}_se", s.name), s.standard_error[k].into());
            }
            row
        })
        .collect()
}
