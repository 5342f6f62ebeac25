//! Artifact writers: summary JSON with embedded provenance (resolved
//! config + toolkit version) and RFC-4180 CSV tables.

use crate::config::ExperimentConfig;
use anyhow::{Context, Result};
use serde::Serialize;
use std::path::{Path, PathBuf};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(name: &str, pass: bool, detail: impl Into<String>) -> Self {
        Verdict {
            name: name.into(),
            pass,
            detail: detail.into(),
        }
    }

    pub fn print(&self) {
        println!(
            "[{}] {}: {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        );
    }
}

#[derive(Serialize)]
struct Summary<'a, T: Serialize> {
    toolkit_version: &'static str,
    config: &'a ExperimentConfig,
    results: &'a T,
    verdicts: &'a [Verdict],
}

pub struct OutputDir {
    dir: PathBuf,
    prefix: String,
}

impl OutputDir {
    pub fn new(dir: &Path, prefix: &str) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("create {}", dir.display()))?;
        Ok(OutputDir {
            dir: dir.to_path_buf(),
            prefix: prefix.to_string(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(format!("{}_{name}", self.prefix))
    }

    pub fn write_summary<T: Serialize>(
        &self,
        cfg: &ExperimentConfig,
        results: &T,
        verdicts: &[Verdict],
    ) -> Result<PathBuf> {
        let path = self.path("summary.json");
        let doc = Summary {
            toolkit_version: TOOLKIT_VERSION,
            config: cfg,
            results,
            verdicts,
        };
        std::fs::write(&path, serde_json::to_string_pretty(&doc)?)
            .with_context(|| format!("write {}", path.display()))?;
        Ok(path)
    }

    pub fn csv_writer(&self, name: &str) -> Result<csv::Writer<std::fs::File>> {
        let path = self.path(name);
        let file = std::fs::File::create(&path)
            .with_context(|| format!("create {}", path.display()))?;
        Ok(csv::Writer::from_writer(file))
    }

    pub fn write_bytes(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        std::fs::write(&path, bytes).with_context(|| format!("write {}", path.display()))?;
        Ok(path)
    }
}
