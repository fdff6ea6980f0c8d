use std::fs;
use std::path::Path;

use chrono::{SecondsFormat, Utc};
use serde::Serialize;

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn build_id() -> String {
    format!("sparsenerf {} ({})", env!("CARGO_PKG_VERSION"), env!("SPARSENERF_BUILD_ID"))
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Provenance record written once into every run directory.
#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub started: String,
    pub finished: Option<String>,
    pub build: String,
}

impl RunManifest {
    pub fn start(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        Self {
            command: command.to_string(),
            args: std::env::args().collect(),
            config,
            seed,
            started: now(),
            finished: None,
            build: build_id(),
        }
    }

    pub fn finish(mut self, dir: &Path) -> std::io::Result<()> {
        self.finished = Some(now());
        fs::create_dir_all(dir)?;
        fs::write(
            dir.join(MANIFEST_FILE),
            serde_json::to_string_pretty(&self).expect("manifest serializes") + "\n",
        )
    }
}
