use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

/// Self-describing record of one command run.
#[derive(Debug, Serialize)]
pub struct RunReport {
    pub command: String,
    pub seed: u64,
    pub config: Value,
    pub metrics: Value,
    pub timings: Value,
    pub artifacts: Vec<String>,
}

impl RunReport {
    pub fn new(command: &str, seed: u64, config: impl Serialize) -> Result<Self> {
        Ok(RunReport {
            command: command.to_string(),
            seed,
            config: serde_json::to_value(config)?,
            metrics: Value::Null,
            timings: Value::Null,
            artifacts: Vec::new(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").with_context(|| format!("writing report {}", path.display()))
    }
}
