pub mod analyze;
pub mod evaluate;
pub mod plot;
pub mod predict;
pub mod prepare;
pub mod synth;
pub mod train;

use std::path::PathBuf;

use serde::Serialize;

/// Printed on stdout when a command succeeds.
#[derive(Debug, Default, Serialize)]
pub struct Outcome {
    pub status: &'static str,
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub artifacts: Vec<PathBuf>,
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    pub details: serde_json::Value,
}

impl Outcome {
    pub fn new(command: &str, config_hash: Option<&str>) -> Self {
        Self {
            status: "ok",
            command: command.into(),
            config_hash: config_hash.map(str::to_string),
            ..Default::default()
        }
    }

    pub fn artifact(&mut self, p: impl Into<PathBuf>) {
        self.artifacts.push(p.into());
    }
}
