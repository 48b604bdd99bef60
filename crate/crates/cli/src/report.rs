use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use frpose_core::metrics_oks::MetricsReport;

use crate::error::{io_context, Result};

pub const REPORT_FILE: &str = "report.json";
pub const CONFIG_ECHO_FILE: &str = "config.toml";
pub const LOSS_FILE: &str = "loss.csv";
pub const METRICS_KV_FILE: &str = "metrics.kv";
pub const METRICS_TABLE_FILE: &str = "metrics.txt";

/// Summary written by every command as `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub seed: u64,
    /// Mean training loss of each epoch.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub epoch_losses: Vec<f64>,
    /// Loss of the first and last optimisation step and their ratio.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricsReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checkpoints: Vec<PathBuf>,
    pub wall_clock_secs: f64,
    /// The effective configuration, as TOML.
    pub config: String,
}

impl RunReport {
    pub fn new(command: &str, seed: u64, config: String) -> Self {
        Self {
            command: command.to_string(),
            seed,
            epoch_losses: Vec::new(),
            initial_loss: None,
            final_loss: None,
            loss_ratio: None,
            metrics: None,
            checkpoints: Vec::new(),
            wall_clock_secs: 0.0,
            config,
        }
    }

    pub fn write(&self, out: &Path) -> Result<()> {
        let path = out.join(REPORT_FILE);
        let text = serde_json::to_string_pretty(self)?;
        io_context(std::fs::write(&path, text), || format!("writing {}", path.display()))?;
        let echo = out.join(CONFIG_ECHO_FILE);
        io_context(std::fs::write(&echo, &self.config), || format!("writing {}", echo.display()))
    }

    pub fn read(out: &Path) -> Result<Self> {
        let path = out.join(REPORT_FILE);
        let text = io_context(std::fs::read_to_string(&path), || format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn write_metrics(out: &Path, metrics: &MetricsReport) -> Result<()> {
    let kv = out.join(METRICS_KV_FILE);
    io_context(std::fs::write(&kv, metrics.to_key_values()), || format!("writing {}", kv.display()))?;
    let table = out.join(METRICS_TABLE_FILE);
    io_context(std::fs::write(&table, metrics.to_table()), || format!("writing {}", table.display()))
}
