//! Run artifacts: the JSON summary and the content-derived run id.

use crate::config_file::{DataSection, FileConfig};
use anyhow::Result;
use fgdro_core::{FederationRun, MetricsRecord, RunConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub round: u32,
    pub objective_value: f64,
    pub exact_grad_norm_sq: f64,
    pub worst_client_loss: f64,
    pub avg_client_loss: f64,
    pub comm_scalars_cumulative: u64,
}

impl From<&MetricsRecord> for FinalMetrics {
    fn from(record: &MetricsRecord) -> Self {
        FinalMetrics {
            round: record.round,
            objective_value: record.objective_value,
            exact_grad_norm_sq: record.exact_grad_norm_sq,
            worst_client_loss: record.worst_client_loss,
            avg_client_loss: record.avg_client_loss,
            comm_scalars_cumulative: record.comm_scalars_cumulative,
        }
    }
}

/// Echo of the effective configuration (after overrides and schedule)
/// plus the final round's metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub algorithm: String,
    pub config: RunConfig,
    pub data: DataSection,
    pub overrides: Vec<String>,
    pub schedule: Option<String>,
    pub final_metrics: FinalMetrics,
}

impl RunSummary {
    pub fn new(
        effective: &FileConfig,
        overrides: &[String],
        schedule: Option<&str>,
        run: &FederationRun,
    ) -> Self {
        let last = run.history.last().expect("run has at least one round");
        let mut summary = RunSummary {
            run_id: String::new(),
            algorithm: effective.run.algorithm.name().to_string(),
            config: effective.run.clone(),
            data: effective.data.clone().unwrap_or_default(),
            overrides: overrides.to_vec(),
            schedule: schedule.map(str::to_string),
            final_metrics: last.into(),
        };
        summary.run_id = summary.compute_run_id();
        summary
    }

    fn compute_run_id(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_string(&self.config).unwrap());
        hasher.update(serde_json::to_string(&self.final_metrics).unwrap());
        let digest = hasher.finalize();
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
