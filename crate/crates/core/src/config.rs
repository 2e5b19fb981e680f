//! Run configuration: hyperparameters, seeds, and algorithm selection.

use crate::error::{FgdroError, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;

/// Which federated optimizer drives the local steps and aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "FGDRO_CVAR")]
    FgdroCvar,
    #[serde(rename = "FGDRO_KL")]
    FgdroKl,
    #[serde(rename = "FGDRO_KL_ADAM")]
    FgdroKlAdam,
    #[serde(rename = "LOCAL_ADAM")]
    LocalAdam,
    #[serde(rename = "FEDAVG")]
    FedAvg,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::FgdroCvar,
        Algorithm::FgdroKl,
        Algorithm::FgdroKlAdam,
        Algorithm::LocalAdam,
        Algorithm::FedAvg,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::FgdroCvar => "FGDRO_CVAR",
            Algorithm::FgdroKl => "FGDRO_KL",
            Algorithm::FgdroKlAdam => "FGDRO_KL_ADAM",
            Algorithm::LocalAdam => "LOCAL_ADAM",
            Algorithm::FedAvg => "FEDAVG",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = FgdroError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "FGDRO_CVAR" => Ok(Algorithm::FgdroCvar),
            "FGDRO_KL" => Ok(Algorithm::FgdroKl),
            "FGDRO_KL_ADAM" => Ok(Algorithm::FgdroKlAdam),
            "LOCAL_ADAM" => Ok(Algorithm::LocalAdam),
            "FEDAVG" => Ok(Algorithm::FedAvg),
            other => Err(FgdroError::InvalidConfig(format!(
                "unknown algorithm {other:?}"
            ))),
        }
    }
}

/// All hyperparameters of a federated run.
///
/// `eta` is the model step size (eta1 of the CVaR method); `eta2` is the
/// threshold step size used only by FGDRO_CVAR and defaults to `eta`.
/// The beta schedules suggested by theory (e.g. beta1 ~ 1/sqrt(R*I)) are
/// computed by the caller; here every coefficient is a plain constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub num_clients: usize,
    pub rounds: u32,
    pub local_steps: u32,
    pub eta: f64,
    #[serde(default)]
    pub eta2: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub beta4: f64,
    pub lambda: f64,
    pub cvar_k: usize,
    pub tau: f64,
    pub batch_size: usize,
    pub master_seed: u64,
    pub algorithm: Algorithm,
}

impl RunConfig {
    /// Threshold step size for FGDRO_CVAR (falls back to `eta`).
    pub fn eta_s(&self) -> f64 {
        self.eta2.unwrap_or(self.eta)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| FgdroError::ConfigFile(e.to_string()))
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Override a field by name with a string value; used for CLI
    /// `key=value` overrides. Only RunConfig fields are accepted.
    pub fn set_field(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| {
                FgdroError::InvalidConfig(format!("cannot parse {value:?} for field {key}"))
            })
        }
        match key {
            "num_clients" => self.num_clients = parse(key, value)?,
            "rounds" => self.rounds = parse(key, value)?,
            "local_steps" => self.local_steps = parse(key, value)?,
            "eta" => self.eta = parse(key, value)?,
            "eta2" => self.eta2 = Some(parse(key, value)?),
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "beta3" => self.beta3 = parse(key, value)?,
            "beta4" => self.beta4 = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "cvar_k" => self.cvar_k = parse(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "master_seed" => self.master_seed = parse(key, value)?,
            "algorithm" => self.algorithm = value.parse()?,
            other => {
                return Err(FgdroError::InvalidConfig(format!(
                    "unknown RunConfig field {other:?}"
                )))
            }
        }
        Ok(())
    }

    /// Apply the step-size schedule suggested by the convergence theorems,
    /// with unit constants: eta = 1/R^(3/2), beta1 = 1/R for FGDRO_CVAR;
    /// eta = beta1 = 1/sqrt(R*I) for the KL family and the ERM baselines.
    pub fn apply_paper_schedule(&mut self) {
        let r = self.rounds as f64;
        let i = self.local_steps as f64;
        match self.algorithm {
            Algorithm::FgdroCvar => {
                self.eta = 1.0 / r.powf(1.5);
                self.eta2 = Some(1.0 / r.powf(1.5));
                self.beta1 = (1.0 / r).min(1.0);
            }
            _ => {
                self.eta = 1.0 / (r * i).sqrt();
                self.beta1 = (1.0 / (r * i).sqrt()).min(1.0);
            }
        }
    }
}

/// A single violated RunConfig invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigViolation {
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for ConfigViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Check every RunConfig invariant; the returned list is empty iff the
/// configuration is valid.
pub fn validate_config(cfg: &RunConfig) -> Vec<ConfigViolation> {
    let mut violations = Vec::new();
    let mut push = |field: &'static str, message: String| {
        violations.push(ConfigViolation { field, message });
    };

    if cfg.num_clients == 0 {
        push("num_clients", "must be positive".into());
    }
    if cfg.rounds == 0 {
        push("rounds", "must be positive".into());
    }
    if cfg.local_steps == 0 {
        push("local_steps", "must be positive".into());
    }
    if !(cfg.eta > 0.0) {
        push("eta", format!("step size must be strictly positive, got {}", cfg.eta));
    }
    if let Some(eta2) = cfg.eta2 {
        if !(eta2 > 0.0) {
            push("eta2", format!("step size must be strictly positive, got {eta2}"));
        }
    }
    for (field, beta) in [
        ("beta1", cfg.beta1),
        ("beta2", cfg.beta2),
        ("beta3", cfg.beta3),
        ("beta4", cfg.beta4),
    ] {
        if !(beta > 0.0 && beta <= 1.0) {
            push(field, format!("beta out of range (0, 1], got {beta}"));
        }
    }
    if !(cfg.lambda > 0.0) {
        push("lambda", format!("lambda must be > 0, got {}", cfg.lambda));
    }
    if cfg.cvar_k < 1 || cfg.cvar_k > cfg.num_clients {
        push(
            "cvar_k",
            format!(
                "K out of range [1, N={}], got {}",
                cfg.num_clients, cfg.cvar_k
            ),
        );
    }
    if !(cfg.tau > 0.0) {
        push("tau", format!("tau must be > 0, got {}", cfg.tau));
    }
    if cfg.batch_size == 0 {
        push("batch_size", "must be positive".into());
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config() -> RunConfig {
        RunConfig {
            num_clients: 4,
            rounds: 10,
            local_steps: 5,
            eta: 0.1,
            eta2: None,
            beta1: 0.1,
            beta2: 0.1,
            beta3: 0.1,
            beta4: 0.1,
            lambda: 1.0,
            cvar_k: 4,
            tau: 1e-4,
            batch_size: 8,
            master_seed: 42,
            algorithm: Algorithm::FgdroKl,
        }
    }

    #[test]
    fn valid_config_passes() {
        // K = N, lambda = 1, all beta = 0.1
        assert!(validate_config(&base_config()).is_empty());
    }

    #[test]
    fn k_zero_is_out_of_range() {
        let mut cfg = base_config();
        cfg.cvar_k = 0;
        let violations = validate_config(&cfg);
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].field, "cvar_k");
        assert!(violations[0].message.contains("K out of range"));
    }

    #[test]
    fn beta_above_one_is_out_of_range() {
        let mut cfg = base_config();
        cfg.beta1 = 1.5;
        let violations = validate_config(&cfg);
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].field, "beta1");
        assert!(violations[0].message.contains("beta out of range"));
    }

    #[test]
    fn toml_round_trip_keeps_field_names() {
        let text = r#"
            num_clients = 4
            rounds = 10
            local_steps = 5
            eta = 0.1
            beta1 = 0.1
            beta2 = 0.1
            beta3 = 0.1
            beta4 = 0.1
            lambda = 1.0
            cvar_k = 4
            tau = 1e-4
            batch_size = 8
            master_seed = 42
            algorithm = "FGDRO_KL"
        "#;
        let cfg = RunConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg, base_config());
    }

    #[test]
    fn override_rejects_unknown_field() {
        let mut cfg = base_config();
        assert!(cfg.set_field("no_such_field", "1").is_err());
        cfg.set_field("eta", "0.01").unwrap();
        assert_eq!(cfg.eta, 0.01);
    }

    #[test]
    fn paper_schedule_values() {
        let mut cfg = base_config();
        cfg.rounds = 400;
        cfg.local_steps = 8;
        cfg.apply_paper_schedule();
        assert!((cfg.eta - 1.0 / 3200f64.sqrt()).abs() < 1e-15);
        assert_eq!(cfg.eta, cfg.beta1);

        cfg.algorithm = Algorithm::FgdroCvar;
        cfg.apply_paper_schedule();
        assert!((cfg.eta - 1.0 / 400f64.powf(1.5)).abs() < 1e-18);
        assert!((cfg.beta1 - 1.0 / 400.0).abs() < 1e-15);
    }
}
