//! Config file layout: RunConfig fields at the top level plus an optional
//! [data] table describing the client population.

use anyhow::{bail, Context, Result};
use fgdro_core::datagen::{generate, SyntheticKind, SyntheticSpec};
use fgdro_core::{Client, ClientDataset, LossModel, ParameterVector, RunConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileConfig {
    #[serde(flatten)]
    pub run: RunConfig,
    #[serde(default)]
    pub data: Option<DataSection>,
}

/// Where the clients come from. Synthetic kinds mirror the generator
/// spec; "CSV" loads one dataset per file from `csv_dir` (sorted file
/// order) and pairs them with `model`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default = "default_kind")]
    pub kind: String,
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default)]
    pub heterogeneity: Option<f64>,
    #[serde(default)]
    pub sizes: Option<Vec<usize>>,
    #[serde(default)]
    pub size: Option<usize>,
    #[serde(default)]
    pub noise_std: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub csv_dir: Option<PathBuf>,
    #[serde(default)]
    pub model: Option<String>,
}

fn default_kind() -> String {
    "QUADRATIC_CLIENTS".into()
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            kind: default_kind(),
            dim: None,
            heterogeneity: None,
            sizes: None,
            size: None,
            noise_std: None,
            seed: None,
            csv_dir: None,
            model: None,
        }
    }
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let cfg: FileConfig = toml::from_str(&text)
            .with_context(|| format!("cannot parse config file {}", path.display()))?;
        Ok(cfg)
    }

    /// Build the client population and the zero initial model.
    pub fn build_clients(&self) -> Result<(Vec<Client>, ParameterVector)> {
        let data = self.data.clone().unwrap_or_default();
        match data.kind.as_str() {
            "QUADRATIC_CLIENTS" | "LINREG_CLIENTS" | "LOGREG_CLIENTS" => {
                let kind = match data.kind.as_str() {
                    "QUADRATIC_CLIENTS" => SyntheticKind::QuadraticClients,
                    "LINREG_CLIENTS" => SyntheticKind::LinregClients,
                    _ => SyntheticKind::LogregClients,
                };
                let n = self.run.num_clients;
                let sizes = match data.sizes {
                    Some(sizes) => sizes,
                    None => vec![data.size.unwrap_or(50); n],
                };
                let spec = SyntheticSpec {
                    kind,
                    num_clients: n,
                    dim: data.dim.unwrap_or(5),
                    heterogeneity: data.heterogeneity.unwrap_or(1.0),
                    sizes,
                    noise_std: data.noise_std.unwrap_or(0.1),
                    seed: data.seed.unwrap_or(self.run.master_seed),
                };
                let clients = generate(&spec)?;
                Ok((clients, ParameterVector::zeros(spec.dim)))
            }
            "CSV" => {
                let dir = data
                    .csv_dir
                    .as_ref()
                    .context("data.kind = \"CSV\" requires data.csv_dir")?;
                let model = match data.model.as_deref() {
                    Some("LOGISTIC") => LossModel::Logistic { l2: 0.0 },
                    Some("LEAST_SQUARES") | None => LossModel::LeastSquares { l2: 0.0 },
                    Some(other) => bail!("unknown data.model {other:?}"),
                };
                let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
                    .with_context(|| format!("cannot read {}", dir.display()))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|e| e == "csv"))
                    .collect();
                paths.sort();
                if paths.len() != self.run.num_clients {
                    bail!(
                        "found {} csv files in {}, expected num_clients = {}",
                        paths.len(),
                        dir.display(),
                        self.run.num_clients
                    );
                }
                let mut clients = Vec::new();
                let mut dim = None;
                for (i, path) in paths.iter().enumerate() {
                    let ds = ClientDataset::from_csv_file(i, path)
                        .with_context(|| format!("loading {}", path.display()))?;
                    let this_dim = ds.samples()[0].features.len();
                    match dim {
                        None => dim = Some(this_dim),
                        Some(d) if d != this_dim => {
                            bail!("feature dimension differs across client files")
                        }
                        _ => {}
                    }
                    clients.push(Client::new(model.clone(), ds));
                }
                Ok((clients, ParameterVector::zeros(dim.unwrap())))
            }
            other => bail!("unknown data.kind {other:?}"),
        }
    }
}
