//! Synthetic heterogeneous client generators and the Dirichlet
//! label partitioner.
//!
//! The quadratic generator is the canonical acceptance fixture: each
//! client's loss has a closed form, so the robust objectives and their
//! gradients are exact there.

use crate::error::{FgdroError, Result};
use crate::models::{Client, ClientDataset, LossModel, Sample};
use crate::params::ParameterVector;
use crate::rng::derive_tagged_rng;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

const TAG_ANCHORS: u64 = 10;
const TAG_SAMPLES: u64 = 11;
const TAG_PARTITION: u64 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SyntheticKind {
    #[serde(rename = "QUADRATIC_CLIENTS")]
    QuadraticClients,
    #[serde(rename = "LINREG_CLIENTS")]
    LinregClients,
    #[serde(rename = "LOGREG_CLIENTS")]
    LogregClients,
}

/// Specification of a synthetic heterogeneous client population.
///
/// Per-client optima are `shared + delta_i` where each coordinate of
/// `delta_i` is Gaussian with standard deviation `heterogeneity`;
/// `sizes` sets the (possibly imbalanced) per-client sample counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub num_clients: usize,
    pub dim: usize,
    pub heterogeneity: f64,
    pub sizes: Vec<usize>,
    pub noise_std: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(FgdroError::InvalidDataSpec("num_clients must be positive".into()));
        }
        if self.dim == 0 {
            return Err(FgdroError::InvalidDataSpec("dim must be positive".into()));
        }
        if self.sizes.len() != self.num_clients {
            return Err(FgdroError::InvalidDataSpec(format!(
                "sizes has length {}, expected num_clients = {}",
                self.sizes.len(),
                self.num_clients
            )));
        }
        if self.sizes.iter().any(|&s| s == 0) {
            return Err(FgdroError::InvalidDataSpec("all client sizes must be positive".into()));
        }
        if self.heterogeneity < 0.0 || self.noise_std < 0.0 {
            return Err(FgdroError::InvalidDataSpec(
                "heterogeneity and noise_std must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Convenience: equal sizes for every client.
    pub fn uniform_sizes(kind: SyntheticKind, n: usize, dim: usize, het: f64, size: usize, noise_std: f64, seed: u64) -> Self {
        SyntheticSpec {
            kind,
            num_clients: n,
            dim,
            heterogeneity: het,
            sizes: vec![size; n],
            noise_std,
            seed,
        }
    }
}

/// Per-client ground-truth parameters: shared point plus a Gaussian
/// offset scaled by the heterogeneity.
fn client_optima(spec: &SyntheticSpec) -> Vec<ParameterVector> {
    let mut rng = derive_tagged_rng(spec.seed, TAG_ANCHORS);
    let shared: Vec<f64> = (0..spec.dim)
        .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
        .collect();
    (0..spec.num_clients)
        .map(|_| {
            let values: Vec<f64> = shared
                .iter()
                .map(|&base| {
                    let delta: f64 =
                        <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
                    base + spec.heterogeneity * delta
                })
                .collect();
            ParameterVector::from_vec(values)
        })
        .collect()
}

/// Generate the client population for a spec. Deterministic in the seed;
/// dataset lengths equal `sizes` exactly.
pub fn generate(spec: &SyntheticSpec) -> Result<Vec<Client>> {
    spec.validate()?;
    let optima = client_optima(spec);
    let mut rng = derive_tagged_rng(spec.seed, TAG_SAMPLES);

    let mut clients = Vec::with_capacity(spec.num_clients);
    for (i, opt) in optima.iter().enumerate() {
        let n_samples = spec.sizes[i];
        let (model, samples) = match spec.kind {
            SyntheticKind::QuadraticClients => {
                // deterministic client: the loss ignores samples entirely
                let samples = vec![Sample::new(vec![0.0; spec.dim], 0.0); n_samples];
                (LossModel::Quadratic { anchor: opt.clone() }, samples)
            }
            SyntheticKind::LinregClients => {
                let samples = (0..n_samples)
                    .map(|_| {
                        let x: Vec<f64> = (0..spec.dim)
                            .map(|_| {
                                <StandardNormal as Distribution<f64>>::sample(
                                    &StandardNormal,
                                    &mut rng,
                                )
                            })
                            .collect();
                        let noise: f64 = <StandardNormal as Distribution<f64>>::sample(
                            &StandardNormal,
                            &mut rng,
                        );
                        let y = opt
                            .iter()
                            .zip(x.iter())
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            + spec.noise_std * noise;
                        Sample::new(x, y)
                    })
                    .collect();
                (LossModel::LeastSquares { l2: 0.0 }, samples)
            }
            SyntheticKind::LogregClients => {
                let samples = (0..n_samples)
                    .map(|_| {
                        let x: Vec<f64> = (0..spec.dim)
                            .map(|_| {
                                <StandardNormal as Distribution<f64>>::sample(
                                    &StandardNormal,
                                    &mut rng,
                                )
                            })
                            .collect();
                        let margin: f64 =
                            opt.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
                        let mut label = if margin > 0.0 { 1.0 } else { 0.0 };
                        // label flips with probability noise_std
                        if rng.gen::<f64>() < spec.noise_std {
                            label = 1.0 - label;
                        }
                        Sample::new(x, label)
                    })
                    .collect();
                (LossModel::Logistic { l2: 0.0 }, samples)
            }
        };
        clients.push(Client::new(model, ClientDataset::new(i, samples)?));
    }
    Ok(clients)
}

/// Dirichlet non-IID partition of labelled samples across clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletPartitionSpec {
    pub alpha: f64,
    pub num_clients: usize,
    pub labels: Vec<u32>,
    pub seed: u64,
}

/// Result of a partition: per-client sample index lists plus a flag for
/// clients that received nothing (possible at small alpha).
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub assignments: Vec<Vec<usize>>,
    pub empty_clients: Vec<usize>,
}

/// For each class, draw proportions from Dirichlet(alpha * 1_N) and hand
/// that class's indices to clients by those proportions; rounding
/// remainders go to the client with the largest drawn share. Every index
/// is assigned exactly once.
pub fn dirichlet_partition(spec: &DirichletPartitionSpec) -> Result<Partition> {
    if !(spec.alpha > 0.0) {
        return Err(FgdroError::InvalidDataSpec(format!(
            "alpha must be > 0, got {}",
            spec.alpha
        )));
    }
    if spec.num_clients == 0 {
        return Err(FgdroError::InvalidDataSpec("num_clients must be positive".into()));
    }
    if spec.labels.is_empty() {
        return Err(FgdroError::InvalidDataSpec("labels must be nonempty".into()));
    }

    let mut rng = derive_tagged_rng(spec.seed, TAG_PARTITION);
    let gamma = Gamma::new(spec.alpha, 1.0)
        .map_err(|e| FgdroError::InvalidDataSpec(format!("bad alpha: {e}")))?;

    let mut classes: Vec<u32> = spec.labels.to_vec();
    classes.sort_unstable();
    classes.dedup();

    let mut assignments: Vec<Vec<usize>> = vec![Vec::new(); spec.num_clients];
    for class in classes {
        let indices: Vec<usize> = spec
            .labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();

        // Dirichlet draw via normalized Gamma variates
        let mut draws: Vec<f64> = (0..spec.num_clients)
            .map(|_| gamma.sample(&mut rng).max(f64::MIN_POSITIVE))
            .collect();
        let total: f64 = draws.iter().sum();
        for d in draws.iter_mut() {
            *d /= total;
        }

        let n_class = indices.len();
        let mut counts: Vec<usize> = draws.iter().map(|p| (p * n_class as f64).floor() as usize).collect();
        let assigned: usize = counts.iter().sum();
        let largest = draws
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        counts[largest] += n_class - assigned;

        let mut cursor = 0;
        for (client, &count) in counts.iter().enumerate() {
            assignments[client].extend_from_slice(&indices[cursor..cursor + count]);
            cursor += count;
        }
    }

    let empty_clients = assignments
        .iter()
        .enumerate()
        .filter(|(_, a)| a.is_empty())
        .map(|(i, _)| i)
        .collect();
    Ok(Partition {
        assignments,
        empty_clients,
    })
}

/// Largest-to-smallest dataset size and class count ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct ImbalanceReport {
    pub client_imbalance_ratio: f64,
    /// None when the data is not classification-like (non-integral targets).
    pub class_imbalance_ratio: Option<f64>,
    /// Set when some client had zero samples (ratio is infinite).
    pub has_empty_client: bool,
}

/// Imbalance ratios over explicit per-client sizes and (optionally)
/// per-sample class labels. A zero-size client makes the client ratio
/// infinite and sets the warning flag.
pub fn imbalance_from_sizes(sizes: &[usize], labels: Option<&[u32]>) -> Result<ImbalanceReport> {
    if sizes.is_empty() {
        return Err(FgdroError::InvalidDataSpec("no clients".into()));
    }
    let max = *sizes.iter().max().unwrap();
    let min = *sizes.iter().min().unwrap();
    let (client_ratio, has_empty) = if min == 0 {
        (f64::INFINITY, true)
    } else {
        (max as f64 / min as f64, false)
    };

    let class_ratio = labels.and_then(|labels| {
        let mut counts = std::collections::BTreeMap::new();
        for &l in labels {
            *counts.entry(l).or_insert(0usize) += 1;
        }
        let largest = counts.values().max().copied()?;
        let smallest = counts.values().min().copied()?;
        Some(largest as f64 / smallest as f64)
    });

    Ok(ImbalanceReport {
        client_imbalance_ratio: client_ratio,
        class_imbalance_ratio: class_ratio,
        has_empty_client: has_empty,
    })
}

/// Imbalance ratios for a generated client population. The class ratio is
/// computed only when every target is integral (classification); for
/// regression data it is reported as not applicable.
pub fn imbalance_report(datasets: &[&ClientDataset]) -> Result<ImbalanceReport> {
    let sizes: Vec<usize> = datasets.iter().map(|d| d.len()).collect();
    let all_integral = datasets
        .iter()
        .flat_map(|d| d.samples())
        .all(|s| s.target.fract() == 0.0 && s.target.abs() < u32::MAX as f64);
    let labels: Option<Vec<u32>> = all_integral.then(|| {
        datasets
            .iter()
            .flat_map(|d| d.samples())
            .map(|s| s.target as u32)
            .collect()
    });
    imbalance_from_sizes(&sizes, labels.as_deref())
}
