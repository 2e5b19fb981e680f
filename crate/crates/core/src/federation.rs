//! Round/step execution engine.
//!
//! Drives R rounds of I local steps per client, aggregates the algorithm's
//! field set at round boundaries, and records one metrics row per round
//! computed with the exact objective oracles on the post-aggregation
//! averaged model.
//!
//! Determinism: every client's minibatches come from a stream keyed by
//! (master_seed, client, round), and aggregation always reduces in client
//! index order, so sequential and parallel schedules produce bit-identical
//! results.

use crate::algorithms::{
    aggregate, apply_broadcast, communication_cost, local_step, AggregationSpec, ClientState,
};
use crate::config::{validate_config, Algorithm, RunConfig};
use crate::error::{FgdroError, Result};
use crate::metrics::MetricsRecord;
use crate::models::{batch_mean_loss, Client, Sample};
use crate::objectives::{
    cvar_optimal_value, kl_gradient, kl_objective, prox_point, CvarObjective, KlObjective,
    ProxDiagnostic,
};
use crate::params::ParameterVector;
use crate::rng::{derive_rng, derive_tagged_rng};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;

/// Engine knobs that are not part of `RunConfig`. Results depend only on
/// `RunConfig` (and the prox diagnostic parameters for the CVaR
/// stationarity column), never on the execution schedule.
#[derive(Debug, Clone)]
pub struct EngineOptions {
    /// Fan client loops out to a worker pool; `false` is the sequential
    /// reference mode. Both produce identical runs.
    pub parallel: bool,
    /// Record the across-client averaged iterate every `stride`-th local
    /// step (None disables the log).
    pub iterate_log_stride: Option<usize>,
    /// Keep a post-broadcast snapshot of every client state per round
    /// (consensus inspection).
    pub record_round_states: bool,
    /// Measure per-round wall time into `wall_ms`. Off by default so that
    /// output files are byte-stable; when off the column is 0.
    pub measure_wall_time: bool,
    /// Proximal diagnostic used for the CVaR stationarity column.
    pub prox: ProxDiagnostic,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions {
            parallel: false,
            iterate_log_stride: None,
            record_round_states: false,
            measure_wall_time: false,
            prox: ProxDiagnostic::with_rho(2.0),
        }
    }
}

/// Averaged iterate at one (round, step) grid point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterateLogEntry {
    pub round: u32,
    pub step: u32,
    pub w: ParameterVector,
}

/// A completed (or resumable) federated run.
#[derive(Debug, Clone)]
pub struct FederationRun {
    pub cfg: RunConfig,
    pub clients: Vec<Client>,
    pub spec: AggregationSpec,
    /// One record per completed round.
    pub history: Vec<MetricsRecord>,
    /// Post-broadcast client states after the final aggregation.
    pub final_states: Vec<ClientState>,
    /// The final aggregation template (holds the final averaged model).
    pub template: ClientState,
    pub iterate_log: Option<Vec<IterateLogEntry>>,
    /// Post-broadcast states per round, when recorded.
    pub round_states: Option<Vec<Vec<ClientState>>>,
    prox: ProxDiagnostic,
}

impl FederationRun {
    /// The last averaged model (the practical output point).
    pub fn final_w(&self) -> &ParameterVector {
        &self.template.w
    }

    /// Final averaged CVaR threshold.
    pub fn final_s(&self) -> f64 {
        self.template.s
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            cfg: self.cfg.clone(),
            completed_rounds: self.history.last().map_or(0, |m| m.round),
            comm_scalars_cumulative: self
                .history
                .last()
                .map_or(0, |m| m.comm_scalars_cumulative),
            template: self.template.clone(),
            states: self.final_states.clone(),
        }
    }
}

/// Serializable snapshot of the engine state after some completed round.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub cfg: RunConfig,
    pub completed_rounds: u32,
    pub comm_scalars_cumulative: u64,
    pub template: ClientState,
    pub states: Vec<ClientState>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| FgdroError::ConfigFile(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| FgdroError::ConfigFile(e.to_string()))
    }
}

fn check_preconditions(cfg: &RunConfig, clients: &[Client], initial_w: &ParameterVector) -> Result<()> {
    let violations = validate_config(cfg);
    if !violations.is_empty() {
        let joined: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(FgdroError::InvalidConfig(joined.join("; ")));
    }
    if clients.len() != cfg.num_clients {
        return Err(FgdroError::InvalidConfig(format!(
            "num_clients = {} but {} clients supplied",
            cfg.num_clients,
            clients.len()
        )));
    }
    for client in clients {
        // surfaces dimension mismatches before the run starts
        client.mean_loss(initial_w)?;
    }
    Ok(())
}

fn draw_batch<'a>(
    rng: &mut impl Rng,
    samples: &'a [Sample],
    batch_size: usize,
) -> Vec<&'a Sample> {
    (0..batch_size)
        .map(|_| &samples[rng.gen_range(0..samples.len())])
        .collect()
}

/// Initial template and per-client states.
///
/// w comes from the caller; s, m, q start at zero. For the KL family, u
/// warm-starts at the batch loss of an initialization draw (round-0
/// stream) and v at the across-client mean of exp(u/lambda); for CVaR,
/// u starts at 0 as written. Warm-starting u avoids a long transient in
/// exp(u/lambda).
fn initialize(
    cfg: &RunConfig,
    clients: &[Client],
    initial_w: &ParameterVector,
) -> Result<(ClientState, Vec<ClientState>)> {
    let dim = initial_w.dim();
    let mut states: Vec<ClientState> = (0..cfg.num_clients)
        .map(|_| {
            let mut st = ClientState::new(dim);
            st.w = initial_w.clone();
            st
        })
        .collect();

    let kl_family = matches!(cfg.algorithm, Algorithm::FgdroKl | Algorithm::FgdroKlAdam);
    if kl_family {
        for (i, state) in states.iter_mut().enumerate() {
            let mut rng = derive_rng(cfg.master_seed, i, 0);
            let batch = draw_batch(&mut rng, clients[i].data.samples(), cfg.batch_size);
            let owned: Vec<Sample> = batch.into_iter().cloned().collect();
            state.u = batch_mean_loss(&clients[i].model, initial_w, &owned)?;
        }
        let v_init = states
            .iter()
            .map(|st| (st.u / cfg.lambda).min(700.0).exp())
            .sum::<f64>()
            / cfg.num_clients as f64;
        for state in states.iter_mut() {
            state.v = v_init;
        }
    }

    let mut template = ClientState::new(dim);
    template.w = initial_w.clone();
    template.v = states[0].v;
    Ok((template, states))
}

struct ClientRoundOutput {
    state: ClientState,
    /// (step, w) snapshots for the iterate log.
    snapshots: Vec<(u32, ParameterVector)>,
}

fn run_client_round(
    cfg: &RunConfig,
    client_id: usize,
    client: &Client,
    mut state: ClientState,
    round: u32,
    iterate_stride: Option<usize>,
) -> Result<ClientRoundOutput> {
    let mut rng = derive_rng(cfg.master_seed, client_id, round);
    let mut snapshots = Vec::new();
    for step in 1..=cfg.local_steps {
        let batch = draw_batch(&mut rng, client.data.samples(), cfg.batch_size);
        let owned: Vec<Sample> = batch.into_iter().cloned().collect();
        let result = local_step(cfg.algorithm, state, &owned, cfg, &client.model).map_err(
            |err| match err {
                FgdroError::NonFinite { quantity, .. } => FgdroError::NonFinite {
                    quantity,
                    client: client_id,
                    round,
                    step,
                },
                other => other,
            },
        )?;
        state = result.state;
        if let Some(stride) = iterate_stride {
            let global_step = (round as usize - 1) * cfg.local_steps as usize + step as usize;
            if (global_step - 1) % stride == 0 {
                snapshots.push((step, state.w.clone()));
            }
        }
    }
    Ok(ClientRoundOutput { state, snapshots })
}

/// Per-round diagnostics on the post-aggregation averaged model.
fn round_metrics(
    cfg: &RunConfig,
    clients: &[Client],
    template: &ClientState,
    prox: &ProxDiagnostic,
    round: u32,
    comm_scalars_cumulative: u64,
    wall_ms: u64,
) -> Result<MetricsRecord> {
    let w = &template.w;
    let losses: Vec<f64> = clients
        .iter()
        .map(|c| c.mean_loss(w))
        .collect::<Result<_>>()?;
    let worst = losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let avg = losses.iter().sum::<f64>() / losses.len() as f64;

    let (objective_value, exact_grad_norm_sq) = match cfg.algorithm {
        Algorithm::FgdroKl | Algorithm::FgdroKlAdam => {
            let obj = KlObjective::new(cfg.lambda, clients)?;
            (kl_objective(&obj, w)?, kl_gradient(&obj, w)?.norm_sq())
        }
        Algorithm::FgdroCvar => {
            let obj = CvarObjective::new(cfg.cvar_k, clients)?;
            let (value, _) = cvar_optimal_value(&obj, w)?;
            let diag = prox_point(prox, &obj, w, template.s)?;
            (value, diag.dist_sq)
        }
        Algorithm::LocalAdam | Algorithm::FedAvg => {
            let mut grad = ParameterVector::zeros(w.dim());
            for client in clients {
                grad.add_scaled(&client.mean_grad(w)?, 1.0);
            }
            grad.scale(1.0 / clients.len() as f64);
            (avg, grad.norm_sq())
        }
    };

    Ok(MetricsRecord {
        round,
        objective_value,
        exact_grad_norm_sq,
        worst_client_loss: worst,
        avg_client_loss: avg,
        comm_scalars_cumulative,
        wall_ms,
    })
}

/// Execute a full federated run.
pub fn run(
    cfg: &RunConfig,
    clients: Vec<Client>,
    initial_w: &ParameterVector,
    options: &EngineOptions,
) -> Result<FederationRun> {
    check_preconditions(cfg, &clients, initial_w)?;
    let (template, states) = initialize(cfg, &clients, initial_w)?;
    run_rounds(cfg, clients, template, states, 1, 0, options)
}

/// Continue a checkpointed run up to `ckpt.cfg.rounds` total rounds.
pub fn resume(ckpt: &Checkpoint, clients: Vec<Client>, options: &EngineOptions) -> Result<FederationRun> {
    check_preconditions(&ckpt.cfg, &clients, &ckpt.template.w)?;
    if ckpt.states.len() != clients.len() {
        return Err(FgdroError::InvalidConfig(format!(
            "checkpoint has {} states but {} clients supplied",
            ckpt.states.len(),
            clients.len()
        )));
    }
    run_rounds(
        &ckpt.cfg,
        clients,
        ckpt.template.clone(),
        ckpt.states.clone(),
        ckpt.completed_rounds + 1,
        ckpt.comm_scalars_cumulative,
        options,
    )
}

fn run_rounds(
    cfg: &RunConfig,
    clients: Vec<Client>,
    mut template: ClientState,
    mut states: Vec<ClientState>,
    first_round: u32,
    comm_start: u64,
    options: &EngineOptions,
) -> Result<FederationRun> {
    let spec = AggregationSpec::for_algorithm(cfg.algorithm);
    let per_round_scalars = cfg.num_clients as u64 * communication_cost(&spec, template.w.dim());

    let mut history = Vec::new();
    let mut iterate_log: Option<Vec<IterateLogEntry>> =
        options.iterate_log_stride.map(|_| Vec::new());
    let mut round_states: Option<Vec<Vec<ClientState>>> =
        options.record_round_states.then(Vec::new);
    let mut comm_scalars = comm_start;

    for state in states.iter_mut() {
        apply_broadcast(state, &template, &spec);
    }

    for round in first_round..=cfg.rounds {
        let started = options.measure_wall_time.then(Instant::now);

        let outputs: Vec<Result<ClientRoundOutput>> = if options.parallel {
            states
                .par_drain(..)
                .enumerate()
                .map(|(i, st)| {
                    run_client_round(cfg, i, &clients[i], st, round, options.iterate_log_stride)
                })
                .collect()
        } else {
            states
                .drain(..)
                .enumerate()
                .map(|(i, st)| {
                    run_client_round(cfg, i, &clients[i], st, round, options.iterate_log_stride)
                })
                .collect()
        };

        let mut snapshot_sets = Vec::with_capacity(outputs.len());
        for output in outputs {
            let output = output?;
            states.push(output.state);
            snapshot_sets.push(output.snapshots);
        }

        if let Some(log) = iterate_log.as_mut() {
            // all clients snapshot the same steps; average across clients
            let per_client_count = snapshot_sets[0].len();
            for idx in 0..per_client_count {
                let step = snapshot_sets[0][idx].0;
                let mean = ParameterVector::mean_of(snapshot_sets.iter().map(|s| &s[idx].1));
                log.push(IterateLogEntry { round, step, w: mean });
            }
        }

        template = aggregate(&states, &spec)?;
        for state in states.iter_mut() {
            apply_broadcast(state, &template, &spec);
        }
        debug_assert!(states.iter().all(|st| {
            (!spec.w || st.w == template.w)
                && (!spec.s || st.s == template.s)
                && (!spec.v || st.v == template.v)
                && (!spec.m || st.m == template.m)
                && (!spec.q || st.q == template.q)
        }));
        if let Some(recorded) = round_states.as_mut() {
            recorded.push(states.clone());
        }

        comm_scalars += per_round_scalars;
        let wall_ms = started.map_or(0, |t| t.elapsed().as_millis() as u64);
        history.push(round_metrics(
            cfg,
            &clients,
            &template,
            &options.prox,
            round,
            comm_scalars,
            wall_ms,
        )?);
    }

    Ok(FederationRun {
        cfg: cfg.clone(),
        clients,
        spec,
        history,
        final_states: states,
        template,
        iterate_log,
        round_states,
        prox: options.prox,
    })
}

/// The paper's randomized output point: the across-client average of the
/// iterate at a uniformly sampled (round, step) from the recorded grid.
pub fn select_output(run: &FederationRun, selection_seed: u64) -> Result<ParameterVector> {
    let log = run.iterate_log.as_ref().ok_or(FgdroError::IterateLogDisabled)?;
    if log.is_empty() {
        return Err(FgdroError::IterateLogDisabled);
    }
    let mut rng = derive_tagged_rng(selection_seed, 1);
    let idx = rng.gen_range(0..log.len());
    Ok(log[idx].w.clone())
}

/// Loss spread and the algorithm-appropriate stationarity diagnostic at
/// an arbitrary model point.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub worst_client_loss: f64,
    pub avg_client_loss: f64,
    pub objective_value: f64,
    /// Exact squared gradient norm (KL family, ERM) or proximal dist_sq
    /// (CVaR).
    pub stationarity: f64,
}

pub fn evaluate(run: &FederationRun, w: &ParameterVector) -> Result<Evaluation> {
    let losses: Vec<f64> = run
        .clients
        .iter()
        .map(|c| c.mean_loss(w))
        .collect::<Result<_>>()?;
    let worst = losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let avg = losses.iter().sum::<f64>() / losses.len() as f64;

    let (objective_value, stationarity) = match run.cfg.algorithm {
        Algorithm::FgdroKl | Algorithm::FgdroKlAdam => {
            let obj = KlObjective::new(run.cfg.lambda, &run.clients)?;
            (kl_objective(&obj, w)?, kl_gradient(&obj, w)?.norm_sq())
        }
        Algorithm::FgdroCvar => {
            let obj = CvarObjective::new(run.cfg.cvar_k, &run.clients)?;
            let (value, _) = cvar_optimal_value(&obj, w)?;
            let diag = prox_point(&run.prox, &obj, w, run.final_s())?;
            (value, diag.dist_sq)
        }
        Algorithm::LocalAdam | Algorithm::FedAvg => {
            let mut grad = ParameterVector::zeros(w.dim());
            for client in &run.clients {
                grad.add_scaled(&client.mean_grad(w)?, 1.0);
            }
            grad.scale(1.0 / run.clients.len() as f64);
            (avg, grad.norm_sq())
        }
    };

    Ok(Evaluation {
        worst_client_loss: worst,
        avg_client_loss: avg,
        objective_value,
        stationarity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ClientDataset, LossModel};

    fn quad_clients(anchors: &[&[f64]]) -> Vec<Client> {
        anchors
            .iter()
            .enumerate()
            .map(|(i, a)| {
                Client::new(
                    LossModel::Quadratic {
                        anchor: ParameterVector::from_vec(a.to_vec()),
                    },
                    ClientDataset::new(i, vec![crate::models::Sample::new(vec![0.0; a.len()], 0.0)])
                        .unwrap(),
                )
            })
            .collect()
    }

    fn base_cfg(algorithm: Algorithm, n: usize) -> RunConfig {
        RunConfig {
            num_clients: n,
            rounds: 3,
            local_steps: 2,
            eta: 0.1,
            eta2: None,
            beta1: 0.5,
            beta2: 0.5,
            beta3: 0.5,
            beta4: 0.5,
            lambda: 1.0,
            cvar_k: 1,
            tau: 1e-4,
            batch_size: 1,
            master_seed: 7,
            algorithm,
        }
    }

    #[test]
    fn single_fedavg_step_is_one_gradient_step() {
        let clients = quad_clients(&[&[2.0]]);
        let mut cfg = base_cfg(Algorithm::FedAvg, 1);
        cfg.rounds = 1;
        cfg.local_steps = 1;
        let w0 = ParameterVector::from_vec(vec![0.5]);
        let run = run(&cfg, clients, &w0, &EngineOptions::default()).unwrap();
        // w1 = w0 - eta * (w0 - a) = 0.5 - 0.1 * (-1.5)
        assert!((run.final_w()[0] - 0.65).abs() < 1e-15);
        assert_eq!(run.history.len(), 1);
    }

    #[test]
    fn rerun_is_bit_identical() {
        let cfg = base_cfg(Algorithm::FgdroKl, 3);
        let clients = quad_clients(&[&[0.0, 1.0], &[1.0, 0.0], &[2.0, 2.0]]);
        let w0 = ParameterVector::zeros(2);
        let a = run(&cfg, clients.clone(), &w0, &EngineOptions::default()).unwrap();
        let b = run(&cfg, clients, &w0, &EngineOptions::default()).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.final_states, b.final_states);
    }

    #[test]
    fn parallel_matches_sequential() {
        for algorithm in Algorithm::ALL {
            let mut cfg = base_cfg(algorithm, 4);
            cfg.rounds = 5;
            let clients = quad_clients(&[&[0.0], &[1.0], &[2.0], &[-1.0]]);
            let w0 = ParameterVector::zeros(1);
            let seq = run(&cfg, clients.clone(), &w0, &EngineOptions::default()).unwrap();
            let par_opts = EngineOptions {
                parallel: true,
                ..EngineOptions::default()
            };
            let par = run(&cfg, clients, &w0, &par_opts).unwrap();
            assert_eq!(seq.history, par.history, "{algorithm}");
            assert_eq!(seq.final_states, par.final_states, "{algorithm}");
        }
    }

    #[test]
    fn checkpoint_resume_matches_longer_run() {
        for algorithm in Algorithm::ALL {
            let mut cfg = base_cfg(algorithm, 2);
            cfg.rounds = 2;
            let clients = quad_clients(&[&[0.0], &[3.0]]);
            let w0 = ParameterVector::from_vec(vec![1.0]);
            let full = run(&cfg, clients.clone(), &w0, &EngineOptions::default()).unwrap();

            let mut short_cfg = cfg.clone();
            short_cfg.rounds = 1;
            let short = run(&short_cfg, clients.clone(), &w0, &EngineOptions::default()).unwrap();
            let mut ckpt = short.to_checkpoint();
            ckpt.cfg.rounds = 2;
            let resumed = resume(&ckpt, clients, &EngineOptions::default()).unwrap();

            assert_eq!(full.final_states, resumed.final_states, "{algorithm}");
            assert_eq!(full.template, resumed.template, "{algorithm}");
        }
    }

    #[test]
    fn comm_accounting_matches_formula() {
        for algorithm in Algorithm::ALL {
            let mut cfg = base_cfg(algorithm, 3);
            cfg.rounds = 4;
            let clients = quad_clients(&[&[0.0, 0.0], &[1.0, 1.0], &[2.0, 0.5]]);
            let w0 = ParameterVector::zeros(2);
            let result = run(&cfg, clients, &w0, &EngineOptions::default()).unwrap();
            let spec = AggregationSpec::for_algorithm(algorithm);
            let expected = 4 * 3 * communication_cost(&spec, 2);
            assert_eq!(
                result.history.last().unwrap().comm_scalars_cumulative,
                expected,
                "{algorithm}"
            );
        }
    }

    #[test]
    fn select_output_is_deterministic_and_needs_log() {
        let mut cfg = base_cfg(Algorithm::FedAvg, 2);
        cfg.rounds = 1;
        cfg.local_steps = 1;
        let clients = quad_clients(&[&[0.0], &[1.0]]);
        let w0 = ParameterVector::zeros(1);

        let no_log = run(&cfg, clients.clone(), &w0, &EngineOptions::default()).unwrap();
        assert!(matches!(
            select_output(&no_log, 1),
            Err(FgdroError::IterateLogDisabled)
        ));

        let opts = EngineOptions {
            iterate_log_stride: Some(1),
            ..EngineOptions::default()
        };
        let logged = run(&cfg, clients, &w0, &opts).unwrap();
        // single grid point: the one recorded averaged iterate
        let w_tilde = select_output(&logged, 99).unwrap();
        assert_eq!(w_tilde, logged.iterate_log.as_ref().unwrap()[0].w);
        assert_eq!(
            select_output(&logged, 5).unwrap(),
            select_output(&logged, 5).unwrap()
        );
    }

    #[test]
    fn evaluate_reports_worst_and_avg() {
        let mut cfg = base_cfg(Algorithm::FedAvg, 2);
        cfg.rounds = 1;
        // anchors at sqrt(2) and sqrt(6): losses 1 and 3 at the origin
        let clients = quad_clients(&[&[(2.0f64).sqrt()], &[(6.0f64).sqrt()]]);
        let w0 = ParameterVector::zeros(1);
        let result = run(&cfg, clients, &w0, &EngineOptions::default()).unwrap();
        let eval = evaluate(&result, &w0).unwrap();
        assert!((eval.worst_client_loss - 3.0).abs() < 1e-12);
        assert!((eval.avg_client_loss - 2.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_config_is_rejected_with_field_name() {
        let mut cfg = base_cfg(Algorithm::FgdroCvar, 2);
        cfg.cvar_k = 5;
        let clients = quad_clients(&[&[0.0], &[1.0]]);
        let err = run(
            &cfg,
            clients,
            &ParameterVector::zeros(1),
            &EngineOptions::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("cvar_k"));
    }

    #[test]
    fn non_finite_abort_names_location() {
        // a huge step size blows client 1 up at its second local step
        // (client 0 sits exactly on its anchor and never moves)
        let mut cfg = base_cfg(Algorithm::FedAvg, 2);
        cfg.eta = 1e200;
        let clients = quad_clients(&[&[0.0], &[1.0]]);
        let err = run(
            &cfg,
            clients,
            &ParameterVector::zeros(1),
            &EngineOptions::default(),
        )
        .unwrap_err();
        match err {
            FgdroError::NonFinite { client, round, step, .. } => {
                assert_eq!((client, round, step), (1, 1, 2));
            }
            other => panic!("expected NonFinite, got {other}"),
        }
    }
}
