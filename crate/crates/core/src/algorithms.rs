//! Per-client local update rules and round-boundary aggregation.
//!
//! Each optimizer is a pure transition on an owned `ClientState`; the
//! federation engine drives I such steps per round and then averages the
//! algorithm's aggregation set across clients.
//!
//! Conventions shared by every rule:
//! - a minibatch of size b stands in for the single sample of the update
//!   rules (batch-mean loss and batch-mean gradient);
//! - the loss estimator u is updated first and the resulting value feeds
//!   the same step's indicator/weight;
//! - the CVaR active-set indicator is strict (u - s > 0, subgradient 0 at
//!   the kink) and uses the pre-update s in both the v and m updates;
//! - u is carried locally across rounds and is never averaged.

use crate::config::{Algorithm, RunConfig};
use crate::error::{FgdroError, Result};
use crate::models::{batch_mean_grad, batch_mean_loss, LossModel, Sample};
use crate::params::ParameterVector;
use serde::{Deserialize, Serialize};

/// Bound on the exponent of exp(u / lambda). Losses within the bounded
/// range assumed by the KL analysis never reach it; hitting the clamp is
/// surfaced as a warning flag instead of silently producing Inf.
const EXP_CLAMP: f64 = 700.0;

/// Everything one client carries between local steps and across rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientState {
    /// Local copy of the model.
    pub w: ParameterVector,
    /// Moving average of the sampled local loss; never aggregated.
    pub u: f64,
    /// KL family: estimate of the global g(w). CVaR/ERM: unused.
    pub v: f64,
    /// CVaR threshold; unused elsewhere.
    pub s: f64,
    /// First-moment gradient estimate.
    pub m: ParameterVector,
    /// Second-moment estimate (Adam variants); entrywise nonnegative.
    pub q: ParameterVector,
    /// Set when exp(u / lambda) had to be clamped at any point.
    pub exp_clamped: bool,
}

impl ClientState {
    pub fn new(dim: usize) -> Self {
        ClientState {
            w: ParameterVector::zeros(dim),
            u: 0.0,
            v: 1.0,
            s: 0.0,
            m: ParameterVector::zeros(dim),
            q: ParameterVector::zeros(dim),
            exp_clamped: false,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite()
            && self.u.is_finite()
            && self.v.is_finite()
            && self.s.is_finite()
            && self.m.is_finite()
            && self.q.is_finite()
    }
}

/// One local step's outcome: the updated state and the sampled minibatch
/// loss (for logging).
#[derive(Debug, Clone)]
pub struct LocalStepResult {
    pub state: ClientState,
    pub batch_loss: f64,
}

/// Which state fields are averaged at round boundaries. `w` is averaged by
/// every algorithm; `u` never is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregationSpec {
    pub w: bool,
    pub s: bool,
    pub v: bool,
    pub m: bool,
    pub q: bool,
}

impl AggregationSpec {
    pub fn for_algorithm(algorithm: Algorithm) -> Self {
        match algorithm {
            Algorithm::FgdroCvar => AggregationSpec { w: true, s: true, v: false, m: false, q: false },
            Algorithm::FgdroKl => AggregationSpec { w: true, s: false, v: true, m: true, q: false },
            Algorithm::FgdroKlAdam => AggregationSpec { w: true, s: false, v: true, m: true, q: true },
            Algorithm::LocalAdam => AggregationSpec { w: true, s: false, v: false, m: true, q: true },
            Algorithm::FedAvg => AggregationSpec { w: true, s: false, v: false, m: false, q: false },
        }
    }
}

/// Real numbers each client uploads per communication round: d per
/// aggregated vector field, 1 per aggregated scalar field.
pub fn communication_cost(spec: &AggregationSpec, dim: usize) -> u64 {
    let d = dim as u64;
    let mut cost = 0;
    if spec.w {
        cost += d;
    }
    if spec.s {
        cost += 1;
    }
    if spec.v {
        cost += 1;
    }
    if spec.m {
        cost += d;
    }
    if spec.q {
        cost += d;
    }
    cost
}

/// exp(u / lambda) with the overflow clamp; flags the state when clamped.
fn clamped_exp(u_over_lambda: f64, state: &mut ClientState) -> f64 {
    if u_over_lambda > EXP_CLAMP {
        state.exp_clamped = true;
        EXP_CLAMP.exp()
    } else {
        u_over_lambda.exp()
    }
}

fn ensure_finite(state: &ClientState) -> Result<()> {
    if state.is_finite() {
        Ok(())
    } else {
        // location is filled in by the engine
        Err(FgdroError::NonFinite {
            quantity: "client state",
            client: usize::MAX,
            round: 0,
            step: 0,
        })
    }
}

/// FGDRO-CVaR local step: track the loss with u, move the threshold s
/// against the active-set indicator, and take a hinge-masked gradient
/// step on w. Indicator in both the s and w updates uses the post-update
/// u with the pre-update s.
pub fn cvar_local_step(
    mut state: ClientState,
    batch: &[Sample],
    cfg: &RunConfig,
    model: &LossModel,
) -> Result<LocalStepResult> {
    let k_over_n = cfg.cvar_k as f64 / cfg.num_clients as f64;
    let batch_loss = batch_mean_loss(model, &state.w, batch)?;

    state.u = (1.0 - cfg.beta1) * state.u + cfg.beta1 * batch_loss;
    let active = state.u - state.s > 0.0;

    let v = if active { -1.0 + k_over_n } else { k_over_n };
    let s_prev = state.s;
    state.s = s_prev - cfg.eta_s() * v;

    if active {
        state.m = batch_mean_grad(model, &state.w, batch)?;
        state.w.add_scaled(&state.m, -cfg.eta);
    } else {
        state.m = ParameterVector::zeros(state.w.dim());
    }

    ensure_finite(&state)?;
    Ok(LocalStepResult { state, batch_loss })
}

/// FGDRO-KL local step: u tracks the local loss, v tracks the global
/// g(w), and the gradient is reweighted by exp(u/lambda)/v before the
/// momentum step.
pub fn kl_local_step(
    mut state: ClientState,
    batch: &[Sample],
    cfg: &RunConfig,
    model: &LossModel,
) -> Result<LocalStepResult> {
    let batch_loss = batch_mean_loss(model, &state.w, batch)?;

    state.u = (1.0 - cfg.beta1) * state.u + cfg.beta1 * batch_loss;
    let g_local = clamped_exp(state.u / cfg.lambda, &mut state);
    state.v = (1.0 - cfg.beta2) * state.v + cfg.beta2 * g_local;

    let weight = g_local / state.v;
    let h = batch_mean_grad(model, &state.w, batch)?.scaled(weight);
    state.m.ema_update(&h, cfg.beta3);
    state.w.add_scaled(&state.m, -cfg.eta);

    ensure_finite(&state)?;
    Ok(LocalStepResult { state, batch_loss })
}

/// FGDRO-KL-Adam local step: same u/v/h/m updates as FGDRO-KL, plus the
/// second-moment tracker q and the coordinate-wise adaptive model step.
pub fn kl_adam_local_step(
    mut state: ClientState,
    batch: &[Sample],
    cfg: &RunConfig,
    model: &LossModel,
) -> Result<LocalStepResult> {
    let batch_loss = batch_mean_loss(model, &state.w, batch)?;

    state.u = (1.0 - cfg.beta1) * state.u + cfg.beta1 * batch_loss;
    let g_local = clamped_exp(state.u / cfg.lambda, &mut state);
    state.v = (1.0 - cfg.beta2) * state.v + cfg.beta2 * g_local;

    let weight = g_local / state.v;
    let h = batch_mean_grad(model, &state.w, batch)?.scaled(weight);
    state.m.ema_update(&h, cfg.beta3);
    state.q.ema_update_squared(&h, cfg.beta4);
    state.w.adam_step(&state.m, &state.q, cfg.eta, cfg.tau);

    ensure_finite(&state)?;
    Ok(LocalStepResult { state, batch_loss })
}

/// LocalAdam (ERM) step: kl_adam with the compositional weight forced
/// to 1.
pub fn local_adam_step(
    mut state: ClientState,
    batch: &[Sample],
    cfg: &RunConfig,
    model: &LossModel,
) -> Result<LocalStepResult> {
    let batch_loss = batch_mean_loss(model, &state.w, batch)?;

    let h = batch_mean_grad(model, &state.w, batch)?;
    state.m.ema_update(&h, cfg.beta3);
    state.q.ema_update_squared(&h, cfg.beta4);
    state.w.adam_step(&state.m, &state.q, cfg.eta, cfg.tau);

    ensure_finite(&state)?;
    Ok(LocalStepResult { state, batch_loss })
}

/// Plain FedAvg local step: one SGD step on the sampled batch.
pub fn fedavg_local_step(
    mut state: ClientState,
    batch: &[Sample],
    cfg: &RunConfig,
    model: &LossModel,
) -> Result<LocalStepResult> {
    let batch_loss = batch_mean_loss(model, &state.w, batch)?;

    let g = batch_mean_grad(model, &state.w, batch)?;
    state.w.add_scaled(&g, -cfg.eta);

    ensure_finite(&state)?;
    Ok(LocalStepResult { state, batch_loss })
}

/// Dispatch on the configured algorithm.
pub fn local_step(
    algorithm: Algorithm,
    state: ClientState,
    batch: &[Sample],
    cfg: &RunConfig,
    model: &LossModel,
) -> Result<LocalStepResult> {
    match algorithm {
        Algorithm::FgdroCvar => cvar_local_step(state, batch, cfg, model),
        Algorithm::FgdroKl => kl_local_step(state, batch, cfg, model),
        Algorithm::FgdroKlAdam => kl_adam_local_step(state, batch, cfg, model),
        Algorithm::LocalAdam => local_adam_step(state, batch, cfg, model),
        Algorithm::FedAvg => fedavg_local_step(state, batch, cfg, model),
    }
}

/// Average exactly the fields in `spec` across clients, producing the
/// template broadcast at the next round start. Fields outside the spec
/// carry the first client's values as inert placeholders; the broadcast
/// (`apply_broadcast`) leaves those fields local. u is never averaged.
pub fn aggregate(states: &[ClientState], spec: &AggregationSpec) -> Result<ClientState> {
    let first = states.first().ok_or(FgdroError::EmptyAggregation)?;
    let dim = first.w.dim();
    for st in states {
        if st.w.dim() != dim {
            return Err(FgdroError::DimensionMismatch {
                context: "aggregate",
                expected: dim,
                found: st.w.dim(),
            });
        }
    }

    let n = states.len() as f64;
    // scalar means use the same deviation-from-first form as mean_of, so
    // aggregating identical states is exactly the identity
    let scalar_mean = |select: fn(&ClientState) -> f64| -> f64 {
        let first_value = select(first);
        first_value + states.iter().map(|s| select(s) - first_value).sum::<f64>() / n
    };
    let mut template = first.clone();
    if spec.w {
        template.w = ParameterVector::mean_of(states.iter().map(|s| &s.w));
    }
    if spec.s {
        template.s = scalar_mean(|s| s.s);
    }
    if spec.v {
        template.v = scalar_mean(|s| s.v);
    }
    if spec.m {
        template.m = ParameterVector::mean_of(states.iter().map(|s| &s.m));
    }
    if spec.q {
        template.q = ParameterVector::mean_of(states.iter().map(|s| &s.q));
    }
    template.exp_clamped = states.iter().any(|s| s.exp_clamped);
    Ok(template)
}

/// Overwrite the aggregated fields of a local state with the broadcast
/// template; everything else (u in particular) stays local.
pub fn apply_broadcast(local: &mut ClientState, template: &ClientState, spec: &AggregationSpec) {
    if spec.w {
        local.w = template.w.clone();
    }
    if spec.s {
        local.s = template.s;
    }
    if spec.v {
        local.v = template.v;
    }
    if spec.m {
        local.m = template.m.clone();
    }
    if spec.q {
        local.q = template.q.clone();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ClientDataset, Sample};

    fn test_cfg(algorithm: Algorithm) -> RunConfig {
        RunConfig {
            num_clients: 2,
            rounds: 1,
            local_steps: 1,
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
            master_seed: 0,
            algorithm,
        }
    }

    fn quad_model(anchor: &[f64]) -> LossModel {
        LossModel::Quadratic {
            anchor: ParameterVector::from_vec(anchor.to_vec()),
        }
    }

    fn dummy_batch(dim: usize) -> Vec<Sample> {
        vec![Sample::new(vec![0.0; dim], 0.0)]
    }

    #[test]
    fn cvar_u_moving_average() {
        // u0 = 0, beta1 = 0.5, batch loss 4 -> u = 2
        let cfg = test_cfg(Algorithm::FgdroCvar);
        let mut state = ClientState::new(1);
        state.w = ParameterVector::from_vec(vec![2.0 * 2.0_f64.sqrt()]);
        // quadratic anchor 0 at w: loss = w^2/2 = 4
        let result = cvar_local_step(state, &dummy_batch(1), &cfg, &quad_model(&[0.0])).unwrap();
        assert!((result.state.u - 2.0).abs() < 1e-15);
        assert!((result.batch_loss - 4.0).abs() < 1e-15);
    }

    #[test]
    fn cvar_active_client_raises_s() {
        // u - s > 0, K = 1, N = 2: v = -1/2, s increases by eta2/2
        let mut cfg = test_cfg(Algorithm::FgdroCvar);
        cfg.eta2 = Some(0.2);
        cfg.beta1 = 1.0;
        let mut state = ClientState::new(1);
        state.w = ParameterVector::from_vec(vec![2.0]); // loss 2 > s = 0
        let result = cvar_local_step(state, &dummy_batch(1), &cfg, &quad_model(&[0.0])).unwrap();
        assert!((result.state.s - 0.1).abs() < 1e-15);
        // active: w moved along -grad = -(w - 0)
        assert!((result.state.w[0] - (2.0 - 0.1 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn cvar_inactive_client_freezes_w_and_lowers_s() {
        let mut cfg = test_cfg(Algorithm::FgdroCvar);
        cfg.beta1 = 1.0;
        let mut state = ClientState::new(1);
        state.s = 10.0; // above any loss this step produces
        state.w = ParameterVector::from_vec(vec![1.0]);
        let result = cvar_local_step(state, &dummy_batch(1), &cfg, &quad_model(&[0.0])).unwrap();
        assert_eq!(result.state.m.norm_sq(), 0.0);
        assert_eq!(result.state.w.as_slice(), &[1.0]);
        // v = K/N = 1/2, s decreases by eta2 * 1/2 = 0.05
        assert!((result.state.s - (10.0 - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn cvar_indicator_uses_pre_update_s() {
        // engineered so that u > s_old but u <= s_new would hold if the
        // indicator wrongly used the updated s
        let mut cfg = test_cfg(Algorithm::FgdroCvar);
        cfg.beta1 = 1.0;
        cfg.eta2 = Some(100.0); // s jumps far upward when active
        let mut state = ClientState::new(1);
        state.s = 1.0;
        state.w = ParameterVector::from_vec(vec![3.0]); // loss 4.5 > 1
        let result = cvar_local_step(state, &dummy_batch(1), &cfg, &quad_model(&[0.0])).unwrap();
        // active against s_old = 1, so w moved
        assert!((result.state.w[0] - (3.0 - 0.1 * 3.0)).abs() < 1e-15);
    }

    #[test]
    fn kl_self_normalizing_weight_is_one_at_equilibrium() {
        // u = c and v = exp(c / lambda) make the weight exactly 1
        let mut cfg = test_cfg(Algorithm::FgdroKl);
        cfg.beta1 = 1.0; // u jumps straight to the batch loss
        let mut state = ClientState::new(1);
        state.w = ParameterVector::from_vec(vec![2.0]); // loss 2, grad 2
        state.u = 2.0;
        state.v = (2.0_f64).exp();
        let result = kl_local_step(state, &dummy_batch(1), &cfg, &quad_model(&[0.0])).unwrap();
        // weight 1 -> h = grad = 2; m = 0.5 * 2 = 1; w = 2 - 0.1
        assert!((result.state.m[0] - 1.0).abs() < 1e-15);
        assert!((result.state.w[0] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn kl_beta3_one_disables_momentum() {
        let mut cfg = test_cfg(Algorithm::FgdroKl);
        cfg.beta3 = 1.0;
        let mut state = ClientState::new(1);
        state.w = ParameterVector::from_vec(vec![1.0]);
        state.m = ParameterVector::from_vec(vec![123.0]); // must be discarded
        state.u = 0.5;
        state.v = (0.5_f64).exp();
        let stale_m_before = state.m[0];
        let result = kl_local_step(state, &dummy_batch(1), &cfg, &quad_model(&[0.0])).unwrap();
        assert_ne!(result.state.m[0], stale_m_before);
        // m == h exactly: weight * grad where weight = exp(u/l)/v after updates
        assert!(result.state.m[0].is_finite());
    }

    #[test]
    fn kl_adam_beta4_one_tracks_squared_h() {
        let mut cfg = test_cfg(Algorithm::FgdroKlAdam);
        cfg.beta3 = 1.0;
        cfg.beta4 = 1.0;
        let mut state = ClientState::new(1);
        state.w = ParameterVector::from_vec(vec![3.0]);
        state.u = 4.5;
        state.v = (4.5_f64).exp(); // weight 1 after the u/v updates below
        // with beta1=0.5 u changes; use beta1=1 so u stays the batch loss
        cfg.beta1 = 1.0;
        let result =
            kl_adam_local_step(state, &dummy_batch(1), &cfg, &quad_model(&[0.0])).unwrap();
        let h = result.state.m[0]; // beta3 = 1 -> m = h
        assert!((result.state.q[0] - h * h).abs() < 1e-12);
        // step = eta * m / (|h| + tau)
        let expected_w = 3.0 - 0.1 * h / (h.abs() + cfg.tau);
        assert!((result.state.w[0] - expected_w).abs() < 1e-12);
    }

    #[test]
    fn kl_adam_q_decays_geometrically_without_gradient() {
        let mut cfg = test_cfg(Algorithm::FgdroKlAdam);
        cfg.beta4 = 0.25;
        let mut state = ClientState::new(1);
        // w at the anchor: gradient 0, h = 0
        state.w = ParameterVector::from_vec(vec![1.0]);
        state.q = ParameterVector::from_vec(vec![8.0]);
        state.u = 0.0;
        state.v = 1.0;
        let model = quad_model(&[1.0]);
        let r1 = kl_adam_local_step(state, &dummy_batch(1), &cfg, &model).unwrap();
        assert!((r1.state.q[0] - 6.0).abs() < 1e-15);
        let r2 = kl_adam_local_step(r1.state, &dummy_batch(1), &cfg, &model).unwrap();
        assert!((r2.state.q[0] - 4.5).abs() < 1e-15);
    }

    #[test]
    fn local_adam_zero_gradient_leaves_w() {
        let cfg = test_cfg(Algorithm::LocalAdam);
        let mut state = ClientState::new(1);
        state.w = ParameterVector::from_vec(vec![1.0]);
        state.m = ParameterVector::zeros(1);
        state.q = ParameterVector::from_vec(vec![4.0]);
        let result = local_adam_step(state, &dummy_batch(1), &cfg, &quad_model(&[1.0])).unwrap();
        assert_eq!(result.state.w.as_slice(), &[1.0]);
        assert!((result.state.q[0] - 2.0).abs() < 1e-15); // decayed
    }

    #[test]
    fn fedavg_single_step_formula() {
        let cfg = test_cfg(Algorithm::FedAvg);
        let mut state = ClientState::new(1);
        state.w = ParameterVector::from_vec(vec![5.0]);
        let result = fedavg_local_step(state, &dummy_batch(1), &cfg, &quad_model(&[1.0])).unwrap();
        // grad = w - a = 4; w <- 5 - 0.1 * 4
        assert!((result.state.w[0] - 4.6).abs() < 1e-15);
    }

    #[test]
    fn fedavg_contracts_on_quadratic() {
        let cfg = test_cfg(Algorithm::FedAvg);
        let model = quad_model(&[1.0]);
        let mut state = ClientState::new(1);
        state.w = ParameterVector::from_vec(vec![5.0]);
        let mut dist = (state.w[0] - 1.0).abs();
        for _ in 0..10 {
            state = fedavg_local_step(state, &dummy_batch(1), &cfg, &model)
                .unwrap()
                .state;
            let new_dist = (state.w[0] - 1.0).abs();
            assert!(new_dist < dist);
            dist = new_dist;
        }
    }

    #[test]
    fn aggregation_specs_match_algorithms() {
        let d = 10;
        let cases = [
            (Algorithm::FedAvg, 10),
            (Algorithm::FgdroCvar, 11),
            (Algorithm::FgdroKl, 21),
            (Algorithm::FgdroKlAdam, 31),
            (Algorithm::LocalAdam, 30),
        ];
        for (algorithm, expected) in cases {
            let spec = AggregationSpec::for_algorithm(algorithm);
            assert_eq!(communication_cost(&spec, d), expected, "{algorithm}");
        }
        // spot value from the aggregation rule: 3*2 + 1
        let spec = AggregationSpec::for_algorithm(Algorithm::FgdroKlAdam);
        assert_eq!(communication_cost(&spec, 2), 7);
    }

    #[test]
    fn aggregate_means_selected_fields_only() {
        let mut a = ClientState::new(1);
        a.w = ParameterVector::from_vec(vec![1.0]);
        a.v = 2.0;
        a.u = 7.0;
        let mut b = ClientState::new(1);
        b.w = ParameterVector::from_vec(vec![3.0]);
        b.v = 4.0;
        b.u = 9.0;

        let spec = AggregationSpec::for_algorithm(Algorithm::FgdroKl);
        let template = aggregate(&[a.clone(), b], &spec).unwrap();
        assert_eq!(template.w.as_slice(), &[2.0]);
        assert_eq!(template.v, 3.0);
        // u is never aggregated; broadcast leaves each client's own u
        let mut restored = a.clone();
        apply_broadcast(&mut restored, &template, &spec);
        assert_eq!(restored.u, 7.0);
        assert_eq!(restored.v, 3.0);
    }

    #[test]
    fn aggregate_identical_states_is_identity() {
        // 0.1 and 0.3 are not exactly divisible by 3 after repeated
        // addition; the deviation-form mean must still return them exactly
        let mut st = ClientState::new(2);
        st.w = ParameterVector::from_vec(vec![0.1, -0.3]);
        st.v = 1.5;
        st.s = 0.1;
        st.m = ParameterVector::from_vec(vec![0.5, 0.1]);
        st.q = ParameterVector::from_vec(vec![0.1, 0.2]);
        for algorithm in Algorithm::ALL {
            let spec = AggregationSpec::for_algorithm(algorithm);
            let template = aggregate(&[st.clone(), st.clone(), st.clone()], &spec).unwrap();
            assert_eq!(template, st, "{algorithm}");
        }
    }

    #[test]
    fn aggregate_rejects_empty_and_mismatched() {
        let spec = AggregationSpec::for_algorithm(Algorithm::FedAvg);
        assert!(matches!(
            aggregate(&[], &spec),
            Err(FgdroError::EmptyAggregation)
        ));
        let a = ClientState::new(1);
        let b = ClientState::new(2);
        assert!(matches!(
            aggregate(&[a, b], &spec),
            Err(FgdroError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn non_finite_update_is_an_error() {
        let mut cfg = test_cfg(Algorithm::FedAvg);
        cfg.eta = f64::INFINITY;
        let mut state = ClientState::new(1);
        state.w = ParameterVector::from_vec(vec![5.0]);
        assert!(fedavg_local_step(state, &dummy_batch(1), &cfg, &quad_model(&[0.0])).is_err());
    }
}
