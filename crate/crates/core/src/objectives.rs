//! Exact evaluators for the two robust objectives and their oracles.
//!
//! The CVaR form minimizes the mean of hinge-thresholded client losses
//! plus (K/N) s over a scalar threshold s; its minimum over s equals the
//! mean of the K largest client losses. The KL form is the log-sum-exp
//! smoothing lambda * log((1/N) sum_i exp(l_i / lambda)), whose gradient
//! reweights each client's gradient by g_i / g.
//!
//! Everything here evaluates full client datasets (no sampling) and serves
//! as the truth signal for the stochastic algorithms.

use crate::error::{FgdroError, Result};
use crate::models::Client;
use crate::params::ParameterVector;

/// Mean-of-top-K objective with threshold variable s.
pub struct CvarObjective<'a> {
    k: usize,
    clients: &'a [Client],
}

impl<'a> CvarObjective<'a> {
    pub fn new(k: usize, clients: &'a [Client]) -> Result<Self> {
        if clients.is_empty() {
            return Err(FgdroError::InvalidConfig("no clients".into()));
        }
        if k < 1 || k > clients.len() {
            return Err(FgdroError::InvalidConfig(format!(
                "K out of range [1, {}], got {k}",
                clients.len()
            )));
        }
        Ok(CvarObjective { k, clients })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn client_losses(&self, w: &ParameterVector) -> Result<Vec<f64>> {
        self.clients.iter().map(|c| c.mean_loss(w)).collect()
    }
}

/// F(w, s) = (1/N) sum_i max(g_i(w) - s, 0) + (K/N) s
pub fn cvar_objective(obj: &CvarObjective, w: &ParameterVector, s: f64) -> Result<f64> {
    let n = obj.num_clients() as f64;
    let losses = obj.client_losses(w)?;
    let hinge_sum: f64 = losses.iter().map(|g| (g - s).max(0.0)).sum();
    Ok(hinge_sum / n + (obj.k as f64 / n) * s)
}

/// Exact minimum of `cvar_objective` over s.
///
/// The minimizing threshold is the K-th largest client loss, and the value
/// there is the mean of the K largest losses times K/K = (1/N) sum(top-K).
pub fn cvar_optimal_value(obj: &CvarObjective, w: &ParameterVector) -> Result<(f64, f64)> {
    let mut losses = obj.client_losses(w)?;
    losses.sort_by(|a, b| b.partial_cmp(a).expect("client losses must be comparable"));
    let s_star = losses[obj.k - 1];
    let value = losses[..obj.k].iter().sum::<f64>() / obj.num_clients() as f64;
    Ok((value, s_star))
}

/// Subgradient of F(w, s) in (w, s).
///
/// The hinge subgradient at the kink is taken as 0 (strict inequality in
/// the active-set indicator); the same selection is used by the stochastic
/// updates so that the m and v estimators stay consistent.
pub fn cvar_subgradient(
    obj: &CvarObjective,
    w: &ParameterVector,
    s: f64,
) -> Result<(ParameterVector, f64)> {
    let n = obj.num_clients() as f64;
    let mut gw = ParameterVector::zeros(w.dim());
    let mut active = 0usize;
    for client in obj.clients {
        if client.mean_loss(w)? - s > 0.0 {
            gw.add_scaled(&client.mean_grad(w)?, 1.0);
            active += 1;
        }
    }
    gw.scale(1.0 / n);
    let gs = -(active as f64) / n + obj.k as f64 / n;
    Ok((gw, gs))
}

/// KL-regularized (log-sum-exp) objective.
pub struct KlObjective<'a> {
    lambda: f64,
    clients: &'a [Client],
}

impl<'a> KlObjective<'a> {
    pub fn new(lambda: f64, clients: &'a [Client]) -> Result<Self> {
        if clients.is_empty() {
            return Err(FgdroError::InvalidConfig("no clients".into()));
        }
        if !(lambda > 0.0) {
            return Err(FgdroError::InvalidConfig(format!(
                "lambda must be > 0, got {lambda}"
            )));
        }
        Ok(KlObjective { lambda, clients })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn client_losses(&self, w: &ParameterVector) -> Result<Vec<f64>> {
        self.clients.iter().map(|c| c.mean_loss(w)).collect()
    }
}

/// F(w) = lambda * log((1/N) sum_i exp(l_i / lambda)), max-shifted so that
/// small lambda cannot overflow the exponentials.
pub fn kl_objective(obj: &KlObjective, w: &ParameterVector) -> Result<f64> {
    let losses = obj.client_losses(w)?;
    Ok(log_sum_exp_mean(&losses, obj.lambda))
}

fn log_sum_exp_mean(losses: &[f64], lambda: f64) -> f64 {
    let n = losses.len() as f64;
    let shift = losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / lambda;
    let sum: f64 = losses.iter().map(|l| (l / lambda - shift).exp()).sum();
    lambda * (shift + (sum / n).ln())
}

/// Simplex weights p_i = g_i(w) / (N g(w)): positive, sum to one.
pub fn kl_client_weights(obj: &KlObjective, w: &ParameterVector) -> Result<Vec<f64>> {
    let losses = obj.client_losses(w)?;
    Ok(softmax_weights(&losses, obj.lambda))
}

fn softmax_weights(losses: &[f64], lambda: f64) -> Vec<f64> {
    let shift = losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / lambda;
    let exps: Vec<f64> = losses.iter().map(|l| (l / lambda - shift).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Exact gradient: sum_i p_i * grad l(w; D_i).
pub fn kl_gradient(obj: &KlObjective, w: &ParameterVector) -> Result<ParameterVector> {
    let weights = kl_client_weights(obj, w)?;
    let mut grad = ParameterVector::zeros(w.dim());
    for (client, p) in obj.clients.iter().zip(weights) {
        grad.add_scaled(&client.mean_grad(w)?, p);
    }
    Ok(grad)
}

/// A nonsmooth objective with value and one selected subgradient, the
/// interface the proximal-point solver works against.
pub trait SubgradientOracle {
    fn objective(&self, w: &ParameterVector, s: f64) -> Result<f64>;
    fn subgradient(&self, w: &ParameterVector, s: f64) -> Result<(ParameterVector, f64)>;
}

impl SubgradientOracle for CvarObjective<'_> {
    fn objective(&self, w: &ParameterVector, s: f64) -> Result<f64> {
        cvar_objective(self, w, s)
    }
    fn subgradient(&self, w: &ParameterVector, s: f64) -> Result<(ParameterVector, f64)> {
        cvar_subgradient(self, w, s)
    }
}

/// Parameters of the Moreau-envelope proximal diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ProxDiagnostic {
    pub rho_hat: f64,
    pub inner_steps: u32,
    pub inner_step_size: f64,
}

impl ProxDiagnostic {
    pub fn new(rho_hat: f64, inner_steps: u32, inner_step_size: f64) -> Result<Self> {
        if !(rho_hat > 0.0) {
            return Err(FgdroError::InvalidConfig(format!(
                "rho_hat must be > 0, got {rho_hat}"
            )));
        }
        Ok(ProxDiagnostic {
            rho_hat,
            inner_steps,
            inner_step_size,
        })
    }

    /// rho_hat with a step-size and budget that work for the built-in
    /// convex models.
    pub fn with_rho(rho_hat: f64) -> Self {
        ProxDiagnostic {
            rho_hat,
            inner_steps: 400,
            inner_step_size: 0.5 / (1.0 + rho_hat),
        }
    }
}

/// Approximate proximal point of F at (w, s).
#[derive(Debug, Clone)]
pub struct ProxPoint {
    pub w_hat: ParameterVector,
    pub s_hat: f64,
    /// ||w_hat - w||^2 + (s_hat - s)^2, the near-stationarity measure.
    pub dist_sq: f64,
}

/// Minimize F(w', s') + (rho_hat/2)(||w' - w||^2 + (s' - s)^2) by
/// subgradient descent with step c / sqrt(t), returning the best iterate
/// found. Starting from (w, s) itself guarantees that the proximal
/// objective of the output never exceeds F(w, s), so the prox of a global
/// minimizer is the point itself.
pub fn prox_point<O: SubgradientOracle>(
    diag: &ProxDiagnostic,
    obj: &O,
    w: &ParameterVector,
    s: f64,
) -> Result<ProxPoint> {
    let rho = diag.rho_hat;
    let prox_value = |w_c: &ParameterVector, s_c: f64| -> Result<f64> {
        let d = w_c.sub(w).norm_sq() + (s_c - s) * (s_c - s);
        Ok(obj.objective(w_c, s_c)? + 0.5 * rho * d)
    };

    let mut w_cur = w.clone();
    let mut s_cur = s;
    let mut best_w = w.clone();
    let mut best_s = s;
    let mut best_val = prox_value(&w_cur, s_cur)?;

    for t in 1..=diag.inner_steps {
        let (mut gw, mut gs) = obj.subgradient(&w_cur, s_cur)?;
        gw.add_scaled(&w_cur.sub(w), rho);
        gs += rho * (s_cur - s);

        let step = diag.inner_step_size / (t as f64).sqrt();
        w_cur.add_scaled(&gw, -step);
        s_cur -= step * gs;

        if !w_cur.is_finite() || !s_cur.is_finite() {
            return Err(FgdroError::NonFinite {
                quantity: "proximal inner iterate",
                client: 0,
                round: 0,
                step: t,
            });
        }

        let val = prox_value(&w_cur, s_cur)?;
        if val < best_val {
            best_val = val;
            best_w = w_cur.clone();
            best_s = s_cur;
        }
    }

    let dist_sq = best_w.sub(w).norm_sq() + (best_s - s) * (best_s - s);
    Ok(ProxPoint {
        w_hat: best_w,
        s_hat: best_s,
        dist_sq,
    })
}
