//! Scalar training losses and their analytic gradients.
//!
//! Policy-valued losses differentiate with respect to softmax logits;
//! `nll_ed_with_grad` differentiates with respect to reward-table entries.
//! Every formula is arranged as a within-state difference of log-ratios, so
//! the per-state log-partition constant cancels and adding a constant to
//! any logit row changes no loss value. `log σ` is computed as
//! `-softplus(-z)` throughout.

use serde::{Deserialize, Serialize};

use crate::bandit::{Policy, RewardTable, SoftmaxPolicy, TabularPolicy};
use crate::data::PreferenceDataset;
use crate::error::{Error, Result};
use crate::math::{sigmoid, softplus};
use crate::{ActionId, StateId};

/// Which dataset response stands in for the reference draw `y'` in the
/// dueling term: the chosen response, the rejected one, or the average of
/// the two log-ratios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    Chosen,
    Rejected,
    #[default]
    Average,
}

impl Comparison {
    /// Weight this flag assigns to `(y_w, y_l)` in comparison terms.
    pub(crate) fn weights(self) -> (f64, f64) {
        match self {
            Comparison::Chosen => (1.0, 0.0),
            Comparison::Rejected => (0.0, 1.0),
            Comparison::Average => (0.5, 0.5),
        }
    }
}

/// A loss evaluation: the scalar and its gradient. The gradient table has
/// the same shape as the parameter it differentiates (softmax logits for
/// the policy losses, reward-table entries for `nll_ed_with_grad`).
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<Vec<f64>>,
}

impl LossValue {
    fn zeros(num_states: usize, num_actions: usize, value: f64) -> Self {
        LossValue {
            value,
            grad: vec![vec![0.0; num_actions]; num_states],
        }
    }

    /// Euclidean norm of the gradient.
    pub fn grad_norm(&self) -> f64 {
        self.grad
            .iter()
            .flatten()
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

/// Negative log-likelihood of a reward table on the preference samples:
/// `−(1/n) Σ log σ(f(x_i, y_i^w) − f(x_i, y_i^l))`.
pub fn nll_ed(f: &RewardTable, data: &PreferenceDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = data.len() as f64;
    let mut total = 0.0;
    for r in &data.records {
        total += softplus(-(f.get(r.x, r.y_w) - f.get(r.x, r.y_l)));
    }
    Ok(total / n)
}

/// [`nll_ed`] with the gradient over the table entries.
pub fn nll_ed_with_grad(f: &RewardTable, data: &PreferenceDataset) -> Result<LossValue> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = data.len() as f64;
    let mut out = LossValue::zeros(f.num_states(), f.num_actions(), 0.0);
    for r in &data.records {
        let z = f.get(r.x, r.y_w) - f.get(r.x, r.y_l);
        out.value += softplus(-z);
        let coeff = -sigmoid(-z) / n;
        out.grad[r.x][r.y_w] += coeff;
        out.grad[r.x][r.y_l] -= coeff;
    }
    out.value /= n;
    Ok(out)
}

/// Dueling loss from sampled actions: mean of `f(x_j, y_j) − f(x_j, y'_j)`.
pub fn duel_ld_sampled(
    f: &RewardTable,
    xs: &[StateId],
    ys: &[ActionId],
    yps: &[ActionId],
) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() != yps.len() {
        return Err(Error::invalid("xs, ys and yps must have equal length"));
    }
    if xs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = xs.len() as f64;
    let mut total = 0.0;
    for ((&x, &y), &yp) in xs.iter().zip(ys).zip(yps) {
        total += f.get(x, y) - f.get(x, yp);
    }
    Ok(total / n)
}

/// Dueling loss with the policy expectation taken exactly:
/// `(1/n) Σ_j [E_{y∼π(·|x_j)} f(x_j, y) − f̄(x_j)]`, where `f̄` uses the
/// chosen response, the rejected one, or their average.
pub fn duel_ld_exact(
    f: &RewardTable,
    pi: &TabularPolicy,
    data: &PreferenceDataset,
    comparison: Comparison,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (ww, wl) = comparison.weights();
    let n = data.len() as f64;
    let mut total = 0.0;
    for r in &data.records {
        let row = pi.row(r.x);
        let expected: f64 = row
            .iter()
            .enumerate()
            .map(|(y, p)| p * f.get(r.x, y))
            .sum();
        let compared = ww * f.get(r.x, r.y_w) + wl * f.get(r.x, r.y_l);
        total += expected - compared;
    }
    Ok(total / n)
}

/// Log-probability rows of `pi` for every state, computed once per loss
/// evaluation.
fn log_prob_rows(pi: &SoftmaxPolicy) -> Vec<Vec<f64>> {
    (0..pi.num_states()).map(|x| pi.log_prob_row(x)).collect()
}

/// `ln π_ref(y|x)` with a domain error on zero probability.
fn checked_ln(pi_ref: &TabularPolicy, role: &'static str, x: StateId, y: ActionId) -> Result<f64> {
    let p = pi_ref.prob(x, y);
    if p <= 0.0 {
        return Err(Error::ZeroProbability {
            role,
            state: x,
            action: y,
        });
    }
    Ok(p.ln())
}

/// Preference-classification loss of a policy against a frozen reference:
/// `−(1/n) Σ log σ(α[(log π/π_ref)(y_w) − (log π/π_ref)(y_l)])`.
pub fn dpo_loss(
    pi: &SoftmaxPolicy,
    pi_ref: &TabularPolicy,
    data: &PreferenceDataset,
    alpha: f64,
) -> Result<LossValue> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if alpha < 0.0 {
        return Err(Error::invalid("alpha must be non-negative"));
    }
    let lp = log_prob_rows(pi);
    let n = data.len() as f64;
    let mut out = LossValue::zeros(pi.num_states(), pi.num_actions(), 0.0);
    for r in &data.records {
        let ratio_w = lp[r.x][r.y_w] - checked_ln(pi_ref, "reference policy", r.x, r.y_w)?;
        let ratio_l = lp[r.x][r.y_l] - checked_ln(pi_ref, "reference policy", r.x, r.y_l)?;
        let z = alpha * (ratio_w - ratio_l);
        out.value += softplus(-z);
        let coeff = -sigmoid(-z) * alpha / n;
        out.grad[r.x][r.y_w] += coeff;
        out.grad[r.x][r.y_l] -= coeff;
    }
    out.value /= n;
    Ok(out)
}

fn check_spac_params(eta: f64, lambda: f64) -> Result<()> {
    if !(eta > 0.0) {
        return Err(Error::invalid("eta must be positive"));
    }
    if lambda < 0.0 {
        return Err(Error::invalid("lambda must be non-negative"));
    }
    Ok(())
}

/// Add the pessimism regularizer `λ·E_D` on the implicit reward
/// `η·log(π/π_t)` to a partially built [`LossValue`]. Shared by the raw,
/// exact, and smoothed objectives.
fn add_likelihood_term(
    out: &mut LossValue,
    lp: &[Vec<f64>],
    pi_t: &TabularPolicy,
    data: &PreferenceDataset,
    eta: f64,
    lambda: f64,
) -> Result<()> {
    if lambda == 0.0 {
        return Ok(());
    }
    let n = data.len() as f64;
    for r in &data.records {
        let ratio_w = lp[r.x][r.y_w] - checked_ln(pi_t, "iteration policy", r.x, r.y_w)?;
        let ratio_l = lp[r.x][r.y_l] - checked_ln(pi_t, "iteration policy", r.x, r.y_l)?;
        let z = eta * (ratio_w - ratio_l);
        out.value += lambda * softplus(-z) / n;
        let coeff = -lambda * sigmoid(-z) * eta / n;
        out.grad[r.x][r.y_w] += coeff;
        out.grad[r.x][r.y_l] -= coeff;
    }
    Ok(())
}

/// Self-play objective with sampled policy draws: the dueling gap of
/// `η·log(π/π_t)` between the sampled response `y_j` and the comparison
/// response, plus `λ` times the preference likelihood term on `(y_w, y_l)`.
/// At `λ = 0` this is exactly the self-play imitation objective.
pub fn spac_objective(
    pi: &SoftmaxPolicy,
    pi_t: &TabularPolicy,
    data: &PreferenceDataset,
    ys: &[ActionId],
    comparison: Comparison,
    eta: f64,
    lambda: f64,
) -> Result<LossValue> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if ys.len() != data.len() {
        return Err(Error::invalid("one sampled action per record required"));
    }
    check_spac_params(eta, lambda)?;
    let lp = log_prob_rows(pi);
    let (ww, wl) = comparison.weights();
    let n = data.len() as f64;
    let mut out = LossValue::zeros(pi.num_states(), pi.num_actions(), 0.0);
    for (r, &s) in data.records.iter().zip(ys) {
        let ratio_s = lp[r.x][s] - checked_ln(pi_t, "iteration policy", r.x, s)?;
        let ratio_w = lp[r.x][r.y_w] - checked_ln(pi_t, "iteration policy", r.x, r.y_w)?;
        let ratio_l = lp[r.x][r.y_l] - checked_ln(pi_t, "iteration policy", r.x, r.y_l)?;
        out.value += eta * (ratio_s - ww * ratio_w - wl * ratio_l) / n;
        // Softmax-normalization terms cancel: the log-ratio coefficients
        // sum to zero within the state.
        out.grad[r.x][s] += eta / n;
        out.grad[r.x][r.y_w] -= eta * ww / n;
        out.grad[r.x][r.y_l] -= eta * wl / n;
    }
    add_likelihood_term(&mut out, &lp, pi_t, data, eta, lambda)?;
    Ok(out)
}

/// [`spac_objective`] with the dueling expectation over `π_t` taken
/// exactly instead of sampled — the zero-variance form used for theory
/// verification.
pub fn spac_objective_exact(
    pi: &SoftmaxPolicy,
    pi_t: &TabularPolicy,
    data: &PreferenceDataset,
    comparison: Comparison,
    eta: f64,
    lambda: f64,
) -> Result<LossValue> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_spac_params(eta, lambda)?;
    let lp = log_prob_rows(pi);
    let (ww, wl) = comparison.weights();
    let n = data.len() as f64;
    let mut out = LossValue::zeros(pi.num_states(), pi.num_actions(), 0.0);
    for r in &data.records {
        let row = pi_t.row(r.x);
        let mut expected = 0.0;
        for (y, &p) in row.iter().enumerate() {
            if p > 0.0 {
                expected += p * (lp[r.x][y] - p.ln());
            }
        }
        let ratio_w = lp[r.x][r.y_w] - checked_ln(pi_t, "iteration policy", r.x, r.y_w)?;
        let ratio_l = lp[r.x][r.y_l] - checked_ln(pi_t, "iteration policy", r.x, r.y_l)?;
        out.value += eta * (expected - ww * ratio_w - wl * ratio_l) / n;
        for (y, &p) in row.iter().enumerate() {
            out.grad[r.x][y] += eta * p / n;
        }
        out.grad[r.x][r.y_w] -= eta * ww / n;
        out.grad[r.x][r.y_l] -= eta * wl / n;
    }
    add_likelihood_term(&mut out, &lp, pi_t, data, eta, lambda)?;
    Ok(out)
}

/// Smoothed self-play objective: the dueling gap is passed through
/// `−log σ(·)` instead of being used raw, which keeps the critic term from
/// growing unboundedly negative and lets a small `λ` balance it.
pub fn spac_objective_smoothed(
    pi: &SoftmaxPolicy,
    pi_t: &TabularPolicy,
    data: &PreferenceDataset,
    ys: &[ActionId],
    comparison: Comparison,
    eta: f64,
    lambda: f64,
) -> Result<LossValue> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if ys.len() != data.len() {
        return Err(Error::invalid("one sampled action per record required"));
    }
    check_spac_params(eta, lambda)?;
    let lp = log_prob_rows(pi);
    let (ww, wl) = comparison.weights();
    let n = data.len() as f64;
    let mut out = LossValue::zeros(pi.num_states(), pi.num_actions(), 0.0);
    for (r, &s) in data.records.iter().zip(ys) {
        let ratio_s = lp[r.x][s] - checked_ln(pi_t, "iteration policy", r.x, s)?;
        let ratio_w = lp[r.x][r.y_w] - checked_ln(pi_t, "iteration policy", r.x, r.y_w)?;
        let ratio_l = lp[r.x][r.y_l] - checked_ln(pi_t, "iteration policy", r.x, r.y_l)?;
        let z = eta * (ww * ratio_w + wl * ratio_l - ratio_s);
        out.value += softplus(-z) / n;
        let coeff = -sigmoid(-z) / n;
        out.grad[r.x][r.y_w] += coeff * eta * ww;
        out.grad[r.x][r.y_l] += coeff * eta * wl;
        out.grad[r.x][s] -= coeff * eta;
    }
    add_likelihood_term(&mut out, &lp, pi_t, data, eta, lambda)?;
    Ok(out)
}
