//! Finite contextual bandit: ground-truth environment, policies, values,
//! the optimal policy, and the suboptimality metric.
//!
//! Instances are small enough (≤ 64 states × 64 actions) that every table
//! is stored densely and every expectation is an exact sum. All types are
//! immutable after construction and safe to share across threads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::argmax_first;
use crate::{ActionId, StateId};

/// Tolerance for probability-vector normalization checks.
const PROB_SUM_TOL: f64 = 1e-12;

/// Dense `[state][action]` table of real rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardTable {
    values: Vec<Vec<f64>>,
}

impl RewardTable {
    pub fn new(values: Vec<Vec<f64>>) -> Result<Self> {
        if values.is_empty() || values[0].is_empty() {
            return Err(Error::invalid("reward table must be non-empty"));
        }
        let width = values[0].len();
        if values.iter().any(|row| row.len() != width) {
            return Err(Error::invalid("reward table rows must have equal length"));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("reward table entries must be finite"));
        }
        Ok(RewardTable { values })
    }

    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        RewardTable {
            values: vec![vec![0.0; num_actions]; num_states],
        }
    }

    pub fn num_states(&self) -> usize {
        self.values.len()
    }

    pub fn num_actions(&self) -> usize {
        self.values[0].len()
    }

    pub fn get(&self, x: StateId, y: ActionId) -> f64 {
        self.values[x][y]
    }

    pub fn set(&mut self, x: StateId, y: ActionId, v: f64) {
        self.values[x][y] = v;
    }

    pub fn row(&self, x: StateId) -> &[f64] {
        &self.values[x]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .fold(0.0_f64, |m, &v| m.max(v.abs()))
    }

    /// Clamp every entry into `[-bound, bound]`.
    pub fn clipped(&self, bound: f64) -> Self {
        RewardTable {
            values: self
                .values
                .iter()
                .map(|row| row.iter().map(|v| v.clamp(-bound, bound)).collect())
                .collect(),
        }
    }

    /// Subtract each row's mean, fixing the per-state constant that the
    /// losses cannot identify.
    pub fn centered(&self) -> Self {
        RewardTable {
            values: self
                .values
                .iter()
                .map(|row| {
                    let mean = row.iter().sum::<f64>() / row.len() as f64;
                    row.iter().map(|v| v - mean).collect()
                })
                .collect(),
        }
    }
}

/// Ground-truth finite contextual bandit `(ρ, r*, R)`.
///
/// `rho` is the prompt distribution, `r_star` the latent deterministic
/// reward, and `r_bound` an upper bound on `|r*|` shared with every reward
/// class built for the instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bandit {
    pub num_states: usize,
    pub num_actions: usize,
    pub rho: Vec<f64>,
    pub r_star: RewardTable,
    #[serde(rename = "R")]
    pub r_bound: f64,
}

impl Bandit {
    pub fn new(rho: Vec<f64>, r_star: RewardTable, r_bound: f64) -> Result<Self> {
        let num_states = r_star.num_states();
        let num_actions = r_star.num_actions();
        if rho.len() != num_states {
            return Err(Error::invalid("rho length must equal num_states"));
        }
        validate_prob_vector(&rho, "rho")?;
        if !(r_bound > 0.0) {
            return Err(Error::invalid("reward bound R must be positive"));
        }
        if r_star.max_abs() > r_bound {
            return Err(Error::invalid(format!(
                "|r*| = {} exceeds reward bound R = {}",
                r_star.max_abs(),
                r_bound
            )));
        }
        Ok(Bandit {
            num_states,
            num_actions,
            rho,
            r_star,
            r_bound,
        })
    }

    pub fn check_state(&self, x: StateId) -> Result<()> {
        if x >= self.num_states {
            return Err(Error::IndexOutOfRange {
                what: "state",
                got: x,
                limit: self.num_states,
            });
        }
        Ok(())
    }

    pub fn check_action(&self, y: ActionId) -> Result<()> {
        if y >= self.num_actions {
            return Err(Error::IndexOutOfRange {
                what: "action",
                got: y,
                limit: self.num_actions,
            });
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding, for dataset provenance.
    pub fn sha256(&self) -> String {
        sha256_json(self)
    }
}

pub(crate) fn validate_prob_vector(p: &[f64], name: &str) -> Result<()> {
    if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::invalid(format!("{name} entries must be in [0, 1]")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOL {
        return Err(Error::invalid(format!(
            "{name} must sum to 1 (got {sum})"
        )));
    }
    Ok(())
}

pub(crate) fn sha256_json<T: Serialize>(value: &T) -> String {
    use sha2::{Digest, Sha256};
    let bytes = serde_json::to_vec(value).expect("serializable value");
    let digest = Sha256::digest(&bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// A response-selection rule: a distribution over actions for every state.
pub trait Policy {
    fn num_states(&self) -> usize;
    fn num_actions(&self) -> usize;

    /// Probability of action `y` at state `x`.
    fn prob(&self, x: StateId, y: ActionId) -> f64;

    /// The full action distribution at `x`.
    fn action_probs(&self, x: StateId) -> Vec<f64> {
        (0..self.num_actions()).map(|y| self.prob(x, y)).collect()
    }
}

/// Explicit row-stochastic table of action probabilities.
///
/// Zero entries are allowed (reference and optimal policies can be
/// deterministic); exponential-weights iterates stay strictly positive by
/// construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    probs: Vec<Vec<f64>>,
}

impl TabularPolicy {
    pub fn new(probs: Vec<Vec<f64>>) -> Result<Self> {
        if probs.is_empty() || probs[0].is_empty() {
            return Err(Error::invalid("policy table must be non-empty"));
        }
        let width = probs[0].len();
        if probs.iter().any(|row| row.len() != width) {
            return Err(Error::invalid("policy rows must have equal length"));
        }
        for row in &probs {
            validate_prob_vector(row, "policy row")?;
        }
        Ok(TabularPolicy { probs })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        TabularPolicy {
            probs: vec![vec![1.0 / num_actions as f64; num_actions]; num_states],
        }
    }

    /// Point mass on one action per state.
    pub fn deterministic(num_states: usize, num_actions: usize, actions: &[ActionId]) -> Result<Self> {
        if actions.len() != num_states {
            return Err(Error::invalid("one action per state required"));
        }
        let mut probs = vec![vec![0.0; num_actions]; num_states];
        for (x, &y) in actions.iter().enumerate() {
            if y >= num_actions {
                return Err(Error::IndexOutOfRange {
                    what: "action",
                    got: y,
                    limit: num_actions,
                });
            }
            probs[x][y] = 1.0;
        }
        Ok(TabularPolicy { probs })
    }

    pub fn row(&self, x: StateId) -> &[f64] {
        &self.probs[x]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.probs
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.probs.iter().flatten().all(|&p| p > 0.0)
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn sha256(&self) -> String {
        sha256_json(self)
    }
}

impl Policy for TabularPolicy {
    fn num_states(&self) -> usize {
        self.probs.len()
    }
    fn num_actions(&self) -> usize {
        self.probs[0].len()
    }
    fn prob(&self, x: StateId, y: ActionId) -> f64 {
        self.probs[x][y]
    }
    fn action_probs(&self, x: StateId) -> Vec<f64> {
        self.probs[x].clone()
    }
}

/// Policy parametrized by unnormalized per-state logits. Row-wise softmax
/// induces the probabilities, so adding a constant to any row leaves the
/// policy unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxPolicy {
    logits: Vec<Vec<f64>>,
}

impl SoftmaxPolicy {
    pub fn new(logits: Vec<Vec<f64>>) -> Result<Self> {
        if logits.is_empty() || logits[0].is_empty() {
            return Err(Error::invalid("logit table must be non-empty"));
        }
        let width = logits[0].len();
        if logits.iter().any(|row| row.len() != width) {
            return Err(Error::invalid("logit rows must have equal length"));
        }
        if logits.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("logits must be finite"));
        }
        Ok(SoftmaxPolicy { logits })
    }

    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        SoftmaxPolicy {
            logits: vec![vec![0.0; num_actions]; num_states],
        }
    }

    /// Logits from the log-probabilities of a strictly positive table.
    pub fn from_tabular(pi: &TabularPolicy) -> Result<Self> {
        let mut logits = Vec::with_capacity(pi.num_states());
        for (x, row) in pi.rows().iter().enumerate() {
            let mut lrow = Vec::with_capacity(row.len());
            for (y, &p) in row.iter().enumerate() {
                if p <= 0.0 {
                    return Err(Error::ZeroProbability {
                        role: "tabular policy",
                        state: x,
                        action: y,
                    });
                }
                lrow.push(p.ln());
            }
            logits.push(lrow);
        }
        Ok(SoftmaxPolicy { logits })
    }

    pub fn logits(&self) -> &[Vec<f64>] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.logits
    }

    /// `log π(y|x)` for one row: logits minus the row log-partition.
    pub fn log_prob_row(&self, x: StateId) -> Vec<f64> {
        let row = &self.logits[x];
        let lse = crate::math::log_sum_exp(row);
        row.iter().map(|l| l - lse).collect()
    }

    /// Materialize the induced probability table.
    pub fn to_tabular(&self) -> TabularPolicy {
        let probs = (0..self.logits.len())
            .map(|x| self.log_prob_row(x).iter().map(|lp| lp.exp()).collect())
            .collect();
        TabularPolicy { probs }
    }
}

impl Policy for SoftmaxPolicy {
    fn num_states(&self) -> usize {
        self.logits.len()
    }
    fn num_actions(&self) -> usize {
        self.logits[0].len()
    }
    fn prob(&self, x: StateId, y: ActionId) -> f64 {
        self.log_prob_row(x)[y].exp()
    }
    fn action_probs(&self, x: StateId) -> Vec<f64> {
        self.log_prob_row(x).iter().map(|lp| lp.exp()).collect()
    }
}

/// Weighted average of tabular policies, the return type of the iterative
/// learners (`Unif` over the recorded iterates).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePolicy {
    pub components: Vec<TabularPolicy>,
    pub weights: Vec<f64>,
}

impl MixturePolicy {
    pub fn new(components: Vec<TabularPolicy>, weights: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        if components.len() != weights.len() {
            return Err(Error::invalid("one weight per component required"));
        }
        validate_prob_vector(&weights, "mixture weights")?;
        let (s, a) = (components[0].num_states(), components[0].num_actions());
        if components
            .iter()
            .any(|c| c.num_states() != s || c.num_actions() != a)
        {
            return Err(Error::invalid("mixture components must share a shape"));
        }
        Ok(MixturePolicy {
            components,
            weights,
        })
    }

    /// Uniform mixture over the given iterates.
    pub fn uniform_over(components: Vec<TabularPolicy>) -> Result<Self> {
        let w = 1.0 / components.len() as f64;
        let weights = vec![w; components.len()];
        MixturePolicy::new(components, weights)
    }
}

impl Policy for MixturePolicy {
    fn num_states(&self) -> usize {
        self.components[0].num_states()
    }
    fn num_actions(&self) -> usize {
        self.components[0].num_actions()
    }
    fn prob(&self, x: StateId, y: ActionId) -> f64 {
        self.components
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| w * c.prob(x, y))
            .sum()
    }
}

/// Expected reward of `pi` at prompt `x` under the true reward:
/// `V^π(x) = Σ_y π(y|x)·r*(x,y)`.
pub fn value<P: Policy>(bandit: &Bandit, pi: &P, x: StateId) -> Result<f64> {
    bandit.check_state(x)?;
    let probs = pi.action_probs(x);
    Ok(probs
        .iter()
        .enumerate()
        .map(|(y, p)| p * bandit.r_star.get(x, y))
        .sum())
}

/// Per-state argmax of `r*`, ties broken by the lowest action index.
pub fn optimal_policy(bandit: &Bandit) -> TabularPolicy {
    let actions: Vec<ActionId> = (0..bandit.num_states)
        .map(|x| argmax_first(bandit.r_star.row(x)))
        .collect();
    TabularPolicy::deterministic(bandit.num_states, bandit.num_actions, &actions)
        .expect("actions are in range by construction")
}

/// Expected value gap to the optimal policy under the prompt distribution:
/// `E_{x∼ρ}[V^{π*}(x) − V^π(x)]`. Non-negative up to rounding.
pub fn suboptimality<P: Policy>(bandit: &Bandit, pi: &P) -> Result<f64> {
    let pi_star = optimal_policy(bandit);
    let mut total = 0.0;
    for x in 0..bandit.num_states {
        if bandit.rho[x] == 0.0 {
            continue;
        }
        total += bandit.rho[x] * (value(bandit, &pi_star, x)? - value(bandit, pi, x)?);
    }
    Ok(total)
}

/// Exact expectation `E_{x∼ρ, y∼π(·|x)}[f(x,y)]` — the workhorse behind the
/// diagnostics' I-terms.
pub fn expected_under<P: Policy>(rho: &[f64], pi: &P, f: &RewardTable) -> f64 {
    let mut total = 0.0;
    for (x, &rx) in rho.iter().enumerate() {
        if rx == 0.0 {
            continue;
        }
        let probs = pi.action_probs(x);
        let inner: f64 = probs
            .iter()
            .enumerate()
            .map(|(y, p)| p * f.get(x, y))
            .sum();
        total += rx * inner;
    }
    total
}
