//! Finite explicit reward classes for the enumerative critic, policy-class
//! descriptors, the sigmoid curvature constant, and the implicit reward
//! induced by a policy pair.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::{Bandit, Policy, RewardTable, SoftmaxPolicy, TabularPolicy};
use crate::error::{Error, Result};
use crate::math::sigmoid;

/// A finite class of bounded reward tables. When built in perturbation
/// mode the true reward is member 0 bit-exactly, so realizability holds by
/// construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteRewardClass {
    pub members: Vec<RewardTable>,
    #[serde(rename = "R")]
    pub r_bound: f64,
    pub contains_r_star: bool,
}

impl FiniteRewardClass {
    /// Build from explicit members, validating the shared bound.
    pub fn from_members(
        members: Vec<RewardTable>,
        r_bound: f64,
        contains_r_star: bool,
    ) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::invalid("reward class must have at least one member"));
        }
        let (s, a) = (members[0].num_states(), members[0].num_actions());
        for m in &members {
            if m.num_states() != s || m.num_actions() != a {
                return Err(Error::invalid("reward class members must share a shape"));
            }
            if m.max_abs() > r_bound {
                return Err(Error::invalid(format!(
                    "member exceeds bound: {} > {r_bound}",
                    m.max_abs()
                )));
            }
        }
        Ok(FiniteRewardClass {
            members,
            r_bound,
            contains_r_star,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// `ln |𝓕|`, the statistical complexity that enters the bounds.
    pub fn log_cardinality(&self) -> f64 {
        (self.members.len() as f64).ln()
    }

    /// Concatenate another class sharing the same bound and shape. The
    /// result keeps this class's members first, so member 0 stays put.
    pub fn union(mut self, other: FiniteRewardClass) -> Result<Self> {
        let contains = self.contains_r_star || other.contains_r_star;
        self.members.extend(other.members);
        FiniteRewardClass::from_members(self.members, self.r_bound.max(other.r_bound), contains)
    }
}

/// How class members are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassMode {
    /// Member 0 is `r*`; the rest are `r*` plus uniform noise, clipped back
    /// into `[-R, R]` so the bound stays exact.
    PerturbRStar,
    /// Every member is drawn uniformly in `[-R, R]`.
    Random,
}

/// Descriptor for the policy classes the learners search over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyClassKind {
    /// Every strictly positive row-stochastic table.
    TabularUnconstrained,
    /// Policies induced by row-wise softmax of a logit table.
    SoftmaxLogits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyClass {
    pub kind: PolicyClassKind,
    pub num_states: usize,
    pub num_actions: usize,
}

/// Generate a finite reward class for a bandit.
///
/// `amplitude` scales the uniform perturbation noise in
/// [`ClassMode::PerturbRStar`]; it is ignored in [`ClassMode::Random`].
pub fn make_class(
    bandit: &Bandit,
    size: usize,
    mode: ClassMode,
    amplitude: f64,
    seed: u64,
) -> Result<FiniteRewardClass> {
    if size == 0 {
        return Err(Error::invalid("class size must be at least 1"));
    }
    if amplitude < 0.0 {
        return Err(Error::invalid("amplitude must be non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = bandit.r_bound;
    let mut members = Vec::with_capacity(size);
    match mode {
        ClassMode::PerturbRStar => {
            members.push(bandit.r_star.clone());
            for _ in 1..size {
                let mut table = bandit.r_star.clone();
                for x in 0..bandit.num_states {
                    for y in 0..bandit.num_actions {
                        let noise = (rng.random::<f64>() * 2.0 - 1.0) * amplitude;
                        table.set(x, y, (table.get(x, y) + noise).clamp(-r, r));
                    }
                }
                members.push(table);
            }
        }
        ClassMode::Random => {
            for _ in 0..size {
                let rows = (0..bandit.num_states)
                    .map(|_| {
                        (0..bandit.num_actions)
                            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * r)
                            .collect()
                    })
                    .collect();
                members.push(RewardTable::new(rows)?);
            }
        }
    }
    let contains = matches!(mode, ClassMode::PerturbRStar);
    FiniteRewardClass::from_members(members, r, contains)
}

/// Inverse of the minimum sigmoid derivative on `[-R, R]`. The derivative
/// `σ'(z) = σ(z)(1 − σ(z))` decreases in `|z|`, so the infimum sits at the
/// endpoints and `κ(R) = 1 / (σ(R)(1 − σ(R)))`, with `κ(0) = 4`.
pub fn kappa(r: f64) -> Result<f64> {
    if r < 0.0 {
        return Err(Error::invalid("reward bound must be non-negative"));
    }
    let s = sigmoid(r);
    Ok(1.0 / (s * (1.0 - s)))
}

/// Reward table induced by a policy update: `η·log(π(y|x)/π_t(y|x))`,
/// returned with each state row mean-centered to fix the per-state constant
/// that no loss can identify. Within-state differences are exactly the
/// η-scaled log-ratio differences.
pub fn implicit_reward(
    pi: &SoftmaxPolicy,
    pi_t: &TabularPolicy,
    eta: f64,
) -> Result<RewardTable> {
    if !(eta > 0.0) {
        return Err(Error::invalid("eta must be positive"));
    }
    let (s, a) = (pi_t.num_states(), pi_t.num_actions());
    let mut rows = Vec::with_capacity(s);
    for x in 0..s {
        let lp = pi.log_prob_row(x);
        let mut row = Vec::with_capacity(a);
        for (y, &lpy) in lp.iter().enumerate() {
            let p_ref = pi_t.prob(x, y);
            if p_ref <= 0.0 {
                return Err(Error::ZeroProbability {
                    role: "iteration policy",
                    state: x,
                    action: y,
                });
            }
            row.push(eta * (lpy - p_ref.ln()));
        }
        rows.push(row);
    }
    Ok(RewardTable::new(rows)?.centered())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sample_dataset;
    use crate::harness::{random_bandit, random_reference};
    use crate::objectives::nll_ed;

    #[test]
    fn singleton_perturb_class_is_r_star() {
        let b = random_bandit(3, 4, 2.0, 5).unwrap();
        let c = make_class(&b, 1, ClassMode::PerturbRStar, 0.5, 6).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.members[0], b.r_star);
        assert!(c.contains_r_star);
    }

    #[test]
    fn zero_size_class_errors() {
        let b = random_bandit(2, 2, 1.0, 7).unwrap();
        assert!(make_class(&b, 0, ClassMode::Random, 0.0, 8).is_err());
    }

    #[test]
    fn all_members_respect_bound() {
        let b = random_bandit(4, 5, 1.5, 9).unwrap();
        for mode in [ClassMode::PerturbRStar, ClassMode::Random] {
            let c = make_class(&b, 64, mode, 3.0, 10).unwrap();
            for m in &c.members {
                assert!(m.max_abs() <= b.r_bound + 1e-15);
            }
        }
    }

    #[test]
    fn class_generation_is_deterministic() {
        let b = random_bandit(3, 3, 1.0, 11).unwrap();
        let c1 = make_class(&b, 16, ClassMode::PerturbRStar, 0.4, 12).unwrap();
        let c2 = make_class(&b, 16, ClassMode::PerturbRStar, 0.4, 12).unwrap();
        assert_eq!(c1, c2);
    }

    #[test]
    fn enumerated_nll_minimizer_matches_double_enumeration() {
        let b = random_bandit(3, 4, 2.0, 13).unwrap();
        let pi_ref = random_reference(3, 4, 14).unwrap();
        let d = sample_dataset(&b, &pi_ref, 400, 15).unwrap();
        let c = make_class(&b, 64, ClassMode::PerturbRStar, 0.8, 16).unwrap();

        let losses: Vec<f64> = c.members.iter().map(|m| nll_ed(m, &d).unwrap()).collect();
        let mut best = 0;
        for (i, &l) in losses.iter().enumerate() {
            if l < losses[best] {
                best = i;
            }
        }
        // Independent second pass in reverse order with strict comparison.
        let mut best2 = c.len() - 1;
        for i in (0..c.len()).rev() {
            let l = nll_ed(&c.members[i], &d).unwrap();
            if l < losses[best2] || (l == losses[best2] && i < best2) {
                best2 = i;
            }
        }
        assert_eq!(best, best2);
    }

    #[test]
    fn kappa_reference_values() {
        assert!((kappa(0.0).unwrap() - 4.0).abs() <= 1e-12);
        assert!((kappa(3.0_f64.ln()).unwrap() - 16.0 / 3.0).abs() <= 1e-12);
        assert!(kappa(-0.5).is_err());
    }

    #[test]
    fn kappa_matches_grid_minimization() {
        let r = 2.0;
        let mut min_deriv = f64::INFINITY;
        let points = 100_000;
        for i in 0..=points {
            let z = -r + 2.0 * r * (i as f64) / points as f64;
            let s = sigmoid(z);
            min_deriv = min_deriv.min(s * (1.0 - s));
        }
        assert!((min_deriv - 1.0 / kappa(r).unwrap()).abs() <= 1e-9);
    }

    #[test]
    fn kappa_nondecreasing_and_at_least_four() {
        let mut prev = 0.0;
        for i in 0..200 {
            let k = kappa(i as f64 * 0.05).unwrap();
            assert!(k >= 4.0 - 1e-12);
            assert!(k >= prev - 1e-12);
            prev = k;
        }
    }

    #[test]
    fn implicit_reward_at_frozen_policy_is_zero() {
        let pi_t = random_reference(3, 4, 21).unwrap();
        let pi = SoftmaxPolicy::from_tabular(&pi_t).unwrap();
        let f = implicit_reward(&pi, &pi_t, 0.7).unwrap();
        assert!(f.max_abs() <= 1e-12);
    }

    #[test]
    fn implicit_reward_log_ratio_arithmetic() {
        // π_t uniform over 2 actions, π = (0.75, 0.25), η = 1: the centered
        // gap is log 3.
        let pi_t = TabularPolicy::uniform(1, 2);
        let pi = SoftmaxPolicy::from_tabular(
            &TabularPolicy::new(vec![vec![0.75, 0.25]]).unwrap(),
        )
        .unwrap();
        let f = implicit_reward(&pi, &pi_t, 1.0).unwrap();
        assert!((f.get(0, 0) - f.get(0, 1) - 3.0_f64.ln()).abs() <= 1e-12);
        // Rows are centered.
        assert!((f.get(0, 0) + f.get(0, 1)).abs() <= 1e-12);
    }

    #[test]
    fn implicit_reward_zero_reference_errors() {
        let pi_t = TabularPolicy::new(vec![vec![1.0, 0.0]]).unwrap();
        let pi = SoftmaxPolicy::zeros(1, 2);
        assert!(matches!(
            implicit_reward(&pi, &pi_t, 1.0),
            Err(Error::ZeroProbability { .. })
        ));
    }

    #[test]
    fn class_json_round_trip() {
        let b = random_bandit(2, 3, 1.0, 23).unwrap();
        let c = make_class(&b, 8, ClassMode::PerturbRStar, 0.3, 24).unwrap();
        let text = serde_json::to_string(&c).unwrap();
        let back: FiniteRewardClass = serde_json::from_str(&text).unwrap();
        assert_eq!(c, back);
    }
}
