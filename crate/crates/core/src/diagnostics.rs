//! Exact computation of the coverage and optimization constants and
//! runtime verification of the bounds they appear in.
//!
//! Everything here is an exhaustive tabular sum — no Monte Carlo — because
//! these quantities verify identities and inequalities where sampling
//! noise would be indistinguishable from a violation. Coverage quantities
//! that are genuinely unbounded are reported as `+∞`, never clipped.

use serde::{Deserialize, Serialize};

use crate::bandit::{expected_under, optimal_policy, suboptimality, Bandit, Policy, RewardTable, TabularPolicy};
use crate::data::{bt_prob, sample_dataset};
use crate::error::{Error, Result};
use crate::harness::linear_fit;
use crate::learners::RunRecord;
use crate::math::kl_divergence;
use crate::objectives::nll_ed;
use crate::spaces::{kappa, FiniteRewardClass};

/// Per-iteration pieces of the suboptimality identity
/// `subopt(π_t) = I1 + I2 + I3 − I4`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationDecomposition {
    pub iteration: usize,
    pub i1: f64,
    pub i2: f64,
    pub i3: f64,
    pub i4: f64,
    pub subopt: f64,
    pub residual: f64,
}

/// The decomposition across a full run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub iterations: Vec<IterationDecomposition>,
    pub max_residual: f64,
}

/// The instance constants entering the suboptimality bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub concentrability: f64,
    pub c_kl: f64,
    pub kappa: f64,
    pub density_ratio: f64,
    pub log_card_f: f64,
}

/// Outcome of the mirror-descent regret check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegretCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Single-policy concentrability of the reward class:
/// the square root of the supremum over the class of
/// `(E_{ρ, π*, π_ref}[Z])² / E_{ρ, π_ref, π_ref}[Z²]` where
/// `Z = r*(x,y1) − r*(x,y2) − f(x,y1) + f(x,y2)`, with `0/0 = 0`.
/// Both expectations are exhaustive sums over `(x, y1, y2)`.
pub fn concentrability(
    bandit: &Bandit,
    class: &FiniteRewardClass,
    pi_star: &TabularPolicy,
    pi_ref: &TabularPolicy,
) -> f64 {
    let mut sup = 0.0_f64;
    for f in &class.members {
        let mut numerator_mean = 0.0;
        let mut denominator_sq = 0.0;
        for x in 0..bandit.num_states {
            let rx = bandit.rho[x];
            if rx == 0.0 {
                continue;
            }
            for y1 in 0..bandit.num_actions {
                for y2 in 0..bandit.num_actions {
                    let z = bandit.r_star.get(x, y1) - bandit.r_star.get(x, y2)
                        - f.get(x, y1)
                        + f.get(x, y2);
                    numerator_mean += rx * pi_star.prob(x, y1) * pi_ref.prob(x, y2) * z;
                    denominator_sq += rx * pi_ref.prob(x, y1) * pi_ref.prob(x, y2) * z * z;
                }
            }
        }
        let num = numerator_mean * numerator_mean;
        let ratio = if num == 0.0 {
            0.0
        } else if denominator_sq == 0.0 {
            return f64::INFINITY;
        } else {
            num / denominator_sq
        };
        sup = sup.max(ratio);
    }
    sup.sqrt()
}

/// The plain density ratio `sup_{x,y} π*(y|x) / π_ref(y|x)`, with `0/0 = 0`
/// and `+∞` whenever the optimal policy charges a reference-null pair.
pub fn density_ratio(pi_star: &TabularPolicy, pi_ref: &TabularPolicy) -> f64 {
    let mut sup = 0.0_f64;
    for x in 0..pi_star.num_states() {
        for y in 0..pi_star.num_actions() {
            let p = pi_star.prob(x, y);
            if p == 0.0 {
                continue;
            }
            let q = pi_ref.prob(x, y);
            if q == 0.0 {
                return f64::INFINITY;
            }
            sup = sup.max(p / q);
        }
    }
    sup
}

/// `E_{x∼ρ}[D_KL(π*(·|x) || π_init(·|x))]`, `+∞` on a support violation.
pub fn c_kl(rho: &[f64], pi_star: &TabularPolicy, pi_init: &TabularPolicy) -> f64 {
    let mut total = 0.0;
    for (x, &rx) in rho.iter().enumerate() {
        if rx == 0.0 {
            continue;
        }
        let kl = kl_divergence(pi_star.row(x), pi_init.row(x));
        if kl.is_infinite() {
            return f64::INFINITY;
        }
        total += rx * kl;
    }
    total
}

/// All instance constants in one report.
pub fn theory_constants(
    bandit: &Bandit,
    class: &FiniteRewardClass,
    pi_ref: &TabularPolicy,
    pi_init: &TabularPolicy,
) -> Result<TheoryConstants> {
    let pi_star = optimal_policy(bandit);
    Ok(TheoryConstants {
        concentrability: concentrability(bandit, class, &pi_star, pi_ref),
        c_kl: c_kl(&bandit.rho, &pi_star, pi_init),
        kappa: kappa(bandit.r_bound)?,
        density_ratio: density_ratio(&pi_star, pi_ref),
        log_card_f: class.log_cardinality(),
    })
}

/// Exact four-term decomposition of `subopt(π_t)` for every iteration of a
/// run with recorded critics:
///
/// - `I1 = E_{ρ×π*}[r* − f_t] − E_{ρ×π_ref}[r* − f_t]`
/// - `I2 = E_{ρ×π*}[f_t] − E_{ρ×π_t}[f_t]`
/// - `I3 = E_{ρ×π_t}[f_t] − E_{ρ×π_ref}[f_t]`
/// - `I4 = E_{ρ×π_t}[r*] − E_{ρ×π_ref}[r*]`
///
/// The identity `subopt(π_t) = I1 + I2 + I3 − I4` holds for any critic;
/// the residual is reported for each iteration.
pub fn decompose(
    bandit: &Bandit,
    run: &RunRecord,
    pi_ref: &TabularPolicy,
) -> Result<DecompositionReport> {
    let pi_star = optimal_policy(bandit);
    let rho = &bandit.rho;
    let r_star = &bandit.r_star;

    let e_star_r = expected_under(rho, &pi_star, r_star);
    let e_ref_r = expected_under(rho, pi_ref, r_star);

    let mut iterations = Vec::new();
    let mut max_residual = 0.0_f64;
    let mut any = false;
    for (t, it) in run.iterations.iter().enumerate() {
        let Some(f_t) = it.critic.as_ref() else {
            continue;
        };
        any = true;
        let e_star_f = expected_under(rho, &pi_star, f_t);
        let e_ref_f = expected_under(rho, pi_ref, f_t);
        let e_t_f = expected_under(rho, &it.policy, f_t);
        let e_t_r = expected_under(rho, &it.policy, r_star);

        let i1 = (e_star_r - e_star_f) - (e_ref_r - e_ref_f);
        let i2 = e_star_f - e_t_f;
        let i3 = e_t_f - e_ref_f;
        let i4 = e_t_r - e_ref_r;
        let subopt = suboptimality(bandit, &it.policy)?;
        let residual = (subopt - (i1 + i2 + i3 - i4)).abs();
        max_residual = max_residual.max(residual);
        iterations.push(IterationDecomposition {
            iteration: t + 1,
            i1,
            i2,
            i3,
            i4,
            subopt,
            residual,
        });
    }
    if !any {
        return Err(Error::invalid(
            "run carries no critic trace to decompose",
        ));
    }
    Ok(DecompositionReport {
        iterations,
        max_residual,
    })
}

/// Check the cumulative mirror-descent regret against its bound:
/// `Σ_t [E_{ρ×π*}[f_t] − E_{ρ×π_t}[f_t]] ≤ 2R²T/η + η·c_KL(π*, π_init)`,
/// with `T` the number of recorded critic iterations.
pub fn regret_check(
    run: &RunRecord,
    rho: &[f64],
    pi_star: &TabularPolicy,
    pi_init: &TabularPolicy,
    eta: f64,
    r_bound: f64,
) -> RegretCheck {
    let mut lhs = 0.0;
    let mut count = 0usize;
    for (pi_t, f_t) in run.critic_iterations() {
        lhs += expected_under(rho, pi_star, f_t) - expected_under(rho, pi_t, f_t);
        count += 1;
    }
    let rhs = 2.0 * r_bound * r_bound * count as f64 / eta + eta * c_kl(rho, pi_star, pi_init);
    RegretCheck {
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-9,
    }
}

/// One row of the concentration probe: sample size, mean exact squared
/// total-variation error of the MLE fit, and the number of seeds averaged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationPoint {
    pub n: usize,
    pub mean_tv_sq: f64,
    pub seeds: usize,
}

/// Result of the MLE concentration probe: per-`n` mean TV² plus the fitted
/// log-log slope across the grid. The slope is absent when some grid point
/// measured exactly zero error (the class resolved exactly), since a
/// log-log fit is then undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationProbe {
    pub points: Vec<ConcentrationPoint>,
    pub slope: Option<f64>,
}

/// Exact `E_{x∼ρ, y1,y2∼π_ref}[ D_TV(BT_f, BT_{r*})² ]` where the TV
/// distance between the two Bernoulli preference laws at `(x, y1, y2)` is
/// `|σ(Δf) − σ(Δr*)|`.
pub fn expected_tv_sq(bandit: &Bandit, pi_ref: &TabularPolicy, f: &RewardTable) -> f64 {
    let mut total = 0.0;
    for x in 0..bandit.num_states {
        let rx = bandit.rho[x];
        if rx == 0.0 {
            continue;
        }
        for y1 in 0..bandit.num_actions {
            for y2 in 0..bandit.num_actions {
                let w = rx * pi_ref.prob(x, y1) * pi_ref.prob(x, y2);
                if w == 0.0 {
                    continue;
                }
                let tv = (bt_prob(f, x, y1, y2) - bt_prob(&bandit.r_star, x, y1, y2)).abs();
                total += w * tv * tv;
            }
        }
    }
    total
}

/// Fit the preference MLE over the class at each sample size and measure
/// how fast its exact expected TV² error decays; the log-log slope across
/// the grid is the observable rate (theory predicts −1 for a well-tempered
/// class). Requires a realizable class.
pub fn mle_concentration_probe(
    bandit: &Bandit,
    pi_ref: &TabularPolicy,
    class: &FiniteRewardClass,
    n_grid: &[usize],
    seeds: &[u64],
) -> Result<ConcentrationProbe> {
    if !class.contains_r_star {
        return Err(Error::invalid("probe requires a realizable class"));
    }
    if n_grid.len() < 2 {
        return Err(Error::invalid("probe needs at least two sample sizes"));
    }
    let mut points = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let mut total = 0.0;
        for &seed in seeds {
            let data_seed =
                crate::harness::derive_seed(&["mle-probe", &n.to_string(), &seed.to_string()]);
            let data = sample_dataset(bandit, pi_ref, n, data_seed)?;
            let mut best = 0usize;
            let mut best_v = f64::INFINITY;
            for (i, member) in class.members.iter().enumerate() {
                let v = nll_ed(member, &data)?;
                if v < best_v {
                    best_v = v;
                    best = i;
                }
            }
            total += expected_tv_sq(bandit, pi_ref, &class.members[best]);
        }
        points.push(ConcentrationPoint {
            n,
            mean_tv_sq: total / seeds.len() as f64,
            seeds: seeds.len(),
        });
    }
    let slope = if points.iter().all(|p| p.mean_tv_sq > 0.0) {
        let xs: Vec<f64> = points.iter().map(|p| (p.n as f64).ln()).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.mean_tv_sq.ln()).collect();
        Some(linear_fit(&xs, &ys)?.0)
    } else {
        None
    };
    Ok(ConcentrationProbe { points, slope })
}

/// JSON report emitted by the `verify` command: constants, decomposition,
/// and bound checks for one recorded run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub constants: TheoryConstants,
    pub decomposition: DecompositionReport,
    pub regret: RegretCheck,
    pub decomposition_ok: bool,
    pub residual_tolerance: f64,
}

/// Assemble the full verification report for a recorded run.
pub fn verify_run(
    bandit: &Bandit,
    run: &RunRecord,
    class: &FiniteRewardClass,
    pi_ref: &TabularPolicy,
    pi_init: &TabularPolicy,
) -> Result<VerifyReport> {
    let constants = theory_constants(bandit, class, pi_ref, pi_init)?;
    let decomposition = decompose(bandit, run, pi_ref)?;
    let pi_star = optimal_policy(bandit);
    let regret = regret_check(
        run,
        &bandit.rho,
        &pi_star,
        pi_init,
        run.config.eta,
        bandit.r_bound,
    );
    let tol = 1e-10;
    let ok = decomposition.max_residual <= tol;
    Ok(VerifyReport {
        constants,
        decomposition,
        regret,
        decomposition_ok: ok,
        residual_tolerance: tol,
    })
}
