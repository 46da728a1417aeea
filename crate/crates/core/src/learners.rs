//! Training algorithms: the self-play learner in its theoretical
//! (enumerative critic + exponential weights) and practical
//! (single-timescale policy optimization) forms, plus the DPO, SPIN,
//! two-step RLHF and greedy-MLE baselines.
//!
//! One run is single-threaded and fully deterministic given its config and
//! seed; independent runs share no mutable state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::{MixturePolicy, Policy, RewardTable, SoftmaxPolicy, TabularPolicy};
use crate::data::PreferenceDataset;
use crate::error::{Error, Result};
use crate::math::{argmax_first, categorical_from_uniform, log_sum_exp};
use crate::objectives::{
    dpo_loss, duel_ld_exact, nll_ed, nll_ed_with_grad, spac_objective, spac_objective_exact,
    spac_objective_smoothed, Comparison, LossValue,
};
use crate::spaces::{implicit_reward, FiniteRewardClass};
use crate::ActionId;

/// Full-batch gradient descent settings for the inner minimizations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub step_size: f64,
    pub max_steps: usize,
    pub grad_tol: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            step_size: 0.5,
            max_steps: 500,
            grad_tol: 1e-8,
        }
    }
}

/// How the critic minimization is carried out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticMode {
    /// Exact argmin over an explicit finite class (ties to the lowest
    /// member index). The theory-faithful default.
    #[default]
    Enumerate,
    /// Projected gradient descent over reward tables clipped entrywise
    /// into `[-R, R]`.
    Gradient,
}

/// Whether the dueling term takes the policy expectation exactly or from
/// per-record samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LdMode {
    #[default]
    Exact,
    Sampled,
}

/// Hyperparameters shared by the learners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    /// Number of recorded policies `T`; the loop performs `T - 1` updates.
    pub iterations: usize,
    pub eta: f64,
    pub lambda: f64,
    /// KL weight for the two-step RLHF baseline and DPO temperature.
    pub alpha: f64,
    pub critic_mode: CriticMode,
    pub ld_mode: LdMode,
    pub comparison: Comparison,
    pub optimizer: OptimizerConfig,
    /// Partition the dataset into `T - 1` chunks, one per iteration.
    pub split_data: bool,
    pub seed: u64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            iterations: 3,
            eta: 0.1,
            lambda: 1.0,
            alpha: 0.1,
            critic_mode: CriticMode::Enumerate,
            ld_mode: LdMode::Exact,
            comparison: Comparison::Average,
            optimizer: OptimizerConfig::default(),
            split_data: false,
            seed: 0,
        }
    }
}

impl LearnerConfig {
    fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("iteration count T must be at least 1"));
        }
        if !(self.eta > 0.0) {
            return Err(Error::invalid("eta must be positive"));
        }
        if self.lambda < 0.0 {
            return Err(Error::invalid("lambda must be non-negative"));
        }
        Ok(())
    }
}

/// Snapshot of one iteration: the policy `π_t`, the critic `f_t` fit under
/// it (absent for the final policy, which is never evaluated), and the
/// objective values reached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub policy: TabularPolicy,
    pub critic: Option<RewardTable>,
    pub critic_objective: Option<f64>,
    pub policy_loss: Option<f64>,
}

/// Complete trace of a training run plus the uniform mixture over the
/// recorded iterates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub iterations: Vec<IterationTrace>,
    pub mixture: MixturePolicy,
    pub config: LearnerConfig,
}

impl RunRecord {
    /// Per-iteration `(policy, critic)` pairs for iterations that fit one.
    pub fn critic_iterations(&self) -> impl Iterator<Item = (&TabularPolicy, &RewardTable)> {
        self.iterations
            .iter()
            .filter_map(|it| it.critic.as_ref().map(|f| (&it.policy, f)))
    }

    /// Objective values of the recorded critic fits, in iteration order.
    pub fn critic_objectives(&self) -> Vec<f64> {
        self.iterations
            .iter()
            .filter_map(|it| it.critic_objective)
            .collect()
    }

    /// Final inner-optimization losses, in iteration order.
    pub fn policy_losses(&self) -> Vec<f64> {
        self.iterations
            .iter()
            .filter_map(|it| it.policy_loss)
            .collect()
    }
}

/// The search space for [`critic_step`].
#[derive(Debug, Clone)]
pub enum CriticSpace<'a> {
    /// Exact enumeration over a finite class.
    Enumerate(&'a FiniteRewardClass),
    /// All tables with entries in `[-r_bound, r_bound]`.
    Gradient { r_bound: f64 },
}

/// How the dueling term's policy expectation is supplied.
#[derive(Debug, Clone, Copy)]
pub enum PolicyTerm<'a> {
    /// Exact expectation under the iteration policy.
    Exact,
    /// One pre-sampled action per record.
    Sampled(&'a [ActionId]),
}

/// Dueling value of a fixed table given the policy term and comparison.
fn duel_value(
    f: &RewardTable,
    pi_t: &TabularPolicy,
    data: &PreferenceDataset,
    term: PolicyTerm<'_>,
    comparison: Comparison,
) -> Result<f64> {
    match term {
        PolicyTerm::Exact => duel_ld_exact(f, pi_t, data, comparison),
        PolicyTerm::Sampled(ys) => {
            if ys.len() != data.len() {
                return Err(Error::invalid("one sampled action per record required"));
            }
            let (ww, wl) = comparison.weights();
            let n = data.len() as f64;
            let mut total = 0.0;
            for (r, &y) in data.records.iter().zip(ys) {
                total += f.get(r.x, y) - ww * f.get(r.x, r.y_w) - wl * f.get(r.x, r.y_l);
            }
            Ok(total / n)
        }
    }
}

/// One critic fit: `argmin_f duel(f, π_t) + λ·E_D(f)` over the given space.
/// Enumeration ties break to the lowest member index; gradient mode runs
/// projected descent from the zero table with step halving on increase.
pub fn critic_step(
    data: &PreferenceDataset,
    pi_t: &TabularPolicy,
    space: &CriticSpace<'_>,
    lambda: f64,
    term: PolicyTerm<'_>,
    comparison: Comparison,
    optimizer: &OptimizerConfig,
) -> Result<(RewardTable, f64)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if lambda < 0.0 {
        return Err(Error::invalid("lambda must be non-negative"));
    }
    match space {
        CriticSpace::Enumerate(class) => {
            if class.is_empty() {
                return Err(Error::invalid("reward class is empty"));
            }
            let mut best: Option<(usize, f64)> = None;
            for (i, member) in class.members.iter().enumerate() {
                let mut g = duel_value(member, pi_t, data, term, comparison)?;
                if lambda > 0.0 {
                    g += lambda * nll_ed(member, data)?;
                }
                if best.map_or(true, |(_, bg)| g < bg) {
                    best = Some((i, g));
                }
            }
            let (idx, objective) = best.expect("non-empty class");
            Ok((class.members[idx].clone(), objective))
        }
        CriticSpace::Gradient { r_bound } => {
            gradient_critic(data, pi_t, *r_bound, lambda, term, comparison, optimizer)
        }
    }
}

/// The dueling term is linear in the table, so its gradient is a constant
/// table accumulated once from the records.
fn duel_gradient(
    pi_t: &TabularPolicy,
    data: &PreferenceDataset,
    term: PolicyTerm<'_>,
    comparison: Comparison,
) -> Vec<Vec<f64>> {
    let (s, a) = (pi_t.num_states(), pi_t.num_actions());
    let n = data.len() as f64;
    let (ww, wl) = comparison.weights();
    let mut grad = vec![vec![0.0; a]; s];
    for (j, r) in data.records.iter().enumerate() {
        match term {
            PolicyTerm::Exact => {
                for (y, &p) in pi_t.row(r.x).iter().enumerate() {
                    grad[r.x][y] += p / n;
                }
            }
            PolicyTerm::Sampled(ys) => grad[r.x][ys[j]] += 1.0 / n,
        }
        grad[r.x][r.y_w] -= ww / n;
        grad[r.x][r.y_l] -= wl / n;
    }
    grad
}

fn gradient_critic(
    data: &PreferenceDataset,
    pi_t: &TabularPolicy,
    r_bound: f64,
    lambda: f64,
    term: PolicyTerm<'_>,
    comparison: Comparison,
    optimizer: &OptimizerConfig,
) -> Result<(RewardTable, f64)> {
    let (s, a) = (pi_t.num_states(), pi_t.num_actions());
    let linear = duel_gradient(pi_t, data, term, comparison);
    let objective = |f: &RewardTable| -> Result<f64> {
        let mut g = duel_value(f, pi_t, data, term, comparison)?;
        if lambda > 0.0 {
            g += lambda * nll_ed(f, data)?;
        }
        Ok(g)
    };
    let mut f = RewardTable::zeros(s, a);
    let mut value = objective(&f)?;
    let mut step = optimizer.step_size;
    for _ in 0..optimizer.max_steps {
        let mut grad = linear.clone();
        if lambda > 0.0 {
            let nll = nll_ed_with_grad(&f, data)?;
            for x in 0..s {
                for y in 0..a {
                    grad[x][y] += lambda * nll.grad[x][y];
                }
            }
        }
        // Projected-gradient stationarity: the clipped step must move.
        let mut candidate = f.clone();
        let mut moved = 0.0_f64;
        for x in 0..s {
            for y in 0..a {
                let v = (f.get(x, y) - step * grad[x][y]).clamp(-r_bound, r_bound);
                moved = moved.max((v - f.get(x, y)).abs());
                candidate.set(x, y, v);
            }
        }
        if moved / step <= optimizer.grad_tol {
            break;
        }
        let cand_value = objective(&candidate)?;
        if cand_value <= value {
            f = candidate;
            value = cand_value;
        } else {
            step *= 0.5;
            if step < 1e-18 {
                break;
            }
        }
    }
    Ok((f, value))
}

/// Exponential-weights policy update: `π_{t+1}(y|x) ∝ π_t(y|x)·exp(f(x,y)/η)`,
/// computed in log space with a per-row max shift. Per-state constant
/// shifts of `f` leave the output unchanged.
pub fn mirror_descent_step(
    pi_t: &TabularPolicy,
    f: &RewardTable,
    eta: f64,
) -> Result<TabularPolicy> {
    if !(eta > 0.0) {
        return Err(Error::invalid("eta must be positive"));
    }
    if !pi_t.is_strictly_positive() {
        return Err(Error::invalid(
            "mirror descent requires strictly positive rows",
        ));
    }
    let (s, a) = (pi_t.num_states(), pi_t.num_actions());
    if f.num_states() != s || f.num_actions() != a {
        return Err(Error::invalid("reward table shape mismatch"));
    }
    let mut rows = Vec::with_capacity(s);
    for x in 0..s {
        let logits: Vec<f64> = (0..a)
            .map(|y| pi_t.prob(x, y).ln() + f.get(x, y) / eta)
            .collect();
        let lse = log_sum_exp(&logits);
        rows.push(logits.iter().map(|l| (l - lse).exp()).collect());
    }
    TabularPolicy::new(rows)
}

/// Precomputed per-member statistics that make the enumerative critic
/// cheap inside the iteration loop: the dueling value only depends on
/// `π_t` through per-state inner products.
struct EnumCritic<'a> {
    class: &'a FiniteRewardClass,
    /// `(count_x / n) · f_m(x, y)` for the exact expectation term.
    weighted_rows: Vec<Vec<Vec<f64>>>,
    /// `(1/n) Σ_j [ww·f_m(x_j, y_j^w) + wl·f_m(x_j, y_j^l)]`.
    comparison_means: Vec<f64>,
    /// `λ·E_D(f_m)`, independent of the iteration.
    scaled_nll: Vec<f64>,
}

impl<'a> EnumCritic<'a> {
    fn new(
        class: &'a FiniteRewardClass,
        data: &PreferenceDataset,
        lambda: f64,
        comparison: Comparison,
        num_states: usize,
        num_actions: usize,
    ) -> Result<Self> {
        let n = data.len() as f64;
        let (ww, wl) = comparison.weights();
        let mut counts = vec![0.0; num_states];
        for r in &data.records {
            counts[r.x] += 1.0;
        }
        let mut weighted_rows = Vec::with_capacity(class.len());
        let mut comparison_means = Vec::with_capacity(class.len());
        let mut scaled_nll = Vec::with_capacity(class.len());
        for member in &class.members {
            let rows = (0..num_states)
                .map(|x| {
                    (0..num_actions)
                        .map(|y| counts[x] / n * member.get(x, y))
                        .collect()
                })
                .collect();
            weighted_rows.push(rows);
            let mean = data
                .records
                .iter()
                .map(|r| ww * member.get(r.x, r.y_w) + wl * member.get(r.x, r.y_l))
                .sum::<f64>()
                / n;
            comparison_means.push(mean);
            scaled_nll.push(if lambda > 0.0 {
                lambda * nll_ed(member, data)?
            } else {
                0.0
            });
        }
        Ok(EnumCritic {
            class,
            weighted_rows,
            comparison_means,
            scaled_nll,
        })
    }

    /// Argmin over members of the exact-expectation objective under `π_t`.
    fn fit_exact(&self, pi_t: &TabularPolicy) -> (RewardTable, f64) {
        let mut best = 0;
        let mut best_value = f64::INFINITY;
        for m in 0..self.class.len() {
            let mut expected = 0.0;
            for (x, row) in self.weighted_rows[m].iter().enumerate() {
                for (y, &w) in row.iter().enumerate() {
                    expected += w * pi_t.prob(x, y);
                }
            }
            let value = expected - self.comparison_means[m] + self.scaled_nll[m];
            if value < best_value {
                best_value = value;
                best = m;
            }
        }
        (self.class.members[best].clone(), best_value)
    }

    /// Argmin with the policy term evaluated on sampled actions.
    fn fit_sampled(&self, data: &PreferenceDataset, ys: &[ActionId]) -> (RewardTable, f64) {
        let n = data.len() as f64;
        let mut best = 0;
        let mut best_value = f64::INFINITY;
        for m in 0..self.class.len() {
            let member = &self.class.members[m];
            let sampled: f64 = data
                .records
                .iter()
                .zip(ys)
                .map(|(r, &y)| member.get(r.x, y))
                .sum::<f64>()
                / n;
            let value = sampled - self.comparison_means[m] + self.scaled_nll[m];
            if value < best_value {
                best_value = value;
                best = m;
            }
        }
        (self.class.members[best].clone(), best_value)
    }
}

fn sample_policy_actions(
    pi: &TabularPolicy,
    data: &PreferenceDataset,
    rng: &mut ChaCha8Rng,
) -> Vec<ActionId> {
    data.records
        .iter()
        .map(|r| categorical_from_uniform(pi.row(r.x), rng.random::<f64>()))
        .collect()
}

/// Theoretical self-play learner: alternate a critic fit with an
/// exponential-weights policy update for `T - 1` iterations and return the
/// uniform mixture over all `T` policies. Fully deterministic in exact
/// mode; sampled mode draws the policy term's actions from the seeded
/// stream.
pub fn spac_theoretical(
    data: &PreferenceDataset,
    pi_init: &TabularPolicy,
    space: &CriticSpace<'_>,
    config: &LearnerConfig,
) -> Result<RunRecord> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !pi_init.is_strictly_positive() {
        return Err(Error::invalid("initial policy must be strictly positive"));
    }
    let (s, a) = (pi_init.num_states(), pi_init.num_actions());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let enum_critic = match space {
        CriticSpace::Enumerate(class) => {
            if class.is_empty() {
                return Err(Error::invalid("reward class is empty"));
            }
            Some(EnumCritic::new(
                class,
                data,
                config.lambda,
                config.comparison,
                s,
                a,
            )?)
        }
        CriticSpace::Gradient { .. } => None,
    };

    // The exponential-weights recursion composes additively, so the run
    // accumulates logits `ln π_init + Σ_s f_s/η` and snapshots the softmax
    // each iteration. This is the same update as chained
    // `mirror_descent_step` calls but immune to underflow when `f/η` is
    // large and T long.
    let mut logits: Vec<Vec<f64>> = pi_init
        .rows()
        .iter()
        .map(|row| row.iter().map(|p| p.ln()).collect())
        .collect();
    let snapshot = |logits: &Vec<Vec<f64>>| -> Result<TabularPolicy> {
        let rows = logits
            .iter()
            .map(|row| {
                let lse = log_sum_exp(row);
                row.iter().map(|l| (l - lse).exp()).collect()
            })
            .collect();
        TabularPolicy::new(rows)
    };

    let mut iterations: Vec<IterationTrace> = Vec::with_capacity(config.iterations);
    let mut current = pi_init.clone();
    for _t in 1..config.iterations {
        let pi_t = current;
        let sampled = match config.ld_mode {
            LdMode::Exact => None,
            LdMode::Sampled => Some(sample_policy_actions(&pi_t, data, &mut rng)),
        };
        let (critic, objective) = match (&enum_critic, &sampled) {
            (Some(ec), None) => ec.fit_exact(&pi_t),
            (Some(ec), Some(ys)) => ec.fit_sampled(data, ys),
            (None, _) => {
                let term = match &sampled {
                    None => PolicyTerm::Exact,
                    Some(ys) => PolicyTerm::Sampled(ys),
                };
                critic_step(
                    data,
                    &pi_t,
                    space,
                    config.lambda,
                    term,
                    config.comparison,
                    &config.optimizer,
                )?
            }
        };
        for (x, row) in logits.iter_mut().enumerate() {
            for (y, l) in row.iter_mut().enumerate() {
                *l += critic.get(x, y) / config.eta;
            }
        }
        current = snapshot(&logits)?;
        iterations.push(IterationTrace {
            policy: pi_t,
            critic: Some(critic),
            critic_objective: Some(objective),
            policy_loss: None,
        });
    }
    iterations.push(IterationTrace {
        policy: current,
        critic: None,
        critic_objective: None,
        policy_loss: None,
    });
    let mixture =
        MixturePolicy::uniform_over(iterations.iter().map(|it| it.policy.clone()).collect())?;
    Ok(RunRecord {
        iterations,
        mixture,
        config: config.clone(),
    })
}

/// Result of one inner minimization over softmax logits.
#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub policy: SoftmaxPolicy,
    pub final_loss: f64,
    pub steps: usize,
    /// Accepted loss values, one per descent step (non-increasing).
    pub trace: Vec<f64>,
}

/// Plain full-batch gradient descent on logits with step halving whenever
/// a trial step would increase the loss. `iteration` only labels potential
/// divergence errors.
pub fn minimize_logits<F>(
    init: &SoftmaxPolicy,
    optimizer: &OptimizerConfig,
    iteration: usize,
    loss: F,
) -> Result<OptimizeOutcome>
where
    F: Fn(&SoftmaxPolicy) -> Result<LossValue>,
{
    let mut pi = init.clone();
    let mut current = loss(&pi)?;
    if !current.value.is_finite() {
        return Err(Error::Diverged {
            iteration,
            step: 0,
            loss: current.value,
        });
    }
    let mut trace = vec![current.value];
    let mut step = optimizer.step_size;
    let mut steps = 0;
    for k in 0..optimizer.max_steps {
        if current.grad_norm() <= optimizer.grad_tol {
            break;
        }
        loop {
            let mut candidate = pi.clone();
            for (row, grow) in candidate.logits_mut().iter_mut().zip(&current.grad) {
                for (v, g) in row.iter_mut().zip(grow) {
                    *v -= step * g;
                }
            }
            let cand = loss(&candidate)?;
            if !cand.value.is_finite() {
                return Err(Error::Diverged {
                    iteration,
                    step: k + 1,
                    loss: cand.value,
                });
            }
            if cand.value <= current.value {
                pi = candidate;
                current = cand;
                trace.push(current.value);
                steps = k + 1;
                break;
            }
            step *= 0.5;
            if step < 1e-18 {
                // No descent direction at representable step sizes.
                return Ok(OptimizeOutcome {
                    policy: pi,
                    final_loss: current.value,
                    steps,
                    trace,
                });
            }
        }
    }
    Ok(OptimizeOutcome {
        policy: pi,
        final_loss: current.value,
        steps,
        trace,
    })
}

/// Split records into `chunks` nearly equal contiguous parts.
fn chunk_dataset(data: &PreferenceDataset, chunks: usize) -> Vec<PreferenceDataset> {
    let n = data.len();
    (0..chunks)
        .map(|i| {
            let lo = i * n / chunks;
            let hi = (i + 1) * n / chunks;
            let records = data.records[lo..hi].to_vec();
            let mut meta = data.meta.clone();
            meta.n = records.len();
            PreferenceDataset { records, meta }
        })
        .collect()
}

/// Practical single-timescale self-play learner. Each iteration freezes
/// `π_t`, optionally samples one response per record from it, and
/// minimizes the (smoothed) self-play objective over logits starting from
/// `π_t`. The recorded critic is the implicit reward `η·log(π_{t+1}/π_t)`.
pub fn spac_practical(
    data: &PreferenceDataset,
    pi_init: &SoftmaxPolicy,
    config: &LearnerConfig,
    smoothed: bool,
) -> Result<RunRecord> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let chunks = if config.split_data && config.iterations > 1 {
        Some(chunk_dataset(data, config.iterations - 1))
    } else {
        None
    };

    let mut iterations: Vec<IterationTrace> = Vec::with_capacity(config.iterations);
    let mut pi = pi_init.clone();
    for t in 1..config.iterations {
        let slice = match &chunks {
            Some(c) => &c[t - 1],
            None => data,
        };
        if slice.is_empty() {
            return Err(Error::invalid(format!(
                "data split left iteration {t} without records"
            )));
        }
        let pi_t = pi.to_tabular();
        // The smoothed objective is always evaluated on sampled responses;
        // the raw objective samples only in sampled mode.
        let ys = if smoothed || config.ld_mode == LdMode::Sampled {
            Some(sample_policy_actions(&pi_t, slice, &mut rng))
        } else {
            None
        };
        let outcome = minimize_logits(&pi, &config.optimizer, t, |p| match (&ys, smoothed) {
            (Some(ys), true) => spac_objective_smoothed(
                p,
                &pi_t,
                slice,
                ys,
                config.comparison,
                config.eta,
                config.lambda,
            ),
            (Some(ys), false) => spac_objective(
                p,
                &pi_t,
                slice,
                ys,
                config.comparison,
                config.eta,
                config.lambda,
            ),
            (None, _) => spac_objective_exact(
                p,
                &pi_t,
                slice,
                config.comparison,
                config.eta,
                config.lambda,
            ),
        })?;
        let critic = implicit_reward(&outcome.policy, &pi_t, config.eta)?;
        iterations.push(IterationTrace {
            policy: pi_t,
            critic: Some(critic),
            critic_objective: Some(outcome.final_loss),
            policy_loss: Some(outcome.final_loss),
        });
        pi = outcome.policy;
    }
    iterations.push(IterationTrace {
        policy: pi.to_tabular(),
        critic: None,
        critic_objective: None,
        policy_loss: None,
    });
    let mixture =
        MixturePolicy::uniform_over(iterations.iter().map(|it| it.policy.clone()).collect())?;
    Ok(RunRecord {
        iterations,
        mixture,
        config: config.clone(),
    })
}

/// Direct preference optimization against a frozen reference: minimize the
/// preference-classification loss starting from the reference itself.
pub fn dpo_train(
    data: &PreferenceDataset,
    pi_ref: &TabularPolicy,
    alpha: f64,
    optimizer: &OptimizerConfig,
) -> Result<SoftmaxPolicy> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let init = SoftmaxPolicy::from_tabular(pi_ref)?;
    let outcome = minimize_logits(&init, optimizer, 0, |p| dpo_loss(p, pi_ref, data, alpha))?;
    Ok(outcome.policy)
}

/// Self-play fine-tuning: the λ = 0, chosen-comparison limit of the
/// practical learner, run on sampled responses.
pub fn spin_train(
    data: &PreferenceDataset,
    pi_init: &SoftmaxPolicy,
    eta: f64,
    iterations: usize,
    optimizer: &OptimizerConfig,
    seed: u64,
) -> Result<RunRecord> {
    let config = LearnerConfig {
        iterations,
        eta,
        lambda: 0.0,
        comparison: Comparison::Chosen,
        ld_mode: LdMode::Sampled,
        optimizer: *optimizer,
        seed,
        ..LearnerConfig::default()
    };
    spac_practical(data, pi_init, &config, false)
}

/// Enumerated maximum-likelihood reward fit (lowest index on ties).
fn enumerate_nll_argmin<'a>(
    data: &PreferenceDataset,
    class: &'a FiniteRewardClass,
) -> Result<&'a RewardTable> {
    if class.is_empty() {
        return Err(Error::invalid("reward class is empty"));
    }
    let mut best = 0;
    let mut best_value = f64::INFINITY;
    for (i, member) in class.members.iter().enumerate() {
        let v = nll_ed(member, data)?;
        if v < best_value {
            best_value = v;
            best = i;
        }
    }
    Ok(&class.members[best])
}

/// Two-step RLHF baseline: enumerate the MLE reward, then return the
/// KL-regularized argmax in closed form, `π(y|x) ∝ π_ref(y|x)·exp(r̂(x,y)/α)`.
pub fn rlhf_two_step(
    data: &PreferenceDataset,
    pi_ref: &TabularPolicy,
    class: &FiniteRewardClass,
    alpha: f64,
) -> Result<TabularPolicy> {
    if !(alpha > 0.0) {
        return Err(Error::invalid("alpha must be positive"));
    }
    let r_hat = enumerate_nll_argmin(data, class)?;
    mirror_descent_step(pi_ref, r_hat, alpha)
}

/// Greedy baseline: act on the MLE reward directly with a per-state
/// argmax. Provably unreliable under sparse coverage; kept as the
/// failure-mode comparison.
pub fn greedy_mle(data: &PreferenceDataset, class: &FiniteRewardClass) -> Result<TabularPolicy> {
    let r_hat = enumerate_nll_argmin(data, class)?;
    let actions: Vec<ActionId> = (0..r_hat.num_states())
        .map(|x| argmax_first(r_hat.row(x)))
        .collect();
    TabularPolicy::deterministic(r_hat.num_states(), r_hat.num_actions(), &actions)
}
