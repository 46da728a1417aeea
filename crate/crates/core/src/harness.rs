//! Experiment harness: instance generators, deterministic sweeps over
//! `(algorithm, n, T, λ, η, seed)` cells with incremental CSV output, and
//! log-log rate fitting.
//!
//! Determinism contract: every cell derives its dataset and training seeds
//! from the cell key with a stable hash, cells are enumerated in a fixed
//! order, and workers only parallelize the computation — rows are written
//! in enumeration order. Re-running a completed sweep is a no-op because
//! existing rows are skipped by key.

use std::collections::HashSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bandit::{optimal_policy, suboptimality, Bandit, RewardTable, SoftmaxPolicy, TabularPolicy};
use crate::data::{sample_dataset, DatasetMeta, PreferenceDataset};
use crate::diagnostics::{c_kl, concentrability, regret_check};
use crate::error::{Error, Result};
use crate::learners::{
    dpo_train, greedy_mle, rlhf_two_step, spac_practical, spac_theoretical, spin_train,
    CriticMode, CriticSpace, LearnerConfig, RunRecord,
};
use crate::math::median;
use crate::spaces::{kappa, make_class, ClassMode, FiniteRewardClass};

/// Derive a 64-bit seed from string parts with SHA-256; stable across
/// platforms and releases, unlike the standard hasher.
pub fn derive_seed(parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update(p.as_bytes());
        hasher.update([0x1f]);
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Random bandit: `ρ` from normalized uniforms, rewards uniform in
/// `[-R, R]`, drawn from a seeded ChaCha8 stream.
pub fn random_bandit(
    num_states: usize,
    num_actions: usize,
    r_bound: f64,
    seed: u64,
) -> Result<Bandit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..num_states).map(|_| rng.random::<f64>() + 1e-6).collect();
    let total: f64 = raw.iter().sum();
    let rho = raw.into_iter().map(|v| v / total).collect();
    let rows = (0..num_states)
        .map(|_| {
            (0..num_actions)
                .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * r_bound)
                .collect()
        })
        .collect();
    Bandit::new(rho, RewardTable::new(rows)?, r_bound)
}

/// Strictly positive random reference policy (normalized uniforms).
pub fn random_reference(num_states: usize, num_actions: usize, seed: u64) -> Result<TabularPolicy> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..num_states)
        .map(|_| {
            let raw: Vec<f64> = (0..num_actions).map(|_| rng.random::<f64>() + 1e-6).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / total).collect()
        })
        .collect();
    TabularPolicy::new(rows)
}

/// Ratio of the decoy penalty to `gap` in sparse-coverage instances: the
/// thinly covered decoys sit at `-DECOY_DEPTH·gap` so a learner fooled
/// into picking one pays `(DECOY_DEPTH + 1)·gap`.
pub const SPARSE_DECOY_DEPTH: f64 = 9.0;

/// Adversarial sparse-coverage instance. Action 1 is the well-covered
/// default everywhere (reward 0); all other actions receive only
/// `coverage_eps` reference mass. On state 0 the thin action 0 is the best
/// response by `gap`; on every other state the thin actions sit
/// `SPARSE_DECOY_DEPTH·gap` below the default (with a small per-state
/// depth jitter). At small sample sizes many thin `(state, action)` pairs
/// go completely unobserved, leaving the preference MLE underdetermined
/// exactly where acting greedily is expensive. Returns the bandit and the
/// reference policy together.
pub fn make_sparse_coverage_instance(
    num_states: usize,
    num_actions: usize,
    gap: f64,
    coverage_eps: f64,
    seed: u64,
) -> Result<(Bandit, TabularPolicy)> {
    if num_states == 0 || num_actions < 2 {
        return Err(Error::invalid("need at least one state and two actions"));
    }
    if !(gap > 0.0) {
        return Err(Error::invalid("gap must be positive"));
    }
    if !(coverage_eps > 0.0 && coverage_eps <= 1.0 / num_actions as f64) {
        return Err(Error::invalid(format!(
            "coverage_eps must lie in (0, 1/{num_actions}]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r_bound = (SPARSE_DECOY_DEPTH + 1.0) * gap;

    let mut reward_rows = Vec::with_capacity(num_states);
    let mut ref_rows = Vec::with_capacity(num_states);
    for x in 0..num_states {
        let mut row = vec![0.0; num_actions];
        for (y, value) in row.iter_mut().enumerate() {
            if y == 1 {
                continue;
            }
            if x == 0 && y == 0 {
                *value = gap;
            } else {
                *value = -SPARSE_DECOY_DEPTH * gap * (1.0 - 0.02 * rng.random::<f64>());
            }
        }
        reward_rows.push(row);
        let mut pref = vec![coverage_eps; num_actions];
        pref[1] = 1.0 - coverage_eps * (num_actions - 1) as f64;
        ref_rows.push(pref);
    }
    let rho = vec![1.0 / num_states as f64; num_states];
    let bandit = Bandit::new(rho, RewardTable::new(reward_rows)?, r_bound)?;
    let pi_ref = TabularPolicy::new(ref_rows)?;
    Ok((bandit, pi_ref))
}

/// Ordinary least squares on `(x, y)` pairs; returns `(slope, intercept,
/// r²)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::invalid("need at least two points to fit"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("degenerate fit: all x values equal"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let r2 = if syy == 0.0 {
        1.0
    } else {
        let ss_res: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| {
                let e = y - (intercept + slope * x);
                e * e
            })
            .sum();
        1.0 - ss_res / syy
    };
    Ok((slope, intercept, r2))
}

// ── Experiment configuration ─────────────────────────────────────────────

/// The algorithms the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algo {
    #[serde(rename = "spac")]
    Spac,
    #[serde(rename = "spac-theory")]
    SpacTheory,
    #[serde(rename = "dpo")]
    Dpo,
    #[serde(rename = "spin")]
    Spin,
    #[serde(rename = "rlhf2")]
    Rlhf2,
    #[serde(rename = "greedy")]
    Greedy,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Spac => "spac",
            Algo::SpacTheory => "spac-theory",
            Algo::Dpo => "dpo",
            Algo::Spin => "spin",
            Algo::Rlhf2 => "rlhf2",
            Algo::Greedy => "greedy",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "spac" => Ok(Algo::Spac),
            "spac-theory" => Ok(Algo::SpacTheory),
            "dpo" => Ok(Algo::Dpo),
            "spin" => Ok(Algo::Spin),
            "rlhf2" => Ok(Algo::Rlhf2),
            "greedy" => Ok(Algo::Greedy),
            other => Err(Error::invalid(format!("unknown algorithm '{other}'"))),
        }
    }

    pub const ALL: [Algo; 6] = [
        Algo::Spac,
        Algo::SpacTheory,
        Algo::Dpo,
        Algo::Spin,
        Algo::Rlhf2,
        Algo::Greedy,
    ];
}

/// How the bandit is generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BanditMode {
    #[default]
    Random,
    SparseCoverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditSpec {
    pub num_states: usize,
    pub num_actions: usize,
    #[serde(rename = "R", default = "default_r_bound")]
    pub r_bound: f64,
    #[serde(default)]
    pub mode: BanditMode,
    /// Reward advantage of the thin action (sparse-coverage mode).
    #[serde(default = "default_gap")]
    pub gap: f64,
    /// Reference mass on thin actions (sparse-coverage mode).
    #[serde(default = "default_coverage_eps")]
    pub coverage_eps: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_r_bound() -> f64 {
    2.0
}
fn default_gap() -> f64 {
    1.0
}
fn default_coverage_eps() -> f64 {
    0.01
}

/// Where the reference policy comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ReferenceSpec {
    #[default]
    Uniform,
    Random {
        seed: u64,
    },
    /// Use the policy produced by the instance generator (sparse-coverage
    /// mode only).
    Instance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    #[serde(default = "default_class_size")]
    pub size: usize,
    #[serde(default = "default_class_mode")]
    pub mode: ClassMode,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_class_size() -> usize {
    32
}
fn default_class_mode() -> ClassMode {
    ClassMode::PerturbRStar
}
fn default_amplitude() -> f64 {
    0.5
}

impl Default for ClassSpec {
    fn default() -> Self {
        ClassSpec {
            size: default_class_size(),
            mode: default_class_mode(),
            amplitude: default_amplitude(),
            seed: 0,
        }
    }
}

/// Cartesian sweep axes; a cell is one point of
/// `algos × n × T × λ × η`, run once per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAxes {
    pub algos: Vec<Algo>,
    pub n: Vec<usize>,
    #[serde(rename = "T")]
    pub t: Vec<usize>,
    pub lambda: Vec<f64>,
    pub eta: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl SweepAxes {
    fn validate(&self) -> Result<()> {
        if self.algos.is_empty()
            || self.n.is_empty()
            || self.t.is_empty()
            || self.lambda.is_empty()
            || self.eta.is_empty()
            || self.seeds.is_empty()
        {
            return Err(Error::invalid("every sweep axis must be non-empty"));
        }
        Ok(())
    }
}

/// A complete experiment: instance, reward class, learner defaults, and
/// the sweep grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub bandit: BanditSpec,
    #[serde(default)]
    pub reference: ReferenceSpec,
    #[serde(default)]
    pub class: ClassSpec,
    #[serde(default)]
    pub learner: LearnerConfig,
    pub sweep: SweepAxes,
    /// Interpret the λ axis as a coefficient on √n (the theory's scaling).
    #[serde(default)]
    pub scale_lambda_with_sqrt_n: bool,
    /// Interpret the η axis as a coefficient on √T (the theory's scaling).
    #[serde(default)]
    pub scale_eta_with_sqrt_t: bool,
    /// Run the practical learner on the smoothed objective.
    #[serde(default)]
    pub smoothed: bool,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
}

fn default_out_dir() -> String {
    "out".to_string()
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.sweep.validate()?;
        if self.reference == ReferenceSpec::Instance
            && self.bandit.mode != BanditMode::SparseCoverage
        {
            return Err(Error::invalid(
                "reference kind 'instance' requires the sparse_coverage bandit mode",
            ));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding, embedded in outputs.
    pub fn sha256(&self) -> String {
        crate::bandit::sha256_json(self)
    }

    /// Build the bandit and reference policy this config describes.
    pub fn build_instance(&self) -> Result<(Bandit, TabularPolicy)> {
        let spec = &self.bandit;
        let (bandit, instance_ref) = match spec.mode {
            BanditMode::Random => (
                random_bandit(spec.num_states, spec.num_actions, spec.r_bound, spec.seed)?,
                None,
            ),
            BanditMode::SparseCoverage => {
                let (b, r) = make_sparse_coverage_instance(
                    spec.num_states,
                    spec.num_actions,
                    spec.gap,
                    spec.coverage_eps,
                    spec.seed,
                )?;
                (b, Some(r))
            }
        };
        let pi_ref = match self.reference {
            ReferenceSpec::Uniform => {
                TabularPolicy::uniform(bandit.num_states, bandit.num_actions)
            }
            ReferenceSpec::Random { seed } => {
                random_reference(bandit.num_states, bandit.num_actions, seed)?
            }
            ReferenceSpec::Instance => {
                instance_ref.ok_or_else(|| Error::invalid("instance reference unavailable"))?
            }
        };
        Ok((bandit, pi_ref))
    }

    /// Build the finite reward class for the instance.
    pub fn build_class(&self, bandit: &Bandit) -> Result<FiniteRewardClass> {
        make_class(
            bandit,
            self.class.size,
            self.class.mode,
            self.class.amplitude,
            self.class.seed,
        )
    }
}

// ── Single runs ──────────────────────────────────────────────────────────

/// One sweep cell before seeding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub algo: Algo,
    pub n: usize,
    pub t: usize,
    pub lambda: f64,
    pub eta: f64,
}

/// Everything produced by one training run, bundled so the `verify`
/// command can re-derive every diagnostic offline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainArtifact {
    pub algo: Algo,
    pub config_sha: String,
    pub bandit: Bandit,
    pub pi_ref: TabularPolicy,
    pub pi_init: TabularPolicy,
    pub class: FiniteRewardClass,
    pub learner: LearnerConfig,
    pub dataset_meta: DatasetMeta,
    /// Iteration trace for the iterative learners.
    pub run: Option<RunRecord>,
    /// Final policy for the single-policy learners.
    pub final_policy: Option<TabularPolicy>,
    pub subopt: f64,
}

/// Run one `(algo, cell, seed)` in isolation. The dataset and training
/// seeds derive from the cell key, so a sweep row can be reproduced
/// exactly by calling this with the same arguments.
pub fn run_single(
    config: &ExperimentConfig,
    cell: Cell,
    seed: u64,
) -> Result<TrainArtifact> {
    let (bandit, pi_ref) = config.build_instance()?;
    let class = config.build_class(&bandit)?;
    let key = cell_key(config, cell, seed);
    let data_seed = derive_seed(&[&key, "data"]);
    let train_seed = derive_seed(&[&key, "train"]);

    let effective_lambda = if config.scale_lambda_with_sqrt_n {
        cell.lambda * (cell.n as f64).sqrt()
    } else {
        cell.lambda
    };
    let effective_eta = if config.scale_eta_with_sqrt_t {
        cell.eta * (cell.t as f64).sqrt()
    } else {
        cell.eta
    };

    let data = sample_dataset(&bandit, &pi_ref, cell.n, data_seed)?;
    let learner = LearnerConfig {
        iterations: cell.t,
        eta: effective_eta,
        lambda: effective_lambda,
        seed: train_seed,
        ..config.learner.clone()
    };
    let pi_init = pi_ref.clone();

    let mut run = None;
    let mut final_policy = None;
    let subopt = match cell.algo {
        Algo::SpacTheory => {
            let space = match learner.critic_mode {
                CriticMode::Enumerate => CriticSpace::Enumerate(&class),
                CriticMode::Gradient => CriticSpace::Gradient {
                    r_bound: bandit.r_bound,
                },
            };
            let record = spac_theoretical(&data, &pi_init, &space, &learner)?;
            let s = suboptimality(&bandit, &record.mixture)?;
            run = Some(record);
            s
        }
        Algo::Spac => {
            let init = SoftmaxPolicy::from_tabular(&pi_init)?;
            let record = spac_practical(&data, &init, &learner, config.smoothed)?;
            let s = suboptimality(&bandit, &record.mixture)?;
            run = Some(record);
            s
        }
        Algo::Spin => {
            let init = SoftmaxPolicy::from_tabular(&pi_init)?;
            let record = spin_train(
                &data,
                &init,
                learner.eta,
                learner.iterations,
                &learner.optimizer,
                learner.seed,
            )?;
            let s = suboptimality(&bandit, &record.mixture)?;
            run = Some(record);
            s
        }
        Algo::Dpo => {
            let pi = dpo_train(&data, &pi_ref, effective_eta, &learner.optimizer)?;
            let tab = pi.to_tabular();
            let s = suboptimality(&bandit, &tab)?;
            final_policy = Some(tab);
            s
        }
        Algo::Rlhf2 => {
            let pi = rlhf_two_step(&data, &pi_ref, &class, effective_eta)?;
            let s = suboptimality(&bandit, &pi)?;
            final_policy = Some(pi);
            s
        }
        Algo::Greedy => {
            let pi = greedy_mle(&data, &class)?;
            let s = suboptimality(&bandit, &pi)?;
            final_policy = Some(pi);
            s
        }
    };

    Ok(TrainArtifact {
        algo: cell.algo,
        config_sha: config.sha256(),
        bandit,
        pi_ref,
        pi_init,
        class,
        learner,
        dataset_meta: data.meta,
        run,
        final_policy,
        subopt,
    })
}

fn cell_key(config: &ExperimentConfig, cell: Cell, seed: u64) -> String {
    format!(
        "{}|{}|{}|{}|{}|{}|{}",
        config.name,
        cell.algo.name(),
        cell.n,
        cell.t,
        cell.lambda,
        cell.eta,
        seed
    )
}

// ── Sweeps ───────────────────────────────────────────────────────────────

/// One CSV row of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub algo: String,
    pub n: usize,
    pub t: usize,
    pub lambda: f64,
    pub eta: f64,
    pub seed: u64,
    pub subopt: f64,
    pub walltime_ms: u64,
    pub concentrability: f64,
    pub c_kl: f64,
    pub kappa: f64,
    pub regret_lhs: f64,
    pub regret_rhs: f64,
    pub status: String,
}

pub const SWEEP_CSV_HEADER: &str =
    "algo,n,T,lambda,eta,seed,subopt,walltime_ms,C,c_kl,kappa,regret_lhs,regret_rhs,status";

impl SweepRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.algo,
            self.n,
            self.t,
            self.lambda,
            self.eta,
            self.seed,
            self.subopt,
            self.walltime_ms,
            self.concentrability,
            self.c_kl,
            self.kappa,
            self.regret_lhs,
            self.regret_rhs,
            self.status
        )
    }

    pub fn from_csv_line(line: &str, line_no: usize) -> Result<Self> {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 14 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 14 fields, found {}", parts.len()),
            });
        }
        let parse_f = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("bad {what}: '{s}'"),
            })
        };
        let parse_u = |s: &str, what: &str| -> Result<u64> {
            s.parse::<u64>().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("bad {what}: '{s}'"),
            })
        };
        Ok(SweepRow {
            algo: parts[0].to_string(),
            n: parse_u(parts[1], "n")? as usize,
            t: parse_u(parts[2], "T")? as usize,
            lambda: parse_f(parts[3], "lambda")?,
            eta: parse_f(parts[4], "eta")?,
            seed: parse_u(parts[5], "seed")?,
            subopt: parse_f(parts[6], "subopt")?,
            walltime_ms: parse_u(parts[7], "walltime_ms")?,
            concentrability: parse_f(parts[8], "C")?,
            c_kl: parse_f(parts[9], "c_kl")?,
            kappa: parse_f(parts[10], "kappa")?,
            regret_lhs: parse_f(parts[11], "regret_lhs")?,
            regret_rhs: parse_f(parts[12], "regret_rhs")?,
            status: parts[13].to_string(),
        })
    }

    /// Resume key: one row per `(algo, cell, seed)`.
    fn key(&self) -> String {
        format!(
            "{}|{}|{}|{}|{}|{}",
            self.algo, self.n, self.t, self.lambda, self.eta, self.seed
        )
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// All rows of a sweep, in cell-enumeration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| !r.is_ok()).count()
    }
}

/// Path of the sweep CSV for a config.
pub fn sweep_csv_path(config: &ExperimentConfig) -> PathBuf {
    Path::new(&config.out_dir).join(format!("{}.csv", config.name))
}

pub fn read_sweep_csv(path: &Path) -> Result<SweepResult> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != SWEEP_CSV_HEADER {
                return Err(Error::Parse {
                    line: 1,
                    message: "unexpected CSV header".to_string(),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        rows.push(SweepRow::from_csv_line(line, i + 1)?);
    }
    Ok(SweepResult { rows })
}

fn run_cell_row(config: &ExperimentConfig, cell: Cell, seed: u64) -> SweepRow {
    let started = Instant::now();
    let mut row = SweepRow {
        algo: cell.algo.name().to_string(),
        n: cell.n,
        t: cell.t,
        lambda: cell.lambda,
        eta: cell.eta,
        seed,
        subopt: f64::NAN,
        walltime_ms: 0,
        concentrability: f64::NAN,
        c_kl: f64::NAN,
        kappa: f64::NAN,
        regret_lhs: f64::NAN,
        regret_rhs: f64::NAN,
        status: "ok".to_string(),
    };
    match run_single(config, cell, seed) {
        Ok(artifact) => {
            row.subopt = artifact.subopt;
            let pi_star = optimal_policy(&artifact.bandit);
            row.concentrability =
                concentrability(&artifact.bandit, &artifact.class, &pi_star, &artifact.pi_ref);
            row.c_kl = c_kl(&artifact.bandit.rho, &pi_star, &artifact.pi_init);
            row.kappa = kappa(artifact.bandit.r_bound).unwrap_or(f64::NAN);
            if let Some(run) = &artifact.run {
                if run.iterations.iter().any(|it| it.critic.is_some()) {
                    let check = regret_check(
                        run,
                        &artifact.bandit.rho,
                        &pi_star,
                        &artifact.pi_init,
                        artifact.learner.eta,
                        artifact.bandit.r_bound,
                    );
                    row.regret_lhs = check.lhs;
                    row.regret_rhs = check.rhs;
                }
            }
        }
        Err(e) => {
            // A comma would break the fixed 14-field schema.
            row.status = format!("error: {e}").replace(',', ";");
        }
    }
    row.walltime_ms = started.elapsed().as_millis() as u64;
    row
}

/// Enumerate the sweep grid in the fixed order
/// algo → n → T → λ → η → seed.
pub fn enumerate_cells(axes: &SweepAxes) -> Vec<(Cell, u64)> {
    let mut cells = Vec::new();
    for &algo in &axes.algos {
        for &n in &axes.n {
            for &t in &axes.t {
                for &lambda in &axes.lambda {
                    for &eta in &axes.eta {
                        for &seed in &axes.seeds {
                            cells.push((
                                Cell {
                                    algo,
                                    n,
                                    t,
                                    lambda,
                                    eta,
                                },
                                seed,
                            ));
                        }
                    }
                }
            }
        }
    }
    cells
}

/// Execute a sweep: run every missing `(cell, seed)`, appending rows to
/// the CSV in enumeration order as cell groups complete. Individual run
/// failures become rows with an error status; they never abort the sweep.
pub fn run_sweep(config: &ExperimentConfig, jobs: usize) -> Result<SweepResult> {
    config.validate()?;
    fs::create_dir_all(&config.out_dir)?;
    let csv_path = sweep_csv_path(config);

    let existing = if csv_path.exists() {
        read_sweep_csv(&csv_path)?.rows
    } else {
        fs::write(&csv_path, format!("{SWEEP_CSV_HEADER}\n"))?;
        let meta = serde_json::json!({
            "name": config.name,
            "config_sha": config.sha256(),
        });
        fs::write(
            csv_path.with_extension("meta.json"),
            serde_json::to_string_pretty(&meta)?,
        )?;
        Vec::new()
    };
    let done: HashSet<String> = existing.iter().map(|r| r.key()).collect();

    let pending: Vec<(Cell, u64)> = enumerate_cells(&config.sweep)
        .into_iter()
        .filter(|(cell, seed)| {
            let probe = SweepRow {
                algo: cell.algo.name().to_string(),
                n: cell.n,
                t: cell.t,
                lambda: cell.lambda,
                eta: cell.eta,
                seed: *seed,
                subopt: 0.0,
                walltime_ms: 0,
                concentrability: 0.0,
                c_kl: 0.0,
                kappa: 0.0,
                regret_lhs: 0.0,
                regret_rhs: 0.0,
                status: String::new(),
            };
            !done.contains(&probe.key())
        })
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;

    let mut new_rows = Vec::with_capacity(pending.len());
    let group_size = config.sweep.seeds.len().max(1);
    let mut file = fs::OpenOptions::new().append(true).open(&csv_path)?;
    for group in pending.chunks(group_size) {
        let rows: Vec<SweepRow> = pool.install(|| {
            group
                .par_iter()
                .map(|(cell, seed)| run_cell_row(config, *cell, *seed))
                .collect()
        });
        for row in &rows {
            writeln!(file, "{}", row.to_csv_line())?;
        }
        file.flush()?;
        new_rows.extend(rows);
    }

    let mut rows = existing;
    rows.extend(new_rows);
    Ok(SweepResult { rows })
}

// ── Rate fitting ─────────────────────────────────────────────────────────

/// Which sweep axis a rate is fitted against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateAxis {
    N,
    T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least-squares fit of `ln(median subopt)` against `ln(axis)` over the
/// successful rows. Requires at least three distinct axis values and
/// strictly positive medians.
pub fn fit_rate(rows: &[SweepRow], axis: RateAxis) -> Result<RateFit> {
    let mut by_axis: Vec<(usize, Vec<f64>)> = Vec::new();
    for row in rows.iter().filter(|r| r.is_ok()) {
        let key = match axis {
            RateAxis::N => row.n,
            RateAxis::T => row.t,
        };
        match by_axis.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(row.subopt),
            None => by_axis.push((key, vec![row.subopt])),
        }
    }
    if by_axis.len() < 3 {
        return Err(Error::invalid(
            "rate fit needs at least three distinct axis values",
        ));
    }
    by_axis.sort_by_key(|(k, _)| *k);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (k, subopts) in &by_axis {
        let med = median(subopts).expect("group is non-empty");
        if med <= 0.0 {
            return Err(Error::invalid(format!(
                "median suboptimality at axis value {k} is not positive"
            )));
        }
        xs.push((*k as f64).ln());
        ys.push(med.ln());
    }
    let (slope, intercept, r2) = linear_fit(&xs, &ys)?;
    Ok(RateFit {
        slope,
        intercept,
        r2,
    })
}

/// Per-iteration trace CSV for one run: iteration, suboptimality of the
/// iterate, critic objective, policy loss.
pub fn write_run_trace_csv(bandit: &Bandit, run: &RunRecord, path: &Path) -> Result<()> {
    let mut out = String::from("t,subopt,critic_objective,policy_loss\n");
    for (t, it) in run.iterations.iter().enumerate() {
        let s = suboptimality(bandit, &it.policy)?;
        out.push_str(&format!(
            "{},{},{},{}\n",
            t + 1,
            s,
            it.critic_objective.unwrap_or(f64::NAN),
            it.policy_loss.unwrap_or(f64::NAN)
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Convenience wrapper: sample a dataset whose seed derives from a label.
pub fn sample_labeled_dataset(
    bandit: &Bandit,
    pi_ref: &TabularPolicy,
    n: usize,
    label: &str,
    seed: u64,
) -> Result<PreferenceDataset> {
    sample_dataset(
        bandit,
        pi_ref,
        n,
        derive_seed(&[label, &n.to_string(), &seed.to_string()]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::density_ratio;

    #[test]
    fn derive_seed_is_stable_and_distinct() {
        let a = derive_seed(&["x", "1"]);
        let b = derive_seed(&["x", "1"]);
        let c = derive_seed(&["x1", ""]);
        assert_eq!(a, b);
        assert_ne!(a, c);
        // Separator byte keeps part boundaries unambiguous.
        assert_ne!(derive_seed(&["ab", "c"]), derive_seed(&["a", "bc"]));
    }

    #[test]
    fn random_bandit_is_valid_and_deterministic() {
        let b1 = random_bandit(5, 6, 2.0, 9).unwrap();
        let b2 = random_bandit(5, 6, 2.0, 9).unwrap();
        assert_eq!(b1, b2);
        assert!(b1.r_star.max_abs() <= 2.0);
        assert!((b1.rho.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn sparse_instance_boundary_is_uniform() {
        let (_, pi_ref) = make_sparse_coverage_instance(1, 2, 1.0, 0.5, 0).unwrap();
        assert_eq!(pi_ref.row(0), &[0.5, 0.5]);
    }

    #[test]
    fn sparse_instance_density_ratio_bound() {
        let (b, pi_ref) = make_sparse_coverage_instance(1, 6, 1.0, 0.01, 0).unwrap();
        let pi_star = optimal_policy(&b);
        assert!(density_ratio(&pi_star, &pi_ref) >= 100.0 - 1e-9);
        // The engineered state prefers action 0 by exactly `gap`.
        assert_eq!(pi_star.row(0)[0], 1.0);
        assert!((b.r_star.get(0, 0) - b.r_star.get(0, 1) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn sparse_instance_rejects_bad_eps() {
        assert!(make_sparse_coverage_instance(1, 4, 1.0, 0.3, 0).is_err());
        assert!(make_sparse_coverage_instance(1, 4, 1.0, 0.0, 0).is_err());
        assert!(make_sparse_coverage_instance(1, 4, -1.0, 0.1, 0).is_err());
    }

    #[test]
    fn linear_fit_recovers_planted_line() {
        let xs: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 - 0.5 * x).collect();
        let (slope, intercept, r2) = linear_fit(&xs, &ys).unwrap();
        assert!((slope + 0.5).abs() <= 1e-12);
        assert!((intercept - 3.0).abs() <= 1e-12);
        assert!((r2 - 1.0).abs() <= 1e-12);
    }

    fn synthetic_rows(subopts: &[(usize, f64)]) -> Vec<SweepRow> {
        subopts
            .iter()
            .map(|&(n, s)| SweepRow {
                algo: "spac-theory".into(),
                n,
                t: 10,
                lambda: 1.0,
                eta: 0.1,
                seed: 0,
                subopt: s,
                walltime_ms: 1,
                concentrability: 1.0,
                c_kl: 0.5,
                kappa: 4.0,
                regret_lhs: 0.0,
                regret_rhs: 1.0,
                status: "ok".into(),
            })
            .collect()
    }

    #[test]
    fn fit_rate_planted_inverse_sqrt() {
        let rows = synthetic_rows(&[
            (100, 2.0 / 10.0),
            (400, 2.0 / 20.0),
            (1600, 2.0 / 40.0),
            (6400, 2.0 / 80.0),
        ]);
        let fit = fit_rate(&rows, RateAxis::N).unwrap();
        assert!((fit.slope + 0.5).abs() <= 1e-9);
        assert!((fit.r2 - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn fit_rate_constant_rows_slope_zero() {
        let rows = synthetic_rows(&[(100, 0.7), (400, 0.7), (1600, 0.7)]);
        let fit = fit_rate(&rows, RateAxis::N).unwrap();
        assert!(fit.slope.abs() <= 1e-12);
    }

    #[test]
    fn fit_rate_rejects_nonpositive_and_short() {
        let rows = synthetic_rows(&[(100, 0.5), (400, 0.0), (1600, 0.1)]);
        assert!(fit_rate(&rows, RateAxis::N).is_err());
        let rows = synthetic_rows(&[(100, 0.5), (400, 0.2)]);
        assert!(fit_rate(&rows, RateAxis::N).is_err());
    }

    #[test]
    fn csv_round_trip_including_inf_and_nan() {
        let mut row = synthetic_rows(&[(100, 0.5)]).remove(0);
        row.concentrability = f64::INFINITY;
        row.regret_lhs = f64::NAN;
        let line = row.to_csv_line();
        assert!(line.contains(",inf,"));
        assert!(line.contains(",NaN,"));
        let back = SweepRow::from_csv_line(&line, 2).unwrap();
        assert!(back.concentrability.is_infinite());
        assert!(back.regret_lhs.is_nan());
        assert_eq!(back.key(), row.key());
    }

    fn tiny_config(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            name: "tiny".into(),
            bandit: BanditSpec {
                num_states: 2,
                num_actions: 3,
                r_bound: 1.5,
                mode: BanditMode::Random,
                gap: 1.0,
                coverage_eps: 0.01,
                seed: 3,
            },
            reference: ReferenceSpec::Uniform,
            class: ClassSpec {
                size: 8,
                amplitude: 0.5,
                ..ClassSpec::default()
            },
            learner: LearnerConfig::default(),
            sweep: SweepAxes {
                algos: vec![Algo::SpacTheory, Algo::Greedy],
                n: vec![64],
                t: vec![4],
                lambda: vec![1.0],
                eta: vec![0.2],
                seeds: vec![1, 2],
            },
            scale_lambda_with_sqrt_n: false,
            scale_eta_with_sqrt_t: false,
            smoothed: false,
            out_dir: dir.to_string_lossy().into_owned(),
        }
    }

    #[test]
    fn sweep_single_cell_counts_and_resume_idempotence() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config(dir.path());
        config.sweep.algos = vec![Algo::SpacTheory];
        config.sweep.seeds = vec![7];
        let result = run_sweep(&config, 2).unwrap();
        assert_eq!(result.rows.len(), 1);
        assert!(result.rows[0].is_ok());

        let csv = fs::read(sweep_csv_path(&config)).unwrap();
        let again = run_sweep(&config, 2).unwrap();
        assert_eq!(again.rows.len(), 1);
        assert_eq!(csv, fs::read(sweep_csv_path(&config)).unwrap());
    }

    #[test]
    fn sweep_rows_deterministic_up_to_walltime() {
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let c1 = tiny_config(dir1.path());
        let c2 = ExperimentConfig {
            out_dir: dir2.path().to_string_lossy().into_owned(),
            ..c1.clone()
        };
        let r1 = run_sweep(&c1, 4).unwrap();
        let r2 = run_sweep(&c2, 1).unwrap();
        assert_eq!(r1.rows.len(), r2.rows.len());
        for (a, b) in r1.rows.iter().zip(&r2.rows) {
            let mut a = a.clone();
            let mut b = b.clone();
            a.walltime_ms = 0;
            b.walltime_ms = 0;
            assert_eq!(a.to_csv_line(), b.to_csv_line());
        }
    }

    #[test]
    fn sweep_row_reproducible_in_isolation() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config(dir.path());
        let result = run_sweep(&config, 2).unwrap();
        for row in result.rows.iter().filter(|r| r.is_ok()) {
            let cell = Cell {
                algo: Algo::parse(&row.algo).unwrap(),
                n: row.n,
                t: row.t,
                lambda: row.lambda,
                eta: row.eta,
            };
            let artifact = run_single(&config, cell, row.seed).unwrap();
            assert_eq!(artifact.subopt, row.subopt, "row {}", row.key());
        }
    }

    #[test]
    fn config_json_round_trip_with_defaults() {
        let text = r#"{
            "name": "demo",
            "bandit": {"num_states": 3, "num_actions": 4},
            "sweep": {
                "algos": ["spac-theory", "dpo"],
                "n": [128], "T": [5], "lambda": [1.0], "eta": [0.1],
                "seeds": [0]
            }
        }"#;
        let config = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(config.bandit.r_bound, 2.0);
        assert_eq!(config.class.size, 32);
        assert_eq!(config.learner.eta, 0.1);
        assert_eq!(config.learner.lambda, 1.0);
        let back = ExperimentConfig::from_json(&serde_json::to_string(&config).unwrap()).unwrap();
        assert_eq!(config, back);
    }

    #[test]
    fn config_rejects_empty_axes_and_bad_reference() {
        let mut config = tiny_config(Path::new("out"));
        config.sweep.n.clear();
        assert!(config.validate().is_err());
        let mut config = tiny_config(Path::new("out"));
        config.reference = ReferenceSpec::Instance;
        assert!(config.validate().is_err());
    }
}
