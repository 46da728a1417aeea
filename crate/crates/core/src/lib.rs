//! Desk-scale laboratory for offline preference optimization on finite
//! contextual bandits.
//!
//! The crate builds small, fully enumerable alignment problems and solves
//! them with several learners so that every theoretical quantity — value
//! functions, suboptimality, coverage constants, regret sums, concentration
//! rates — can be computed exactly rather than estimated:
//!
//! - [`bandit`] — the ground-truth environment `(ρ, r*, R)` and policy types.
//! - [`data`] — Bradley-Terry preference probabilities and offline dataset
//!   sampling from a reference policy, with JSONL persistence.
//! - [`objectives`] — every scalar loss used by the learners, each paired
//!   with its analytic gradient over softmax logits or reward tables.
//! - [`spaces`] — finite explicit reward classes for the enumerative critic,
//!   plus the sigmoid curvature constant `kappa`.
//! - [`learners`] — SPAC in its theoretical (critic + exponential weights)
//!   and practical (single-timescale self-play) forms, next to DPO, SPIN,
//!   two-step RLHF and greedy MLE baselines.
//! - [`diagnostics`] — exact computation of concentrability, KL constants,
//!   the four-term suboptimality decomposition and the mirror-descent
//!   regret bound, checked at runtime on recorded training traces.
//! - [`harness`] — instance generators (including the sparse-coverage
//!   adversarial family), deterministic sweeps with CSV output, and
//!   log-log rate fitting.
//!
//! Everything is deterministic given the configured seeds; independent runs
//! are safe to execute in parallel because all domain types are immutable
//! after construction.

pub mod bandit;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod learners;
pub mod math;
pub mod objectives;
pub mod spaces;

pub use bandit::{Bandit, MixturePolicy, Policy, RewardTable, SoftmaxPolicy, TabularPolicy};
pub use data::{PreferenceDataset, PreferenceRecord};
pub use error::{Error, Result};

/// Prompt (state) index into a bandit's state space.
pub type StateId = usize;
/// Response (action) index into a bandit's action space.
pub type ActionId = usize;
