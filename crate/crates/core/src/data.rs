//! Bradley-Terry preference probabilities, offline dataset sampling from a
//! reference policy, and JSONL persistence.
//!
//! Sampling is stream-deterministic: each record consumes exactly four
//! uniforms from a seeded ChaCha8 generator (prompt, first response, second
//! response, label), so a dataset can be reproduced — or re-derived draw by
//! draw — from its recorded seed.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::{Bandit, Policy, RewardTable, TabularPolicy};
use crate::error::{Error, Result};
use crate::math::{categorical_from_uniform, sigmoid};
use crate::{ActionId, StateId};

/// Name recorded in dataset metadata for the sampling generator.
pub const RNG_NAME: &str = "chacha8";

/// One labeled comparison: prompt `x`, preferred response `y_w`, rejected
/// response `y_l`. Identical responses are allowed; the label is then a
/// fair coin because the preference probability is exactly 1/2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub x: StateId,
    pub y_w: ActionId,
    pub y_l: ActionId,
}

/// Provenance metadata stored in the sidecar file next to the records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n: usize,
    pub seed: u64,
    pub bandit_sha: String,
    pub ref_sha: String,
    pub rng: String,
}

/// An offline preference dataset plus the metadata needed to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceDataset {
    pub records: Vec<PreferenceRecord>,
    pub meta: DatasetMeta,
}

impl PreferenceDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Check record indices against a bandit and the stored hashes against
    /// the claimed source objects.
    pub fn verify_against(&self, bandit: &Bandit, pi_ref: &TabularPolicy) -> Result<()> {
        if self.meta.bandit_sha != bandit.sha256() {
            return Err(Error::Integrity(
                "dataset bandit hash does not match the given bandit".into(),
            ));
        }
        if self.meta.ref_sha != pi_ref.sha256() {
            return Err(Error::Integrity(
                "dataset reference-policy hash does not match the given policy".into(),
            ));
        }
        if self.records.len() != self.meta.n {
            return Err(Error::Integrity(format!(
                "meta.n = {} but {} records present",
                self.meta.n,
                self.records.len()
            )));
        }
        for r in &self.records {
            bandit.check_state(r.x)?;
            bandit.check_action(r.y_w)?;
            bandit.check_action(r.y_l)?;
        }
        Ok(())
    }
}

/// Preference probability `P(y1 ≻ y2 | x) = σ(f(x,y1) − f(x,y2))` under a
/// reward table `f`. Always strictly inside `(0, 1)` for desk-scale gaps.
pub fn bt_prob(f: &RewardTable, x: StateId, y1: ActionId, y2: ActionId) -> f64 {
    sigmoid(f.get(x, y1) - f.get(x, y2))
}

/// Draw `n` i.i.d. preference records: `x ∼ ρ`, `(y1, y2)` i.i.d. from
/// `π_ref(·|x)`, winner chosen `Bernoulli(bt_prob(r*, x, y1, y2))`.
pub fn sample_dataset(
    bandit: &Bandit,
    pi_ref: &TabularPolicy,
    n: usize,
    seed: u64,
) -> Result<PreferenceDataset> {
    if pi_ref.num_states() != bandit.num_states || pi_ref.num_actions() != bandit.num_actions {
        return Err(Error::invalid("reference policy shape mismatch"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let x = categorical_from_uniform(&bandit.rho, rng.random::<f64>());
        let row = pi_ref.row(x);
        let y1 = categorical_from_uniform(row, rng.random::<f64>());
        let y2 = categorical_from_uniform(row, rng.random::<f64>());
        let p_first_wins = bt_prob(&bandit.r_star, x, y1, y2);
        let (y_w, y_l) = if rng.random::<f64>() < p_first_wins {
            (y1, y2)
        } else {
            (y2, y1)
        };
        records.push(PreferenceRecord { x, y_w, y_l });
    }
    Ok(PreferenceDataset {
        records,
        meta: DatasetMeta {
            n,
            seed,
            bandit_sha: bandit.sha256(),
            ref_sha: pi_ref.sha256(),
            rng: RNG_NAME.to_string(),
        },
    })
}

/// Sidecar path for a records file: `data.jsonl` → `data.meta.json`.
pub fn meta_path(records_path: &Path) -> PathBuf {
    let mut p = records_path.to_path_buf();
    p.set_extension("meta.json");
    p
}

/// Write records as one JSON object per line plus the metadata sidecar.
pub fn write_jsonl(dataset: &PreferenceDataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    for r in &dataset.records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    fs::write(meta_path(path), serde_json::to_string_pretty(&dataset.meta)?)?;
    Ok(())
}

/// Read a dataset written by [`write_jsonl`]. Malformed lines are reported
/// with their 1-based line number; a record count differing from the
/// sidecar's `n` is an integrity error.
pub fn read_jsonl(path: &Path) -> Result<PreferenceDataset> {
    let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(meta_path(path))?)?;
    let file = fs::File::open(path)?;
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PreferenceRecord =
            serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
        records.push(record);
    }
    if records.len() != meta.n {
        return Err(Error::Integrity(format!(
            "sidecar claims n = {} but file holds {} records",
            meta.n,
            records.len()
        )));
    }
    Ok(PreferenceDataset { records, meta })
}

/// Convenience writer used by tests that need a raw line appended.
pub fn append_raw_line(path: &Path, line: &str) -> Result<()> {
    let mut f = fs::OpenOptions::new().append(true).open(path)?;
    writeln!(f, "{line}")?;
    Ok(())
}
