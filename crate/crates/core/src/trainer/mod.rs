//! Gradient boosting with leaf-wise growth under feature and threshold
//! reuse penalties, optionally capped by an encoded-size budget.

mod grad;
mod grow;
mod split;
mod storage;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{size_report, METADATA_BITS};
use crate::data::{candidate_thresholds, CandidateSet, DataError, Dataset, DEFAULT_MAX_BINS};
use crate::model::{Ensemble, GlobalTables, ModelError, Tree, MAX_DEPTH};

pub use grad::{compute_gradients, leaf_value, GradStats, MAX_GRADIENT};
pub use split::{best_split, evaluate_split, GainResult};

use split::Binned;
use storage::StorageState;

/// Largest count the format stores for used features, thresholds per
/// feature and leaf values.
pub const TABLE_LIMIT: usize = (1 << 12) - 1;
/// Largest tree count the format stores.
pub const TREE_LIMIT: usize = (1 << 16) - 1;
/// Largest input feature count the format stores.
pub const INPUT_LIMIT: usize = (1 << 16) - 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Penalty for splitting on a feature not used so far.
    #[serde(rename = "tinygbdt_penalty_feature")]
    pub iota: f64,
    /// Penalty for a (feature, threshold) pair not used so far.
    #[serde(rename = "tinygbdt_penalty_threshold")]
    pub xi: f64,
    /// Per-split penalty.
    pub gamma: f64,
    /// L2 penalty on leaf values.
    pub lambda: f64,
    pub learning_rate: f64,
    pub max_iterations: usize,
    pub max_depth: usize,
    /// Encoded model size limit in bytes.
    #[serde(rename = "tinygbdt_forestsize")]
    pub forestsize_budget: Option<u64>,
    pub max_bins: usize,
    pub min_gain: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iota: 0.0,
            xi: 0.0,
            gamma: 0.0,
            lambda: 1.0,
            learning_rate: 0.1,
            max_iterations: 100,
            max_depth: 4,
            forestsize_budget: None,
            max_bins: DEFAULT_MAX_BINS,
            min_gain: 0.0,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::InvalidConfig(msg));
        for (name, v) in [
            ("tinygbdt_penalty_feature", self.iota),
            ("tinygbdt_penalty_threshold", self.xi),
            ("gamma", self.gamma),
            ("lambda", self.lambda),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad(format!("learning_rate must be in (0, 1], got {}", self.learning_rate));
        }
        if !(1..=MAX_DEPTH).contains(&self.max_depth) {
            return bad(format!("max_depth must be in 1..={MAX_DEPTH}, got {}", self.max_depth));
        }
        if self.max_bins == 0 {
            return bad("max_bins must be positive".into());
        }
        if !self.min_gain.is_finite() {
            return bad(format!("min_gain must be finite, got {}", self.min_gain));
        }
        if let Some(b) = self.forestsize_budget {
            if b * 8 < METADATA_BITS {
                return bad(format!(
                    "tinygbdt_forestsize {b} is below the {}-byte minimum model",
                    METADATA_BITS / 8
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("gradient out of range at row {row}: g = {g}, h = {h}")]
    Gradient { row: usize, g: f64, h: f64 },
    #[error("non-finite raw score at row {row}")]
    NonFiniteScore { row: usize },
    #[error("leaf value undefined: G = {g}, H = {h}, lambda = {lambda}")]
    DegenerateLeaf { g: f64, h: f64, lambda: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIterations,
    /// A round produced only single-leaf trees.
    NoSplits,
    /// The next round would exceed the size budget.
    Budget,
    /// The next round would exceed a table size the format can store.
    FormatLimit,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub ensemble: Ensemble,
    pub rounds: usize,
    pub stop: StopReason,
}

/// Exact encoded length of `e` in bits.
pub fn encoded_size_bits(e: &Ensemble) -> u64 {
    size_report(e).total_bits
}

/// Grows one tree on `rows`, interning what it uses into `tables`.
pub fn grow_tree(
    ds: &Dataset,
    rows: &[usize],
    grads: &GradStats,
    candidates: &CandidateSet,
    cfg: &TrainConfig,
    tables: &mut GlobalTables,
) -> Result<Tree, TrainError> {
    cfg.validate()?;
    let binned = Binned::new(ds, candidates);
    let rows = rows.iter().map(|&r| r as u32).collect();
    Ok(grow::grow(&binned, grads, rows, cfg, tables)?.tree)
}

pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<Ensemble, TrainError> {
    Ok(train_detailed(ds, cfg)?.ensemble)
}

pub fn train_detailed(ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let candidates = candidate_thresholds(ds, cfg.max_bins);
    train_with_candidates(ds, &candidates, cfg)
}

/// Boosting on explicit candidate thresholds.
pub fn train_with_candidates(
    ds: &Dataset,
    candidates: &CandidateSet,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let task = ds.task();
    let k = task.class_count();
    let n = ds.n_rows();
    let d = ds.n_features();
    if n < 2 {
        return Err(TrainError::InvalidConfig(format!("need at least 2 rows, got {n}")));
    }
    if d > INPUT_LIMIT {
        return Err(TrainError::InvalidConfig(format!("{d} input features exceed {INPUT_LIMIT}")));
    }
    if candidates.n_features() != d {
        return Err(TrainError::InvalidConfig(format!(
            "candidates for {} features, data has {d}",
            candidates.n_features()
        )));
    }
    let max_trees = cfg.max_iterations.saturating_mul(k);
    if max_trees > TREE_LIMIT {
        return Err(TrainError::InvalidConfig(format!(
            "{max_trees} trees exceed the format limit of {TREE_LIMIT}"
        )));
    }

    let binned = Binned::new(ds, candidates);
    let mut e = Ensemble::empty(task, d, cfg.max_depth);
    e.learning_rate = Some(cfg.learning_rate);
    let mut storage = StorageState::default();
    let mut scores = vec![0.0; n * k];
    let all_rows: Vec<u32> = (0..n as u32).collect();
    let mut stop = StopReason::MaxIterations;

    for _ in 0..cfg.max_iterations {
        let grads = compute_gradients(task, ds.labels(), &scores)?;
        let snapshot = e.tables.snapshot();
        let saved = storage.clone();
        let mut grown = Vec::with_capacity(k);
        for g in &grads {
            let tree = grow::grow(&binned, g, all_rows.clone(), cfg, &mut e.tables)?;
            storage.sync(&e.tables, &binned.values);
            storage.count(&tree.tree);
            grown.push(tree);
        }

        let summary = storage.summary(&e.tables, d);
        let over_limit = summary.features.len() > TABLE_LIMIT
            || summary.leaf_values > TABLE_LIMIT
            || summary.features.iter().any(|f| f.threshold_count > TABLE_LIMIT);
        let over_budget = cfg
            .forestsize_budget
            .is_some_and(|b| summary.size_report().total_bits > 8 * b);
        let only_stumps = grown.iter().all(|g| g.tree.len() == 1);
        let rejected = if over_limit {
            Some(StopReason::FormatLimit)
        } else if over_budget {
            Some(StopReason::Budget)
        } else if only_stumps && !e.trees.is_empty() {
            Some(StopReason::NoSplits)
        } else {
            None
        };
        if let Some(reason) = rejected {
            e.tables.rollback(&snapshot);
            storage = saved;
            stop = reason;
            break;
        }

        for (c, g) in grown.into_iter().enumerate() {
            for (rows, v) in &g.leaves {
                for &r in rows {
                    scores[r as usize * k + c] += f64::from(*v);
                }
            }
            e.trees.push(g.tree);
        }
        if only_stumps {
            stop = StopReason::NoSplits;
            break;
        }
    }

    storage.finalize(&mut e.tables);
    e.validate()?;
    Ok(TrainOutcome {
        rounds: e.trees.len() / k,
        ensemble: e,
        stop,
    })
}
