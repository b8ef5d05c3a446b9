//! Metrics, memory accounting, reuse factor, penalty grids and Pareto fronts.

use std::collections::HashSet;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::codec::size_report;
use crate::data::{split_train_test, DataError, Dataset, TaskKind};
use crate::model::{Ensemble, ModelError, Prediction};
use crate::trainer::{train, TrainConfig, TrainError};

/// Baseline node size: feature id, threshold and two child pointers of 32 bits.
pub const BASELINE32_BITS: u64 = 128;
/// The same node with 16-bit fields.
pub const BASELINE16_BITS: u64 = 64;
pub const DEFAULT_TEST_FRACTION: f64 = 0.2;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("model task {model} does not match data task {data}")]
    TaskMismatch { model: TaskKind, data: TaskKind },
    #[error("R2 is undefined: test labels have zero variance")]
    UndefinedR2,
    #[error("empty grid: {0}")]
    EmptyGrid(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("training with {config} failed: {source}")]
    Train {
        config: String,
        #[source]
        source: TrainError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricName {
    Accuracy,
    R2,
}

impl MetricName {
    pub fn for_task(task: TaskKind) -> Self {
        if task.is_classification() {
            MetricName::Accuracy
        } else {
            MetricName::R2
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            MetricName::Accuracy => "accuracy",
            MetricName::R2 => "r2",
        }
    }
}

/// Accuracy for classification, R² for regression.
pub fn score(e: &Ensemble, ds: &Dataset) -> Result<f64, EvalError> {
    if e.task != ds.task() {
        return Err(EvalError::TaskMismatch {
            model: e.task,
            data: ds.task(),
        });
    }
    let preds = ds.rows().map(|x| e.predict(x)).collect::<Result<Vec<_>, _>>()?;
    let y = ds.labels();
    if e.task.is_classification() {
        let correct = preds
            .iter()
            .zip(y)
            .filter(|(p, &y)| matches!(p, Prediction::Class { class, .. } if *class as f64 == y))
            .count();
        return Ok(correct as f64 / y.len() as f64);
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let total: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if total == 0.0 {
        return Err(EvalError::UndefinedR2);
    }
    let residual: f64 = preds.iter().zip(y).map(|(p, v)| (v - p.as_f64()).powi(2)).sum();
    Ok(1.0 - residual / total)
}

/// Size of the same trees stored node by node with `bits_per_node` each.
pub fn baseline_memory(e: &Ensemble, bits_per_node: u64) -> u64 {
    (e.node_count() + e.leaf_count()) as u64 * bits_per_node / 8
}

/// Node and leaf usages per stored distinct value; `None` for a model with
/// no stored values.
pub fn reuse_factor(e: &Ensemble) -> Option<f64> {
    let distinct = e.tables.threshold_count() + e.tables.leaf_values().len();
    (distinct > 0).then(|| (e.node_count() + e.leaf_count()) as f64 / distinct as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub metric_name: MetricName,
    pub metric_value: f64,
    pub toad_bytes: u64,
    pub baseline32_bytes: u64,
    pub baseline16_bytes: u64,
    pub node_count: usize,
    pub leaf_count: usize,
    pub global_threshold_count: usize,
    pub global_leaf_value_count: usize,
    pub feature_count: usize,
    pub reuse_factor: Option<f64>,
    pub config: TrainConfig,
}

impl EvalReport {
    pub fn global_value_count(&self) -> usize {
        self.global_threshold_count + self.global_leaf_value_count
    }
}

pub fn evaluate(e: &Ensemble, test: &Dataset, config: &TrainConfig) -> Result<EvalReport, EvalError> {
    Ok(EvalReport {
        metric_name: MetricName::for_task(e.task),
        metric_value: score(e, test)?,
        toad_bytes: size_report(e).total_bytes,
        baseline32_bytes: baseline_memory(e, BASELINE32_BITS),
        baseline16_bytes: baseline_memory(e, BASELINE16_BITS),
        node_count: e.node_count(),
        leaf_count: e.leaf_count(),
        global_threshold_count: e.tables.threshold_count(),
        global_leaf_value_count: e.tables.leaf_values().len(),
        feature_count: e.tables.features().len(),
        reuse_factor: reuse_factor(e),
        config: config.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub iota: f64,
    pub xi: f64,
    pub max_iterations: usize,
    pub max_depth: usize,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSpec {
    pub iotas: Vec<f64>,
    pub xis: Vec<f64>,
    pub iterations: Vec<usize>,
    pub depths: Vec<usize>,
}

impl GridSpec {
    fn configs(&self, base: &TrainConfig) -> Vec<TrainConfig> {
        let mut out = Vec::new();
        for &iota in &self.iotas {
            for &xi in &self.xis {
                for &max_iterations in &self.iterations {
                    for &max_depth in &self.depths {
                        out.push(TrainConfig {
                            iota,
                            xi,
                            max_iterations,
                            max_depth,
                            ..base.clone()
                        });
                    }
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.iotas.len() * self.xis.len() * self.iterations.len() * self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `2^lo, 2^(lo+1), ..., 2^hi`.
pub fn powers_of_two(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|k| 2f64.powi(k)).collect()
}

/// Penalties 2^-10 ..= 2^15 (26 values).
pub fn penalty_grid() -> Vec<f64> {
    powers_of_two(-10, 15)
}

/// Trains every grid configuration on one split of `ds` (by `base.seed`)
/// and scores it on the other. Rows come back in grid order. A budget is
/// enforced during training and rows above it are dropped.
pub fn grid_search(
    ds: &Dataset,
    grid: &GridSpec,
    base: &TrainConfig,
    budget: Option<u64>,
    test_fraction: f64,
) -> Result<Vec<GridRow>, EvalError> {
    for (name, empty) in [
        ("iota", grid.iotas.is_empty()),
        ("xi", grid.xis.is_empty()),
        ("iterations", grid.iterations.is_empty()),
        ("depths", grid.depths.is_empty()),
    ] {
        if empty {
            return Err(EvalError::EmptyGrid(name));
        }
    }
    let (train_ds, test_ds) = split_train_test(ds, test_fraction, base.seed)?;
    let base = TrainConfig {
        forestsize_budget: budget.or(base.forestsize_budget),
        ..base.clone()
    };
    let rows = grid
        .configs(&base)
        .into_par_iter()
        .map(|cfg| {
            let e = train(&train_ds, &cfg).map_err(|source| EvalError::Train {
                config: format!(
                    "iota={} xi={} iterations={} depth={}",
                    cfg.iota, cfg.xi, cfg.max_iterations, cfg.max_depth
                ),
                source,
            })?;
            Ok(GridRow {
                iota: cfg.iota,
                xi: cfg.xi,
                max_iterations: cfg.max_iterations,
                max_depth: cfg.max_depth,
                report: evaluate(&e, &test_ds, &cfg)?,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(match base.forestsize_budget {
        Some(b) => rows.into_iter().filter(|r| r.report.toad_bytes <= b).collect(),
        None => rows,
    })
}

fn dominates(a: &GridRow, b: &GridRow) -> bool {
    let (am, ab) = (a.report.metric_value, a.report.toad_bytes);
    let (bm, bb) = (b.report.metric_value, b.report.toad_bytes);
    am >= bm && ab <= bb && (am > bm || ab < bb)
}

/// Rows no other row beats on both metric (higher) and bytes (lower),
/// by bytes ascending; of rows equal on both, the first is kept.
pub fn pareto_filter(rows: &[GridRow]) -> Vec<GridRow> {
    let mut seen = HashSet::new();
    let mut front: Vec<GridRow> = rows
        .iter()
        .filter(|r| !rows.iter().any(|o| dominates(o, r)))
        .filter(|r| seen.insert((r.report.metric_value.to_bits(), r.report.toad_bytes)))
        .cloned()
        .collect();
    front.sort_by(|a, b| {
        a.report
            .toad_bytes
            .cmp(&b.report.toad_bytes)
            .then(b.report.metric_value.total_cmp(&a.report.metric_value))
    });
    front
}

pub const CSV_HEADER: [&str; 17] = [
    "iota",
    "xi",
    "max_iterations",
    "max_depth",
    "metric_name",
    "metric_value",
    "toad_bytes",
    "baseline32_bytes",
    "baseline16_bytes",
    "node_count",
    "leaf_count",
    "global_threshold_count",
    "global_leaf_value_count",
    "feature_count",
    "reuse_factor",
    "learning_rate",
    "forestsize_budget",
];

pub fn write_csv<W: Write>(rows: &[GridRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        let p = &r.report;
        w.write_record([
            r.iota.to_string(),
            r.xi.to_string(),
            r.max_iterations.to_string(),
            r.max_depth.to_string(),
            p.metric_name.as_str().to_string(),
            p.metric_value.to_string(),
            p.toad_bytes.to_string(),
            p.baseline32_bytes.to_string(),
            p.baseline16_bytes.to_string(),
            p.node_count.to_string(),
            p.leaf_count.to_string(),
            p.global_threshold_count.to_string(),
            p.global_leaf_value_count.to_string(),
            p.feature_count.to_string(),
            p.reuse_factor.map(|v| v.to_string()).unwrap_or_default(),
            p.config.learning_rate.to_string(),
            p.config.forestsize_budget.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<W: Write>(rows: &[GridRow], out: W) -> serde_json::Result<()> {
    serde_json::to_writer_pretty(out, rows)
}
