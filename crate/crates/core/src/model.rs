//! Ensemble representation: heap-indexed trees whose nodes reference
//! interned global tables of features, thresholds and leaf values.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::TaskKind;

/// Deepest tree level addressable with 64-bit heap indices.
pub const MAX_DEPTH: usize = 62;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("non-finite value {0}")]
    NonFinite(f64),
    #[error("expected {expected} features, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid ensemble: {0}")]
    Invalid(String),
}

/// How a feature's thresholds are stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NumericType {
    Integer,
    Float,
}

impl NumericType {
    pub fn bit(self) -> u64 {
        match self {
            NumericType::Integer => 0,
            NumericType::Float => 1,
        }
    }
}

/// Threshold storage format: `2^width_exponent` bits of the given type.
/// Integers are unsigned; floats are IEEE half (16) or single (32) precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ThresholdRepr {
    pub width_exponent: u8,
    pub numeric_type: NumericType,
}

impl ThresholdRepr {
    pub const FLOAT32: ThresholdRepr = ThresholdRepr {
        width_exponent: 5,
        numeric_type: NumericType::Float,
    };
    pub const FLOAT16: ThresholdRepr = ThresholdRepr {
        width_exponent: 4,
        numeric_type: NumericType::Float,
    };

    pub fn integer(width_exponent: u8) -> Self {
        ThresholdRepr {
            width_exponent,
            numeric_type: NumericType::Integer,
        }
    }

    pub fn bits(&self) -> u32 {
        1 << self.width_exponent
    }

    pub fn is_valid(&self) -> bool {
        match self.numeric_type {
            NumericType::Integer => self.width_exponent <= 5,
            NumericType::Float => matches!(self.width_exponent, 4 | 5),
        }
    }

    /// Stored bit pattern of `value`, or `None` if the value is not exactly
    /// representable.
    pub fn encode_value(&self, value: f64) -> Option<u64> {
        if !self.is_valid() || !value.is_finite() {
            return None;
        }
        let bits = match self.numeric_type {
            NumericType::Integer => {
                if value < 0.0 || value.fract() != 0.0 || value >= 2f64.powi(self.bits() as i32) {
                    return None;
                }
                value as u64
            }
            NumericType::Float if self.width_exponent == 4 => {
                u64::from(half::f16::from_f64(value).to_bits())
            }
            NumericType::Float => u64::from((value as f32).to_bits()),
        };
        (self.decode_value(bits) == value).then_some(bits)
    }

    pub fn decode_value(&self, bits: u64) -> f64 {
        match self.numeric_type {
            NumericType::Integer => bits as f64,
            NumericType::Float if self.width_exponent == 4 => {
                half::f16::from_bits(bits as u16).to_f64()
            }
            NumericType::Float => f64::from(f32::from_bits(bits as u32)),
        }
    }
}

impl Default for ThresholdRepr {
    fn default() -> Self {
        ThresholdRepr::FLOAT32
    }
}

/// One used input feature and the thresholds it is split on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEntry {
    pub input_index: usize,
    pub repr: ThresholdRepr,
    pub thresholds: Vec<f64>,
}

/// Lengths of the global tables at some point in time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TablesSnapshot {
    threshold_counts: Vec<usize>,
    leaf_values: usize,
}

/// Interned features (in first-use order), their thresholds and the
/// shared leaf values.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(from = "TablesData", into = "TablesData")]
pub struct GlobalTables {
    features: Vec<FeatureEntry>,
    leaf_values: Vec<f32>,
    feature_lookup: HashMap<usize, usize>,
    leaf_lookup: HashMap<u32, usize>,
}

#[derive(Serialize, Deserialize)]
struct TablesData {
    features: Vec<FeatureEntry>,
    leaf_values: Vec<f32>,
}

impl From<TablesData> for GlobalTables {
    fn from(d: TablesData) -> Self {
        GlobalTables::from_parts(d.features, d.leaf_values)
    }
}

impl From<GlobalTables> for TablesData {
    fn from(t: GlobalTables) -> Self {
        TablesData {
            features: t.features,
            leaf_values: t.leaf_values,
        }
    }
}

impl PartialEq for GlobalTables {
    fn eq(&self, other: &Self) -> bool {
        self.features == other.features
            && self.leaf_values.len() == other.leaf_values.len()
            && self
                .leaf_values
                .iter()
                .zip(&other.leaf_values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

fn canonical(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v
    }
}

fn canonical_leaf(v: f64) -> f32 {
    let v = v as f32;
    if v == 0.0 {
        0.0
    } else {
        v
    }
}

impl GlobalTables {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds tables from stored entries; duplicates are caught by
    /// [`GlobalTables::validate`].
    pub fn from_parts(features: Vec<FeatureEntry>, leaf_values: Vec<f32>) -> Self {
        let mut feature_lookup = HashMap::new();
        for (i, e) in features.iter().enumerate() {
            feature_lookup.entry(e.input_index).or_insert(i);
        }
        let mut leaf_lookup = HashMap::new();
        for (i, v) in leaf_values.iter().enumerate() {
            leaf_lookup.entry(v.to_bits()).or_insert(i);
        }
        Self {
            features,
            leaf_values,
            feature_lookup,
            leaf_lookup,
        }
    }

    pub fn features(&self) -> &[FeatureEntry] {
        &self.features
    }

    pub fn feature(&self, feature_ref: usize) -> &FeatureEntry {
        &self.features[feature_ref]
    }

    pub fn leaf_values(&self) -> &[f32] {
        &self.leaf_values
    }

    /// Total number of stored thresholds across features.
    pub fn threshold_count(&self) -> usize {
        self.features.iter().map(|e| e.thresholds.len()).sum()
    }

    /// Largest per-feature threshold count (0 without features).
    pub fn max_threshold_count(&self) -> usize {
        self.features
            .iter()
            .map(|e| e.thresholds.len())
            .max()
            .unwrap_or(0)
    }

    pub fn find_feature(&self, input_index: usize) -> Option<usize> {
        self.feature_lookup.get(&input_index).copied()
    }

    pub fn find_threshold(&self, feature_ref: usize, mu: f64) -> Option<usize> {
        let key = canonical(mu).to_bits();
        self.features[feature_ref]
            .thresholds
            .iter()
            .position(|t| canonical(*t).to_bits() == key)
    }

    pub fn find_leaf_value(&self, v: f64) -> Option<usize> {
        self.leaf_lookup.get(&canonical_leaf(v).to_bits()).copied()
    }

    /// Returns the entry for `input_index`, appending an empty one if the
    /// feature is new. The flag is true when the table grew.
    pub fn intern_feature(&mut self, input_index: usize) -> (usize, bool) {
        if let Some(i) = self.find_feature(input_index) {
            return (i, false);
        }
        let i = self.features.len();
        self.features.push(FeatureEntry {
            input_index,
            repr: ThresholdRepr::default(),
            thresholds: Vec::new(),
        });
        self.feature_lookup.insert(input_index, i);
        (i, true)
    }

    /// Returns the index of `mu` in the feature's thresholds (matching
    /// bit-wise with -0.0 folded to +0.0), appending it if new.
    pub fn intern_threshold(
        &mut self,
        feature_ref: usize,
        mu: f64,
    ) -> Result<(usize, bool), ModelError> {
        if !mu.is_finite() {
            return Err(ModelError::NonFinite(mu));
        }
        if let Some(i) = self.find_threshold(feature_ref, mu) {
            return Ok((i, false));
        }
        let entry = &mut self.features[feature_ref];
        entry.thresholds.push(canonical(mu));
        Ok((entry.thresholds.len() - 1, true))
    }

    /// Rounds `v` to single precision and returns its shared slot.
    pub fn intern_leaf_value(&mut self, v: f64) -> Result<usize, ModelError> {
        if !v.is_finite() {
            return Err(ModelError::NonFinite(v));
        }
        let v = canonical_leaf(v);
        if !v.is_finite() {
            return Err(ModelError::NonFinite(f64::from(v)));
        }
        let next = self.leaf_values.len();
        let slot = *self.leaf_lookup.entry(v.to_bits()).or_insert(next);
        if slot == next {
            self.leaf_values.push(v);
        }
        Ok(slot)
    }

    pub fn snapshot(&self) -> TablesSnapshot {
        TablesSnapshot {
            threshold_counts: self.features.iter().map(|e| e.thresholds.len()).collect(),
            leaf_values: self.leaf_values.len(),
        }
    }

    /// Drops everything interned after `snap` was taken.
    pub fn rollback(&mut self, snap: &TablesSnapshot) {
        for e in self.features.drain(snap.threshold_counts.len()..) {
            self.feature_lookup.remove(&e.input_index);
        }
        for (e, &n) in self.features.iter_mut().zip(&snap.threshold_counts) {
            e.thresholds.truncate(n);
        }
        for v in self.leaf_values.drain(snap.leaf_values..) {
            self.leaf_lookup.remove(&v.to_bits());
        }
    }

    /// Replaces a feature's storage format and threshold values. Callers
    /// keep thresholds in the same order so node references stay valid.
    pub(crate) fn set_feature_storage(&mut self, feature_ref: usize, repr: ThresholdRepr, thresholds: Vec<f64>) {
        let e = &mut self.features[feature_ref];
        debug_assert_eq!(e.thresholds.len(), thresholds.len());
        e.repr = repr;
        e.thresholds = thresholds;
    }

    pub fn validate(&self, feature_count: usize) -> Result<(), ModelError> {
        let mut seen = HashMap::new();
        for (i, e) in self.features.iter().enumerate() {
            if e.input_index >= feature_count {
                return Err(ModelError::Invalid(format!(
                    "feature entry {i} references input {} of {feature_count}",
                    e.input_index
                )));
            }
            if seen.insert(e.input_index, i).is_some() {
                return Err(ModelError::Invalid(format!(
                    "input feature {} interned twice",
                    e.input_index
                )));
            }
            if e.thresholds.is_empty() {
                return Err(ModelError::Invalid(format!("feature entry {i} has no thresholds")));
            }
            if !e.repr.is_valid() {
                return Err(ModelError::Invalid(format!(
                    "feature entry {i} has invalid storage {:?}",
                    e.repr
                )));
            }
            let mut keys = std::collections::HashSet::new();
            for t in &e.thresholds {
                if e.repr.encode_value(*t).is_none() {
                    return Err(ModelError::Invalid(format!(
                        "threshold {t} of feature entry {i} not representable as {:?}",
                        e.repr
                    )));
                }
                if !keys.insert(canonical(*t).to_bits()) {
                    return Err(ModelError::Invalid(format!(
                        "duplicate threshold {t} in feature entry {i}"
                    )));
                }
            }
        }
        let mut keys = std::collections::HashSet::new();
        for v in &self.leaf_values {
            if !v.is_finite() || !keys.insert(v.to_bits()) {
                return Err(ModelError::Invalid(format!("bad or duplicate leaf value {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeNode {
    Internal {
        feature_ref: usize,
        threshold_ref: usize,
    },
    Leaf {
        leaf_ref: usize,
    },
}

/// Depth of a heap index (root is depth 0).
pub fn heap_depth(index: u64) -> usize {
    (63 - (index + 1).leading_zeros()) as usize
}

/// Pointer-less binary tree: children of node `i` live at `2i+1` (left,
/// `x <= threshold`) and `2i+2` (right).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Tree {
    nodes: BTreeMap<u64, TreeNode>,
}

impl Tree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn single_leaf(leaf_ref: usize) -> Self {
        let mut t = Tree::new();
        t.insert(0, TreeNode::Leaf { leaf_ref });
        t
    }

    pub fn insert(&mut self, index: u64, node: TreeNode) {
        self.nodes.insert(index, node);
    }

    pub fn get(&self, index: u64) -> Option<&TreeNode> {
        self.nodes.get(&index)
    }

    /// Nodes in ascending heap index, which is level order.
    pub fn nodes(&self) -> impl Iterator<Item = (u64, &TreeNode)> {
        self.nodes.iter().map(|(i, n)| (*i, n))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn depth(&self) -> usize {
        self.nodes.keys().next_back().map_or(0, |i| heap_depth(*i))
    }

    pub fn internal_count(&self) -> usize {
        self.nodes
            .values()
            .filter(|n| matches!(n, TreeNode::Internal { .. }))
            .count()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.len() - self.internal_count()
    }

    /// Leaf reached by `x`.
    pub fn route(&self, x: &[f64], tables: &GlobalTables) -> usize {
        let mut i = 0u64;
        loop {
            match self.nodes[&i] {
                TreeNode::Leaf { leaf_ref } => return leaf_ref,
                TreeNode::Internal {
                    feature_ref,
                    threshold_ref,
                } => {
                    let e = &tables.features[feature_ref];
                    i = if x[e.input_index] <= e.thresholds[threshold_ref] {
                        2 * i + 1
                    } else {
                        2 * i + 2
                    };
                }
            }
        }
    }

    fn validate(&self, tables: &GlobalTables, max_depth: usize) -> Result<(), String> {
        if !matches!(self.nodes.first_key_value(), Some((0, _))) {
            return Err("missing root".into());
        }
        for (&i, node) in &self.nodes {
            if heap_depth(i) > max_depth {
                return Err(format!("node {i} deeper than {max_depth}"));
            }
            if i > 0 {
                match self.nodes.get(&((i - 1) / 2)) {
                    Some(TreeNode::Internal { .. }) => {}
                    _ => return Err(format!("node {i} has no internal parent")),
                }
            }
            match *node {
                TreeNode::Internal {
                    feature_ref,
                    threshold_ref,
                } => {
                    if heap_depth(i) >= max_depth.min(MAX_DEPTH) {
                        return Err(format!("internal node {i} at depth limit"));
                    }
                    let Some(e) = tables.features.get(feature_ref) else {
                        return Err(format!("node {i}: feature ref {feature_ref} out of range"));
                    };
                    if threshold_ref >= e.thresholds.len() {
                        return Err(format!(
                            "node {i}: threshold ref {threshold_ref} out of range"
                        ));
                    }
                    if !self.nodes.contains_key(&(2 * i + 1)) || !self.nodes.contains_key(&(2 * i + 2)) {
                        return Err(format!("internal node {i} lacks a child"));
                    }
                }
                TreeNode::Leaf { leaf_ref } => {
                    if leaf_ref >= tables.leaf_values.len() {
                        return Err(format!("node {i}: leaf ref {leaf_ref} out of range"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Additive tree ensemble. Leaf values already include shrinkage, so a raw
/// score is the plain sum of reached leaf values. Tree `j` contributes to
/// class `j % class_count`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub trees: Vec<Tree>,
    pub tables: GlobalTables,
    pub task: TaskKind,
    pub n_features: usize,
    pub max_depth: usize,
    pub base_score: f64,
    /// Shrinkage used in training; unknown for decoded models.
    pub learning_rate: Option<f64>,
}

/// Link-function output of [`Ensemble::predict`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Prediction {
    Value(f64),
    Class {
        class: usize,
        probabilities: Vec<f64>,
    },
}

impl Prediction {
    /// Numeric value compared against labels.
    pub fn as_f64(&self) -> f64 {
        match self {
            Prediction::Value(v) => *v,
            Prediction::Class { class, .. } => *class as f64,
        }
    }
}

pub fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl Ensemble {
    pub fn empty(task: TaskKind, n_features: usize, max_depth: usize) -> Self {
        Ensemble {
            trees: Vec::new(),
            tables: GlobalTables::new(),
            task,
            n_features,
            max_depth,
            base_score: 0.0,
            learning_rate: None,
        }
    }

    pub fn class_count(&self) -> usize {
        self.task.class_count()
    }

    /// Internal nodes over all trees.
    pub fn node_count(&self) -> usize {
        self.trees.iter().map(Tree::internal_count).sum()
    }

    pub fn leaf_count(&self) -> usize {
        self.trees.iter().map(Tree::leaf_count).sum()
    }

    pub fn predict_raw(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        if x.len() != self.n_features {
            return Err(ModelError::DimensionMismatch {
                expected: self.n_features,
                found: x.len(),
            });
        }
        let k = self.class_count();
        let mut scores = vec![self.base_score; k];
        for (j, tree) in self.trees.iter().enumerate() {
            let leaf = tree.route(x, &self.tables);
            scores[j % k] += f64::from(self.tables.leaf_values[leaf]);
        }
        Ok(scores)
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction, ModelError> {
        let raw = self.predict_raw(x)?;
        Ok(match self.task {
            TaskKind::Regression => Prediction::Value(raw[0]),
            TaskKind::Binary => {
                let p = logistic(raw[0]);
                Prediction::Class {
                    class: usize::from(p >= 0.5),
                    probabilities: vec![1.0 - p, p],
                }
            }
            TaskKind::Multiclass { .. } => {
                let probabilities = softmax(&raw);
                let mut class = 0;
                for (c, p) in probabilities.iter().enumerate() {
                    if *p > probabilities[class] {
                        class = c;
                    }
                }
                Prediction::Class {
                    class,
                    probabilities,
                }
            }
        })
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.max_depth == 0 || self.max_depth > MAX_DEPTH {
            return Err(ModelError::Invalid(format!(
                "max depth {} outside [1, {MAX_DEPTH}]",
                self.max_depth
            )));
        }
        if !self.trees.len().is_multiple_of(self.class_count()) {
            return Err(ModelError::Invalid(format!(
                "{} trees is not a multiple of {} classes",
                self.trees.len(),
                self.class_count()
            )));
        }
        self.tables.validate(self.n_features)?;
        for (k, t) in self.trees.iter().enumerate() {
            t.validate(&self.tables, self.max_depth)
                .map_err(|m| ModelError::Invalid(format!("tree {k}: {m}")))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intern_feature_examples() {
        let mut t = GlobalTables::new();
        assert_eq!(t.intern_feature(3), (0, true));
        assert_eq!(t.intern_feature(3), (0, false));
        assert_eq!(t.intern_feature(7), (1, true));
        assert_eq!(t.intern_feature(5), (2, true));
    }

    #[test]
    fn intern_threshold_examples() {
        let mut t = GlobalTables::new();
        let (f, _) = t.intern_feature(0);
        assert_eq!(t.intern_threshold(f, 0.5).unwrap(), (0, true));
        assert_eq!(t.intern_threshold(f, 0.5).unwrap(), (0, false));
        assert_eq!(t.intern_threshold(f, 1.5).unwrap(), (1, true));
        assert_eq!(t.intern_threshold(f, 0.0).unwrap(), (2, true));
        assert_eq!(t.intern_threshold(f, -0.0).unwrap(), (2, false));
        assert!(t.intern_threshold(f, f64::NAN).is_err());
        assert!(t.intern_threshold(f, f64::INFINITY).is_err());
    }

    #[test]
    fn intern_leaf_examples() {
        let mut t = GlobalTables::new();
        assert_eq!(t.intern_leaf_value(0.25).unwrap(), 0);
        assert_eq!(t.intern_leaf_value(0.25).unwrap(), 0);
        // 0.25 + 2^-40 rounds to 0.25 in single precision (24-bit mantissa).
        assert_eq!((0.25 + 2f64.powi(-40)) as f32, 0.25f32);
        assert_eq!(t.intern_leaf_value(0.25 + 2f64.powi(-40)).unwrap(), 0);
        assert_eq!(t.intern_leaf_value(0.5).unwrap(), 1);
        assert!(t.intern_leaf_value(f64::NAN).is_err());
        assert!(t.intern_leaf_value(1e300).is_err());
    }

    #[test]
    fn rollback_restores_lengths_and_lookups() {
        let mut t = GlobalTables::new();
        let (f, _) = t.intern_feature(2);
        t.intern_threshold(f, 1.0).unwrap();
        t.intern_leaf_value(0.1).unwrap();
        let snap = t.snapshot();
        t.intern_threshold(f, 2.0).unwrap();
        let (g, _) = t.intern_feature(4);
        t.intern_threshold(g, 3.0).unwrap();
        t.intern_leaf_value(0.2).unwrap();
        t.rollback(&snap);
        assert_eq!(t.snapshot(), snap);
        assert_eq!(t.find_feature(4), None);
        assert_eq!(t.find_leaf_value(0.2), None);
        assert_eq!(t.intern_feature(4), (1, true));
        assert_eq!(t.intern_leaf_value(0.2).unwrap(), 1);
    }

    #[test]
    fn repr_round_trips() {
        assert_eq!(ThresholdRepr::integer(0).encode_value(1.0), Some(1));
        assert_eq!(ThresholdRepr::integer(0).encode_value(2.0), None);
        assert_eq!(ThresholdRepr::integer(1).encode_value(3.0), Some(3));
        assert_eq!(ThresholdRepr::integer(3).encode_value(-1.0), None);
        assert_eq!(ThresholdRepr::integer(3).encode_value(1.5), None);
        assert_eq!(ThresholdRepr::FLOAT16.encode_value(0.5), Some(0x3800));
        assert_eq!(ThresholdRepr::FLOAT16.encode_value(0.1), None);
        assert_eq!(ThresholdRepr::FLOAT32.encode_value(0.1), None);
        let b = ThresholdRepr::FLOAT32.encode_value(f64::from(0.1f32)).unwrap();
        assert_eq!(ThresholdRepr::FLOAT32.decode_value(b), f64::from(0.1f32));
        assert!(!ThresholdRepr {
            width_exponent: 3,
            numeric_type: NumericType::Float
        }
        .is_valid());
    }

    fn stump() -> Ensemble {
        let mut tables = GlobalTables::new();
        let (f, _) = tables.intern_feature(1);
        let (t, _) = tables.intern_threshold(f, 0.5).unwrap();
        let a = tables.intern_leaf_value(-1.0).unwrap();
        let b = tables.intern_leaf_value(2.0).unwrap();
        let mut tree = Tree::new();
        tree.insert(
            0,
            TreeNode::Internal {
                feature_ref: f,
                threshold_ref: t,
            },
        );
        tree.insert(1, TreeNode::Leaf { leaf_ref: a });
        tree.insert(2, TreeNode::Leaf { leaf_ref: b });
        Ensemble {
            trees: vec![tree],
            tables,
            task: TaskKind::Regression,
            n_features: 2,
            max_depth: 1,
            base_score: 0.0,
            learning_rate: Some(0.1),
        }
    }

    #[test]
    fn predict_empty_and_single_leaf() {
        let mut e = Ensemble::empty(TaskKind::Regression, 2, 3);
        assert_eq!(e.predict_raw(&[1.0, 2.0]).unwrap(), vec![0.0]);
        let leaf = e.tables.intern_leaf_value(0.7).unwrap();
        e.trees.push(Tree::single_leaf(leaf));
        assert_eq!(e.predict_raw(&[1.0, 2.0]).unwrap(), vec![f64::from(0.7f32)]);
        assert!(e.validate().is_ok());
    }

    #[test]
    fn routing_goes_left_on_equal() {
        let e = stump();
        e.validate().unwrap();
        assert_eq!(e.predict_raw(&[9.0, 0.5]).unwrap(), vec![-1.0]);
        assert_eq!(e.predict_raw(&[9.0, 0.6]).unwrap(), vec![2.0]);
        assert_eq!(
            e.predict_raw(&[1.0]).unwrap_err(),
            ModelError::DimensionMismatch {
                expected: 2,
                found: 1
            }
        );
    }

    #[test]
    fn link_functions() {
        let mut e = Ensemble::empty(TaskKind::Binary, 1, 1);
        match e.predict(&[0.0]).unwrap() {
            Prediction::Class {
                class,
                probabilities,
            } => {
                assert_eq!(class, 1);
                assert_eq!(probabilities[1], 0.5);
            }
            p => panic!("{p:?}"),
        }
        let leaf = e.tables.intern_leaf_value(2.0).unwrap();
        e.trees.push(Tree::single_leaf(leaf));
        let Prediction::Class { probabilities, .. } = e.predict(&[0.0]).unwrap() else {
            unreachable!()
        };
        assert!((probabilities[1] - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-15);
        assert!((probabilities[1] - 0.8808).abs() < 1e-4);

        let e = Ensemble::empty(TaskKind::Multiclass { classes: 3 }, 1, 1);
        let Prediction::Class {
            class,
            probabilities,
        } = e.predict(&[0.0]).unwrap()
        else {
            unreachable!()
        };
        assert_eq!(class, 0);
        for p in probabilities {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn validate_catches_broken_trees() {
        let mut e = stump();
        let mut t = e.trees[0].clone();
        t.insert(5, TreeNode::Leaf { leaf_ref: 0 });
        e.trees[0] = t;
        assert!(e.validate().is_err());

        let mut e = stump();
        e.trees[0].insert(2, TreeNode::Leaf { leaf_ref: 9 });
        assert!(e.validate().is_err());

        let mut e = stump();
        e.task = TaskKind::Multiclass { classes: 3 };
        assert!(e.validate().is_err());
    }

    #[test]
    fn heap_depths() {
        assert_eq!(heap_depth(0), 0);
        assert_eq!(heap_depth(1), 1);
        assert_eq!(heap_depth(2), 1);
        assert_eq!(heap_depth(3), 2);
        assert_eq!(heap_depth(6), 2);
        assert_eq!(heap_depth(7), 3);
    }

    #[test]
    fn tables_serde_rebuilds_lookups() {
        let e = stump();
        let json = serde_json::to_string(&e).unwrap();
        let back: Ensemble = serde_json::from_str(&json).unwrap();
        assert_eq!(back, e);
        assert_eq!(back.tables.find_feature(1), Some(0));
        assert_eq!(back.tables.find_leaf_value(2.0), Some(1));
    }
}
