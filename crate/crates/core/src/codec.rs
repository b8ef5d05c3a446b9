//! Bit-exact `.toad` model format.
//!
//! A stream has five byte-aligned sections, written MSB-first:
//!
//! 1. metadata (96 bits): magic `0xD7` (8), version (4), task (2),
//!    class count (8), tree count K (16), max depth (6), input feature
//!    count d (16), used feature count |F| (12), largest per-feature
//!    threshold count (12), leaf value count V (12);
//! 2. feature/threshold map, one entry per used feature: input index
//!    (`ceil(log2 d)`), width exponent (3), numeric type (1, integer = 0),
//!    threshold count minus one (`ceil(log2 max_count)`);
//! 3. global thresholds, feature by feature in map order, each at its
//!    feature's width;
//! 4. global leaf values as IEEE single precision;
//! 5. trees, each in heap-index (level) order without the absent
//!    descendants of leaves. A node is a tag bit (0 internal, 1 leaf)
//!    followed by a feature reference (`ceil(log2 |F|)`) and a threshold
//!    index (`ceil(log2 count_f)`), or by a leaf value reference
//!    (`ceil(log2 V)`).
//!
//! Single-option references take zero bits.

use std::collections::{HashSet, VecDeque};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::bits::{ceil_log2, BitReader, BitWriter};
use crate::data::TaskKind;
use crate::model::{
    heap_depth, Ensemble, FeatureEntry, GlobalTables, ModelError, NumericType, ThresholdRepr, Tree,
    TreeNode, MAX_DEPTH,
};

pub const MAGIC: u64 = 0xD7;
pub const VERSION: u64 = 1;
pub const METADATA_BITS: u64 = 96;
pub const LEAF_VALUE_BITS: u64 = 32;

const MAGIC_BITS: u32 = 8;
const VERSION_BITS: u32 = 4;
const TASK_BITS: u32 = 2;
const CLASS_BITS: u32 = 8;
const TREE_COUNT_BITS: u32 = 16;
const DEPTH_BITS: u32 = 6;
const INPUT_COUNT_BITS: u32 = 16;
const FEATURE_COUNT_BITS: u32 = 12;
const MAX_COUNT_BITS: u32 = 12;
const LEAF_COUNT_BITS: u32 = 12;
const WIDTH_EXPONENT_BITS: u32 = 3;
const TYPE_BITS: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Section {
    Metadata,
    FeatureThresholdMap,
    GlobalThresholds,
    GlobalLeafValues,
    Trees,
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Section::Metadata => "metadata",
            Section::FeatureThresholdMap => "feature/threshold map",
            Section::GlobalThresholds => "global thresholds",
            Section::GlobalLeafValues => "global leaf values",
            Section::Trees => "trees",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error(transparent)]
    Invalid(#[from] ModelError),
    #[error("{field} = {value} does not fit in {bits} bits")]
    FieldOverflow {
        field: &'static str,
        value: u64,
        bits: u32,
    },
    #[error("base score {0} cannot be stored (the format assumes 0)")]
    BaseScore(f64),
    #[error("stream truncated in {section} section at bit {offset}")]
    Truncated { section: Section, offset: u64 },
    #[error("bad magic field {found:#04x} at bit 0 (expected 0xd7)")]
    BadMagic { found: u64 },
    #[error("{section} section, bit {offset}: {message}")]
    Malformed {
        section: Section,
        offset: u64,
        message: String,
    },
}

impl CodecError {
    /// Bit offset of a decoding failure.
    pub fn offset(&self) -> Option<u64> {
        match self {
            CodecError::Truncated { offset, .. } | CodecError::Malformed { offset, .. } => {
                Some(*offset)
            }
            CodecError::BadMagic { .. } => Some(0),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedModel {
    pub bytes: Vec<u8>,
    /// Bits up to the end of the trees section, including the padding
    /// between sections but not the final padding.
    pub bit_length: u64,
}

/// Per-section content bits (without padding).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SizeReport {
    pub metadata: u64,
    pub feature_threshold_map: u64,
    pub global_thresholds: u64,
    pub global_leaf_values: u64,
    pub trees: u64,
    /// Zero bits inserted between sections.
    pub padding: u64,
    pub total_bits: u64,
    pub total_bytes: u64,
}

/// Storage facts about one used feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureLayout {
    pub repr: ThresholdRepr,
    pub threshold_count: usize,
    /// Internal nodes splitting on this feature.
    pub split_count: usize,
}

/// Everything the size of an encoded model depends on.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LayoutSummary {
    pub n_features: usize,
    pub features: Vec<FeatureLayout>,
    pub leaf_values: usize,
    pub leaf_nodes: usize,
}

impl LayoutSummary {
    pub fn of(e: &Ensemble) -> Self {
        let mut features: Vec<FeatureLayout> = e
            .tables
            .features()
            .iter()
            .map(|f| FeatureLayout {
                repr: f.repr,
                threshold_count: f.thresholds.len(),
                split_count: 0,
            })
            .collect();
        let mut leaf_nodes = 0;
        for tree in &e.trees {
            for (_, node) in tree.nodes() {
                match node {
                    TreeNode::Internal { feature_ref, .. } => features[*feature_ref].split_count += 1,
                    TreeNode::Leaf { .. } => leaf_nodes += 1,
                }
            }
        }
        LayoutSummary {
            n_features: e.n_features,
            features,
            leaf_values: e.tables.leaf_values().len(),
            leaf_nodes,
        }
    }

    pub fn size_report(&self) -> SizeReport {
        let used = self.features.len();
        let max_count = self.features.iter().map(|f| f.threshold_count).max().unwrap_or(0);
        let entry_bits = u64::from(
            ceil_log2(self.n_features) + WIDTH_EXPONENT_BITS + TYPE_BITS + ceil_log2(max_count),
        );
        let map = used as u64 * entry_bits;
        let thresholds: u64 = self
            .features
            .iter()
            .map(|f| f.threshold_count as u64 * u64::from(f.repr.bits()))
            .sum();
        let leaves = self.leaf_values as u64 * LEAF_VALUE_BITS;
        let internal: usize = self.features.iter().map(|f| f.split_count).sum();
        let trees = internal as u64 * (1 + u64::from(ceil_log2(used)))
            + self
                .features
                .iter()
                .map(|f| f.split_count as u64 * u64::from(ceil_log2(f.threshold_count)))
                .sum::<u64>()
            + self.leaf_nodes as u64 * (1 + u64::from(ceil_log2(self.leaf_values)));
        let pad = |bits: u64| bits.div_ceil(8) * 8 - bits;
        let padding = pad(METADATA_BITS) + pad(map) + pad(thresholds) + pad(leaves);
        let total_bits = METADATA_BITS + map + thresholds + leaves + trees + padding;
        SizeReport {
            metadata: METADATA_BITS,
            feature_threshold_map: map,
            global_thresholds: thresholds,
            global_leaf_values: leaves,
            trees,
            padding,
            total_bits,
            total_bytes: total_bits.div_ceil(8),
        }
    }
}

/// Analytic section sizes of `encode(e)`.
pub fn size_report(e: &Ensemble) -> SizeReport {
    LayoutSummary::of(e).size_report()
}

fn task_code(task: TaskKind) -> u64 {
    match task {
        TaskKind::Regression => 0,
        TaskKind::Binary => 1,
        TaskKind::Multiclass { .. } => 2,
    }
}

fn check_field(field: &'static str, value: usize, bits: u32) -> Result<u64, CodecError> {
    let value = value as u64;
    if value >> bits != 0 {
        return Err(CodecError::FieldOverflow { field, value, bits });
    }
    Ok(value)
}

pub fn encode(e: &Ensemble) -> Result<EncodedModel, CodecError> {
    e.validate()?;
    if e.base_score != 0.0 {
        return Err(CodecError::BaseScore(e.base_score));
    }
    let tables = &e.tables;
    let used = tables.features().len();
    let max_count = tables.max_threshold_count();
    let n_leaf_values = tables.leaf_values().len();

    let mut w = BitWriter::new();
    w.write(MAGIC, MAGIC_BITS);
    w.write(VERSION, VERSION_BITS);
    w.write(task_code(e.task), TASK_BITS);
    w.write(check_field("class count", e.class_count(), CLASS_BITS)?, CLASS_BITS);
    w.write(check_field("tree count", e.trees.len(), TREE_COUNT_BITS)?, TREE_COUNT_BITS);
    w.write(check_field("max depth", e.max_depth, DEPTH_BITS)?, DEPTH_BITS);
    w.write(check_field("input features", e.n_features, INPUT_COUNT_BITS)?, INPUT_COUNT_BITS);
    w.write(check_field("used features", used, FEATURE_COUNT_BITS)?, FEATURE_COUNT_BITS);
    w.write(check_field("max threshold count", max_count, MAX_COUNT_BITS)?, MAX_COUNT_BITS);
    w.write(check_field("leaf values", n_leaf_values, LEAF_COUNT_BITS)?, LEAF_COUNT_BITS);
    w.align();

    let index_bits = ceil_log2(e.n_features);
    let count_bits = ceil_log2(max_count);
    for f in tables.features() {
        w.write(f.input_index as u64, index_bits);
        w.write(u64::from(f.repr.width_exponent), WIDTH_EXPONENT_BITS);
        w.write(f.repr.numeric_type.bit(), TYPE_BITS);
        w.write(f.thresholds.len() as u64 - 1, count_bits);
    }
    w.align();

    for f in tables.features() {
        for &t in &f.thresholds {
            let bits = f.repr.encode_value(t).ok_or_else(|| {
                ModelError::Invalid(format!("threshold {t} not representable as {:?}", f.repr))
            })?;
            w.write(bits, f.repr.bits());
        }
    }
    w.align();

    for v in tables.leaf_values() {
        w.write(u64::from(v.to_bits()), LEAF_VALUE_BITS as u32);
    }
    w.align();

    let feature_bits = ceil_log2(used);
    let leaf_bits = ceil_log2(n_leaf_values);
    for tree in &e.trees {
        for (_, node) in tree.nodes() {
            match *node {
                TreeNode::Internal {
                    feature_ref,
                    threshold_ref,
                } => {
                    w.write(0, 1);
                    w.write(feature_ref as u64, feature_bits);
                    let count = tables.feature(feature_ref).thresholds.len();
                    w.write(threshold_ref as u64, ceil_log2(count));
                }
                TreeNode::Leaf { leaf_ref } => {
                    w.write(1, 1);
                    w.write(leaf_ref as u64, leaf_bits);
                }
            }
        }
    }
    let bit_length = w.bit_len();
    w.align();
    Ok(EncodedModel {
        bytes: w.into_bytes(),
        bit_length,
    })
}

struct Decoder<'a> {
    r: BitReader<'a>,
    section: Section,
}

impl Decoder<'_> {
    fn read(&mut self, bits: u32) -> Result<u64, CodecError> {
        let offset = self.r.position();
        self.r.read(bits).ok_or(CodecError::Truncated {
            section: self.section,
            offset,
        })
    }

    fn malformed(&self, offset: u64, message: impl Into<String>) -> CodecError {
        CodecError::Malformed {
            section: self.section,
            offset,
            message: message.into(),
        }
    }

    /// Skips to the byte boundary, requiring zero padding.
    fn end_section(&mut self, next: Section) -> Result<(), CodecError> {
        let offset = self.r.position();
        let pad = (8 - offset % 8) % 8;
        if self.read(pad as u32)? != 0 {
            return Err(self.malformed(offset, "nonzero padding"));
        }
        self.section = next;
        Ok(())
    }
}

pub fn decode(bytes: &[u8]) -> Result<Ensemble, CodecError> {
    let mut d = Decoder {
        r: BitReader::new(bytes),
        section: Section::Metadata,
    };

    let magic = d.read(MAGIC_BITS)?;
    if magic != MAGIC {
        return Err(CodecError::BadMagic { found: magic });
    }
    let at = d.r.position();
    let version = d.read(VERSION_BITS)?;
    if version != VERSION {
        return Err(d.malformed(at, format!("unsupported version {version}")));
    }
    let at = d.r.position();
    let task_code = d.read(TASK_BITS)?;
    let at_classes = d.r.position();
    let classes = d.read(CLASS_BITS)? as usize;
    let task = match (task_code, classes) {
        (0, 1) => TaskKind::Regression,
        (1, 1) => TaskKind::Binary,
        (2, c) if c >= 3 => TaskKind::Multiclass { classes: c },
        (0..=2, c) => return Err(d.malformed(at_classes, format!("class count {c} invalid for task"))),
        (t, _) => return Err(d.malformed(at, format!("unknown task code {t}"))),
    };
    let at = d.r.position();
    let n_trees = d.read(TREE_COUNT_BITS)? as usize;
    if !n_trees.is_multiple_of(classes) {
        return Err(d.malformed(at, format!("{n_trees} trees for {classes} classes")));
    }
    let at = d.r.position();
    let max_depth = d.read(DEPTH_BITS)? as usize;
    if max_depth == 0 || max_depth > MAX_DEPTH {
        return Err(d.malformed(at, format!("max depth {max_depth}")));
    }
    let at = d.r.position();
    let n_features = d.read(INPUT_COUNT_BITS)? as usize;
    if n_features == 0 {
        return Err(d.malformed(at, "zero input features"));
    }
    let at = d.r.position();
    let used = d.read(FEATURE_COUNT_BITS)? as usize;
    if used > n_features {
        return Err(d.malformed(at, format!("{used} used of {n_features} features")));
    }
    let at = d.r.position();
    let max_count = d.read(MAX_COUNT_BITS)? as usize;
    if (used == 0) != (max_count == 0) {
        return Err(d.malformed(at, format!("max threshold count {max_count} with {used} features")));
    }
    let n_leaf_values = d.read(LEAF_COUNT_BITS)? as usize;
    d.end_section(Section::FeatureThresholdMap)?;

    let index_bits = ceil_log2(n_features);
    let count_bits = ceil_log2(max_count);
    let mut entries = Vec::with_capacity(used);
    let mut seen = HashSet::new();
    for _ in 0..used {
        let at = d.r.position();
        let input_index = d.read(index_bits)? as usize;
        if input_index >= n_features || !seen.insert(input_index) {
            return Err(d.malformed(at, format!("bad or repeated input index {input_index}")));
        }
        let at = d.r.position();
        let width_exponent = d.read(WIDTH_EXPONENT_BITS)? as u8;
        let numeric_type = if d.read(TYPE_BITS)? == 0 {
            NumericType::Integer
        } else {
            NumericType::Float
        };
        let repr = ThresholdRepr {
            width_exponent,
            numeric_type,
        };
        if !repr.is_valid() {
            return Err(d.malformed(
                at,
                format!("invalid width exponent {width_exponent} for {numeric_type:?}"),
            ));
        }
        let count = d.read(count_bits)? as usize + 1;
        if count > max_count {
            return Err(d.malformed(at, format!("threshold count {count} above maximum {max_count}")));
        }
        entries.push(FeatureEntry {
            input_index,
            repr,
            thresholds: Vec::with_capacity(count),
        });
        entries.last_mut().unwrap().thresholds.resize(count, 0.0);
    }
    if used > 0 && entries.iter().map(|e| e.thresholds.len()).max() != Some(max_count) {
        return Err(d.malformed(d.r.position(), "max threshold count not attained"));
    }
    d.end_section(Section::GlobalThresholds)?;

    for e in &mut entries {
        let mut keys = HashSet::new();
        for t in e.thresholds.iter_mut() {
            let at = d.r.position();
            let v = e.repr.decode_value(d.read(e.repr.bits())?);
            if !v.is_finite() || !keys.insert(if v == 0.0 { 0 } else { v.to_bits() }) {
                return Err(d.malformed(at, format!("bad or repeated threshold {v}")));
            }
            *t = v;
        }
    }
    d.end_section(Section::GlobalLeafValues)?;

    let mut leaf_values = Vec::with_capacity(n_leaf_values);
    let mut keys = HashSet::new();
    for _ in 0..n_leaf_values {
        let at = d.r.position();
        let v = f32::from_bits(d.read(LEAF_VALUE_BITS as u32)? as u32);
        if !v.is_finite() || !keys.insert(v.to_bits()) || (v == 0.0 && v.is_sign_negative()) {
            return Err(d.malformed(at, format!("bad or repeated leaf value {v}")));
        }
        leaf_values.push(v);
    }
    d.end_section(Section::Trees)?;

    let counts: Vec<usize> = entries.iter().map(|e| e.thresholds.len()).collect();
    let feature_bits = ceil_log2(used);
    let leaf_bits = ceil_log2(n_leaf_values);
    let mut trees = Vec::with_capacity(n_trees);
    for _ in 0..n_trees {
        let mut tree = Tree::new();
        let mut queue = VecDeque::from([0u64]);
        while let Some(i) = queue.pop_front() {
            let at = d.r.position();
            if d.read(1)? == 0 {
                if used == 0 || heap_depth(i) >= max_depth {
                    return Err(d.malformed(at, format!("internal node {i} not allowed here")));
                }
                let feature_ref = d.read(feature_bits)? as usize;
                if feature_ref >= used {
                    return Err(d.malformed(at, format!("feature ref {feature_ref} out of range")));
                }
                let threshold_ref = d.read(ceil_log2(counts[feature_ref]))? as usize;
                if threshold_ref >= counts[feature_ref] {
                    return Err(d.malformed(at, format!("threshold ref {threshold_ref} out of range")));
                }
                tree.insert(
                    i,
                    TreeNode::Internal {
                        feature_ref,
                        threshold_ref,
                    },
                );
                queue.push_back(2 * i + 1);
                queue.push_back(2 * i + 2);
            } else {
                let leaf_ref = d.read(leaf_bits)? as usize;
                if leaf_ref >= n_leaf_values {
                    return Err(d.malformed(at, format!("leaf ref {leaf_ref} out of range")));
                }
                tree.insert(i, TreeNode::Leaf { leaf_ref });
            }
        }
        trees.push(tree);
    }
    let end = d.r.position();
    let pad = (8 - end % 8) % 8;
    if d.read(pad as u32)? != 0 {
        return Err(d.malformed(end, "nonzero padding"));
    }
    if d.r.remaining() != 0 {
        return Err(d.malformed(d.r.position(), "trailing bytes"));
    }

    let e = Ensemble {
        trees,
        tables: GlobalTables::from_parts(entries, leaf_values),
        task,
        n_features,
        max_depth,
        base_score: 0.0,
        learning_rate: None,
    };
    e.validate()?;
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two trees over four inputs: input 0 with two 2-bit integer
    /// thresholds, input 1 with two 1-bit thresholds, input 3 with one
    /// half-precision threshold; one leaf value shared across both trees.
    pub(crate) fn layout_example() -> Ensemble {
        let f1 = FeatureEntry {
            input_index: 0,
            repr: ThresholdRepr::integer(1),
            thresholds: vec![2.0, 1.0],
        };
        let f2 = FeatureEntry {
            input_index: 1,
            repr: ThresholdRepr::integer(0),
            thresholds: vec![0.0, 1.0],
        };
        let f3 = FeatureEntry {
            input_index: 3,
            repr: ThresholdRepr::FLOAT16,
            thresholds: vec![20.5],
        };
        let leaves = vec![1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0];
        let tables = GlobalTables::from_parts(vec![f1, f2, f3], leaves);
        let internal = |feature_ref, threshold_ref| TreeNode::Internal {
            feature_ref,
            threshold_ref,
        };
        let leaf = |leaf_ref| TreeNode::Leaf { leaf_ref };
        let mut t1 = Tree::new();
        t1.insert(0, internal(0, 0));
        t1.insert(1, internal(1, 1));
        t1.insert(2, internal(0, 1));
        t1.insert(3, leaf(0));
        t1.insert(4, leaf(1));
        t1.insert(5, leaf(2));
        t1.insert(6, leaf(3));
        let mut t2 = Tree::new();
        t2.insert(0, internal(2, 0));
        t2.insert(1, leaf(3));
        t2.insert(2, internal(1, 1));
        t2.insert(5, leaf(4));
        t2.insert(6, leaf(5));
        Ensemble {
            trees: vec![t1, t2],
            tables,
            task: TaskKind::Regression,
            n_features: 4,
            max_depth: 2,
            base_score: 0.0,
            learning_rate: None,
        }
    }

    /// Bit string assembled field by field from the layout description.
    fn layout_example_bits() -> String {
        let fields = [
            // metadata
            "11010111", "0001", "00", "00000001", "0000000000000010", "000010",
            "0000000000000100", "000000000011", "000000000010", "000000000110",
            // map: index(2) exp(3) type(1) count-1(1)
            "00", "001", "0", "1",
            "01", "000", "0", "1",
            "11", "100", "1", "0",
            "000", // pad 21 -> 24
            // thresholds: 2, 1 as 2-bit ints; 0, 1 as 1-bit ints; 20.5 as f16 (0x4D20)
            "10", "01", "0", "1", "0100110100100000", "00", // 22 + pad 2
            // leaf values 1..6 as f32
            "00111111100000000000000000000000",
            "01000000000000000000000000000000",
            "01000000010000000000000000000000",
            "01000000100000000000000000000000",
            "01000000101000000000000000000000",
            "01000000110000000000000000000000",
            // t1: n1(f1,mu0) n2(f2,mu1) n3(f1,mu1) l1..l4 -> v1..v4
            "0000", "0011", "0001", "1000", "1001", "1010", "1011",
            // t2: n1(f3,mu0) l1->v4 n3(f2,mu1) l2->v5 l3->v6
            "010", "1011", "0011", "1100", "1101",
        ];
        fields.concat()
    }

    fn pack(bits: &str) -> (Vec<u8>, u64) {
        let mut bytes = vec![0u8; bits.len().div_ceil(8)];
        for (i, c) in bits.bytes().enumerate() {
            if c == b'1' {
                bytes[i / 8] |= 0x80 >> (i % 8);
            }
        }
        (bytes, bits.len() as u64)
    }

    #[test]
    fn layout_example_matches_hand_assembly() {
        let e = layout_example();
        e.validate().unwrap();
        let (bytes, len) = pack(&layout_example_bits());
        let enc = encode(&e).unwrap();
        assert_eq!(enc.bit_length, len);
        assert_eq!(enc.bytes, bytes);

        let back = decode(&bytes).unwrap();
        assert_eq!(back.tables.features().len(), 3);
        assert_eq!(back.trees, e.trees);
        assert_eq!(back.tables, e.tables);
        // n3 of the second tree reuses the second threshold of the 1-bit feature.
        assert_eq!(
            back.trees[1].get(2),
            Some(&TreeNode::Internal {
                feature_ref: 1,
                threshold_ref: 1
            })
        );
        // v4 is shared by leaf l4 of t1 and leaf l1 of t2.
        assert_eq!(back.trees[0].get(6), Some(&TreeNode::Leaf { leaf_ref: 3 }));
        assert_eq!(back.trees[1].get(1), Some(&TreeNode::Leaf { leaf_ref: 3 }));
    }

    #[test]
    fn layout_example_routing() {
        let e = layout_example();
        // t1: x0=3 > 2 -> n3; x0=3 > 1 -> l4 (v4=4). t2: x3=10 <= 20.5 -> l1 (v4=4).
        assert_eq!(e.predict_raw(&[3.0, 0.0, 0.0, 10.0]).unwrap(), vec![8.0]);
        // t1: x0=0 <= 2 -> n2; x1=1 <= 1 -> l1 (1). t2: x3=30 > 20.5 -> n3; x1 <= 1 -> l2 (5).
        assert_eq!(e.predict_raw(&[0.0, 1.0, 7.0, 30.0]).unwrap(), vec![6.0]);
        // t1: x0=2 <= 2, x1=2 > 1 -> l2 (2). t2: x3=21 > 20.5, x1=2 > 1 -> l3 (6).
        assert_eq!(e.predict_raw(&[2.0, 2.0, 0.0, 21.0]).unwrap(), vec![8.0]);
    }

    #[test]
    fn section_sizes() {
        let e = layout_example();
        let r = size_report(&e);
        assert_eq!(r.metadata, 96);
        // 3 entries of 2 + 3 + 1 + 1 bits
        assert_eq!(r.feature_threshold_map, 3 * 7);
        assert_eq!(r.global_thresholds, 2 * 2 + 2 + 16);
        assert_eq!(r.global_leaf_values, 6 * 32);
        // internal: 1 + 2 + ceil(log2 count); leaf: 1 + 3
        assert_eq!(r.trees, (4 + 4 + 4 + 16) + (3 + 4 + 4 + 8));
        assert_eq!(r.padding, 3 + 2);
        assert_eq!(r.total_bits, encode(&e).unwrap().bit_length);
        assert_eq!(r.total_bytes, encode(&e).unwrap().bytes.len() as u64);
    }

    #[test]
    fn empty_ensemble_is_metadata_only() {
        let e = Ensemble::empty(TaskKind::Binary, 5, 3);
        let enc = encode(&e).unwrap();
        assert_eq!(enc.bit_length, METADATA_BITS);
        assert_eq!(enc.bytes.len(), 12);
        let r = size_report(&e);
        assert_eq!(
            (r.feature_threshold_map, r.global_thresholds, r.global_leaf_values, r.trees),
            (0, 0, 0, 0)
        );
        let back = decode(&enc.bytes).unwrap();
        assert!(back.trees.is_empty());
        assert_eq!(back.n_features, 5);
    }

    #[test]
    fn single_leaf_tree_costs_one_bit() {
        let mut e = Ensemble::empty(TaskKind::Regression, 2, 1);
        let v = e.tables.intern_leaf_value(0.5).unwrap();
        e.trees.push(Tree::single_leaf(v));
        let r = size_report(&e);
        assert_eq!(r.trees, 1);
        let enc = encode(&e).unwrap();
        assert_eq!(enc.bit_length, 96 + 32 + 1);
        assert_eq!(enc.bytes.len(), 17);
        assert_eq!(decode(&enc.bytes).unwrap().trees, e.trees);
    }

    #[test]
    fn merging_equal_thresholds_shrinks_model() {
        // Same trees; in `split` the two nodes use separate (equal-valued)
        // threshold slots of different features, in `merged` one slot.
        let mut merged = Ensemble::empty(TaskKind::Regression, 2, 2);
        let (f, _) = merged.tables.intern_feature(0);
        merged.tables.intern_threshold(f, 1.0).unwrap();
        merged.tables.intern_leaf_value(1.0).unwrap();
        let mut t = Tree::new();
        t.insert(0, TreeNode::Internal { feature_ref: 0, threshold_ref: 0 });
        t.insert(1, TreeNode::Internal { feature_ref: 0, threshold_ref: 0 });
        t.insert(2, TreeNode::Leaf { leaf_ref: 0 });
        t.insert(3, TreeNode::Leaf { leaf_ref: 0 });
        t.insert(4, TreeNode::Leaf { leaf_ref: 0 });
        merged.trees.push(t.clone());

        let mut split = merged.clone();
        let (g, _) = split.tables.intern_feature(1);
        split.tables.intern_threshold(g, 1.0).unwrap();
        split.trees[0].insert(1, TreeNode::Internal { feature_ref: 1, threshold_ref: 0 });
        assert!(size_report(&merged).total_bits < size_report(&split).total_bits);
    }

    #[test]
    fn decode_rejects_corruption() {
        let e = layout_example();
        let enc = encode(&e).unwrap();

        let mut bad = enc.bytes.clone();
        bad[0] = 0x00;
        assert_eq!(decode(&bad).unwrap_err(), CodecError::BadMagic { found: 0 });

        let cut = &enc.bytes[..enc.bytes.len() - 2];
        match decode(cut).unwrap_err() {
            CodecError::Truncated { section, offset } => {
                assert_eq!(section, Section::Trees);
                assert!(offset >= 8 * cut.len() as u64 - 16);
            }
            other => panic!("{other:?}"),
        }

        let mut extra = enc.bytes.clone();
        extra.push(0);
        assert!(matches!(decode(&extra), Err(CodecError::Malformed { .. })));

        // width exponent 7 in the first map entry (bits 98..101)
        let mut bad = enc.bytes.clone();
        bad[12] |= 0b0011_1000;
        let err = decode(&bad).unwrap_err();
        assert!(matches!(err, CodecError::Malformed { section: Section::FeatureThresholdMap, .. }), "{err:?}");
        assert_eq!(err.offset(), Some(98));
    }

    #[test]
    fn encode_rejects_unrepresentable_and_overflow() {
        let mut e = layout_example();
        let mut f = e.tables.features().to_vec();
        f[0].thresholds[0] = 4.0; // needs 3 bits, stored in 2
        e.tables = GlobalTables::from_parts(f, e.tables.leaf_values().to_vec());
        assert!(matches!(encode(&e), Err(CodecError::Invalid(_))));

        let mut e = Ensemble::empty(TaskKind::Regression, 70_000, 1);
        e.max_depth = 1;
        assert!(matches!(
            encode(&e),
            Err(CodecError::FieldOverflow { field: "input features", .. })
        ));

        let mut e = Ensemble::empty(TaskKind::Regression, 1, 1);
        e.base_score = 0.5;
        assert_eq!(encode(&e), Err(CodecError::BaseScore(0.5)));
    }
}
