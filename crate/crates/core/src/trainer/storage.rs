//! Narrowest threshold storage that routes every training value the same way.

use half::f16;

use crate::codec::{FeatureLayout, LayoutSummary};
use crate::model::{GlobalTables, NumericType, ThresholdRepr, Tree, TreeNode};

/// Alternative encodings of one threshold `mu`. Any value in
/// `[lo, hi)`, where `lo` is the largest training value `<= mu` and `hi`
/// the next one, sends the same training rows left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct ThresholdFit {
    mu: f64,
    int: Option<f64>,
    half: Option<f64>,
}

fn f16_step_up(x: f16) -> f16 {
    let b = x.to_bits();
    if b == 0x8000 {
        f16::from_bits(1)
    } else if b & 0x8000 == 0 {
        f16::from_bits(b + 1)
    } else {
        f16::from_bits(b - 1)
    }
}

impl ThresholdFit {
    pub fn new(sorted_values: &[f64], mu: f64) -> Self {
        let p = sorted_values.partition_point(|v| *v <= mu);
        let lo = if p == 0 { f64::NEG_INFINITY } else { sorted_values[p - 1] };
        let hi = sorted_values.get(p).copied().unwrap_or(f64::INFINITY);
        let inside = |q: f64| q.is_finite() && lo <= q && q < hi;

        let q = lo.ceil().max(0.0);
        let int = (inside(q) && q <= f64::from(u32::MAX)).then_some(q);

        let near = f16::from_f64(mu).to_f64();
        let half = if inside(near) {
            Some(near)
        } else if lo.is_finite() {
            let mut q = f16::from_f64(lo);
            if q.to_f64() < lo {
                q = f16_step_up(q);
            }
            Some(q.to_f64()).filter(|q| inside(*q))
        } else {
            None
        };
        ThresholdFit { mu, int, half }
    }

    fn value(&self, repr: ThresholdRepr) -> f64 {
        match (repr.numeric_type, repr.width_exponent) {
            (NumericType::Integer, _) => self.int.expect("integer storage chosen without a fit"),
            (NumericType::Float, 4) => self.half.expect("half storage chosen without a fit"),
            _ => self.mu,
        }
    }
}

fn int_exponent(q: f64) -> u8 {
    let bits = (64 - (q as u64).leading_zeros()).max(1);
    bits.next_power_of_two().trailing_zeros() as u8
}

/// Smallest storage fitting every threshold; integers win ties.
pub(crate) fn choose_repr(fits: &[ThresholdFit]) -> ThresholdRepr {
    let int_e = fits
        .iter()
        .map(|f| f.int.map(int_exponent))
        .collect::<Option<Vec<u8>>>()
        .map(|e| e.into_iter().max().unwrap_or(0));
    match int_e {
        Some(e) if e <= 4 => ThresholdRepr::integer(e),
        _ if fits.iter().all(|f| f.half.is_some()) => ThresholdRepr::FLOAT16,
        Some(e) => ThresholdRepr::integer(e),
        None => ThresholdRepr::FLOAT32,
    }
}

/// Threshold fits and node counts mirroring the global tables while
/// training, so the final encoded size is known before widths are fixed.
#[derive(Debug, Clone, Default)]
pub(crate) struct StorageState {
    fits: Vec<Vec<ThresholdFit>>,
    split_counts: Vec<usize>,
    leaf_nodes: usize,
}

impl StorageState {
    /// Computes fits for thresholds interned since the last call.
    pub fn sync(&mut self, tables: &GlobalTables, values: &[Vec<f64>]) {
        for (i, e) in tables.features().iter().enumerate() {
            if i == self.fits.len() {
                self.fits.push(Vec::new());
                self.split_counts.push(0);
            }
            let fits = &mut self.fits[i];
            for &mu in &e.thresholds[fits.len()..] {
                fits.push(ThresholdFit::new(&values[e.input_index], mu));
            }
        }
    }

    pub fn count(&mut self, tree: &Tree) {
        for (_, node) in tree.nodes() {
            match node {
                TreeNode::Internal { feature_ref, .. } => self.split_counts[*feature_ref] += 1,
                TreeNode::Leaf { .. } => self.leaf_nodes += 1,
            }
        }
    }

    pub fn summary(&self, tables: &GlobalTables, n_features: usize) -> LayoutSummary {
        LayoutSummary {
            n_features,
            features: self
                .fits
                .iter()
                .zip(&self.split_counts)
                .map(|(fits, &split_count)| FeatureLayout {
                    repr: choose_repr(fits),
                    threshold_count: fits.len(),
                    split_count,
                })
                .collect(),
            leaf_values: tables.leaf_values().len(),
            leaf_nodes: self.leaf_nodes,
        }
    }

    /// Rewrites every feature's thresholds in its chosen storage.
    pub fn finalize(&self, tables: &mut GlobalTables) {
        for (i, fits) in self.fits.iter().enumerate() {
            let repr = choose_repr(fits);
            let values = fits.iter().map(|f| f.value(repr)).collect();
            tables.set_feature_storage(i, repr, values);
        }
    }
}
