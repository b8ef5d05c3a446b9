//! Leaf-wise growth of one tree under the penalized gain.

use crate::model::{heap_depth, GlobalTables, Tree, TreeNode};

use super::grad::{GradPair, GradStats};
use super::split::{rescan_feature, scan, Binned, Candidate, ReuseMask};
use super::{leaf_value, TrainConfig, TrainError};

pub(crate) struct Grown {
    pub tree: Tree,
    /// Rows reaching each leaf and the stored value they receive.
    pub leaves: Vec<(Vec<u32>, f32)>,
}

struct Open {
    index: u64,
    rows: Vec<u32>,
    total: GradPair,
    hist: Vec<GradPair>,
    best: Option<Candidate>,
}

fn sum(fixed: &[GradPair], rows: &[u32]) -> GradPair {
    rows.iter().fold(GradPair::default(), |acc, &r| acc + fixed[r as usize])
}

/// Repeatedly applies the best split among all open leaves, interning
/// each used feature and threshold, then interns the leaf values.
pub(crate) fn grow(
    binned: &Binned,
    grads: &GradStats,
    rows: Vec<u32>,
    cfg: &TrainConfig,
    tables: &mut GlobalTables,
) -> Result<Grown, TrainError> {
    let fixed = grads.fixed();
    let mut mask = ReuseMask::new(tables, binned.candidates);
    let mut tree = Tree::new();
    let mut open: Vec<Open> = Vec::new();
    let mut closed: Vec<(u64, Vec<u32>, GradPair)> = Vec::new();

    let mut admit = |open: &mut Vec<Open>, mask: &ReuseMask, index: u64, rows: Vec<u32>, total: GradPair, hist: Option<Vec<GradPair>>| {
        if heap_depth(index) < cfg.max_depth {
            let hist = hist.unwrap_or_else(|| binned.histogram(fixed, &rows));
            let best = scan(binned, &hist, total, mask, cfg);
            open.push(Open {
                index,
                rows,
                total,
                hist,
                best,
            });
        } else {
            closed.push((index, rows, total));
        }
    };

    let total = sum(fixed, &rows);
    admit(&mut open, &mask, 0, rows, total, None);

    loop {
        let pick = open
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.best.map(|b| (i, b.delta_l, l.index)))
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.2.cmp(&a.2)));
        let Some((i, _, _)) = pick else { break };
        let leaf = open.swap_remove(i);
        let c = leaf.best.expect("picked leaf has a split");

        let mu = binned.candidates.feature(c.feature)[c.bin];
        let (feature_ref, new_feature) = tables.intern_feature(c.feature);
        let (threshold_ref, new_threshold) = tables.intern_threshold(feature_ref, mu)?;
        tree.insert(
            leaf.index,
            TreeNode::Internal {
                feature_ref,
                threshold_ref,
            },
        );
        if new_feature || new_threshold {
            mask.mark(c.feature, c.bin);
            for o in open.iter_mut() {
                o.best = rescan_feature(binned, &o.hist, o.total, &mask, cfg, o.best, c.feature);
            }
        }

        let (left, right) = binned.partition(&leaf.rows, c.feature, c.bin);
        let left_total = sum(fixed, &left);
        let right_total = leaf.total - left_total;
        let (li, ri) = (2 * leaf.index + 1, 2 * leaf.index + 2);
        if heap_depth(li) < cfg.max_depth {
            let small_is_left = left.len() <= right.len();
            let small = binned.histogram(fixed, if small_is_left { &left } else { &right });
            let mut large = leaf.hist;
            for (l, s) in large.iter_mut().zip(&small) {
                *l = *l - *s;
            }
            let (lh, rh) = if small_is_left { (small, large) } else { (large, small) };
            admit(&mut open, &mask, li, left, left_total, Some(lh));
            admit(&mut open, &mask, ri, right, right_total, Some(rh));
        } else {
            admit(&mut open, &mask, li, left, left_total, None);
            admit(&mut open, &mask, ri, right, right_total, None);
        }
    }

    let mut leaves: Vec<(u64, Vec<u32>, GradPair)> = closed;
    leaves.extend(open.into_iter().map(|o| (o.index, o.rows, o.total)));
    leaves.sort_by_key(|l| l.0);
    let mut assigned = Vec::with_capacity(leaves.len());
    for (index, rows, total) in leaves {
        let v = if total.h() + cfg.lambda > 0.0 {
            leaf_value(total.g(), total.h(), cfg.lambda, cfg.learning_rate)?
        } else {
            0.0
        };
        let leaf_ref = tables.intern_leaf_value(v)?;
        tree.insert(index, TreeNode::Leaf { leaf_ref });
        assigned.push((rows, tables.leaf_values()[leaf_ref]));
    }
    Ok(Grown {
        tree,
        leaves: assigned,
    })
}
