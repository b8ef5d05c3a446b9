//! Shared fixtures: the bundled datasets and a plain depth-first
//! reference booster without any reuse penalties.

#![allow(dead_code)]

use std::path::PathBuf;

use tinygbdt::data::{load_csv, CandidateSet, Dataset, LabelColumn, TaskKind};
use tinygbdt::model::{Ensemble, TreeNode};

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

pub fn breast_cancer() -> Dataset {
    load_csv(data_path("breast_cancer.csv"), &LabelColumn::Name("diagnosis".into()), TaskKind::Binary).unwrap()
}

pub fn wine() -> Dataset {
    load_csv(
        data_path("wine.csv"),
        &LabelColumn::Name("cultivar".into()),
        TaskKind::Multiclass { classes: 3 },
    )
    .unwrap()
}

pub fn diabetes() -> Dataset {
    load_csv(data_path("diabetes.csv"), &LabelColumn::Name("progression".into()), TaskKind::Regression).unwrap()
}

pub fn corpus() -> Vec<(&'static str, Dataset)> {
    vec![("breast_cancer", breast_cancer()), ("diabetes", diabetes()), ("wine", wine())]
}

const SCALE_BITS: i32 = 52;

#[derive(Clone, Copy, Default)]
struct Sum {
    g: i128,
    h: i128,
}

impl Sum {
    fn add(&mut self, g: f64, h: f64) {
        self.g += (g * 2f64.powi(SCALE_BITS)).round() as i128;
        self.h += (h * 2f64.powi(SCALE_BITS)).round() as i128;
    }

    fn minus(self, o: Sum) -> Sum {
        Sum {
            g: self.g - o.g,
            h: self.h - o.h,
        }
    }

    fn gh(self) -> (f64, f64) {
        (
            self.g as f64 * 2f64.powi(-SCALE_BITS),
            self.h as f64 * 2f64.powi(-SCALE_BITS),
        )
    }
}

#[derive(Debug, Clone)]
pub enum RefNode {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<RefNode>,
        right: Box<RefNode>,
    },
    Leaf(f32),
}

impl RefNode {
    pub fn predict(&self, x: &[f64]) -> f32 {
        match self {
            RefNode::Leaf(v) => *v,
            RefNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if x[*feature] <= *threshold {
                    left.predict(x)
                } else {
                    right.predict(x)
                }
            }
        }
    }

    fn is_leaf(&self) -> bool {
        matches!(self, RefNode::Leaf(_))
    }

    /// (heap index, input feature or leaf bits) in heap order.
    pub fn shape(&self) -> Vec<(u64, Result<usize, u32>)> {
        let mut out = Vec::new();
        let mut stack = vec![(0u64, self)];
        while let Some((i, n)) = stack.pop() {
            match n {
                RefNode::Leaf(v) => out.push((i, Err(v.to_bits()))),
                RefNode::Split { feature, left, right, .. } => {
                    out.push((i, Ok(*feature)));
                    stack.push((2 * i + 1, left));
                    stack.push((2 * i + 2, right));
                }
            }
        }
        out.sort_by_key(|p| p.0);
        out
    }
}

pub fn model_shape(e: &Ensemble, tree: usize) -> Vec<(u64, Result<usize, u32>)> {
    e.trees[tree]
        .nodes()
        .map(|(i, n)| match *n {
            TreeNode::Internal { feature_ref, .. } => (i, Ok(e.tables.feature(feature_ref).input_index)),
            TreeNode::Leaf { leaf_ref } => (i, Err(e.tables.leaf_values()[leaf_ref].to_bits())),
        })
        .collect()
}

pub struct RefParams {
    pub learning_rate: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub iterations: usize,
    pub depth: usize,
}

fn grow(
    ds: &Dataset,
    rows: &[usize],
    g: &[f64],
    h: &[f64],
    cands: &CandidateSet,
    p: &RefParams,
    depth: usize,
) -> RefNode {
    let mut total = Sum::default();
    for &r in rows {
        total.add(g[r], h[r]);
    }
    let mut best: Option<(f64, usize, f64)> = None;
    if depth < p.depth {
        for f in 0..ds.n_features() {
            let mut sorted = rows.to_vec();
            sorted.sort_by(|a, b| ds.value(*a, f).total_cmp(&ds.value(*b, f)));
            let mut left = Sum::default();
            let mut taken = 0;
            for &mu in cands.feature(f) {
                while taken < sorted.len() && ds.value(sorted[taken], f) <= mu {
                    left.add(g[sorted[taken]], h[sorted[taken]]);
                    taken += 1;
                }
                if taken == 0 {
                    continue;
                }
                if taken == sorted.len() {
                    break;
                }
                let (gl, hl) = left.gh();
                let (gr, hr) = total.minus(left).gh();
                let (gt, ht) = total.gh();
                let (hl, hr, ht) = (hl + p.lambda, hr + p.lambda, ht + p.lambda);
                if !(hl > 0.0 && hr > 0.0 && ht > 0.0) {
                    continue;
                }
                let gain = 0.5 * (gl * gl / hl + gr * gr / hr - gt * gt / ht) - p.gamma;
                if best.is_none_or(|b| gain > b.0) {
                    best = Some((gain, f, mu));
                }
            }
        }
    }
    match best {
        Some((gain, f, mu)) if gain > 0.0 => {
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&r| ds.value(r, f) <= mu);
            RefNode::Split {
                feature: f,
                threshold: mu,
                left: Box::new(grow(ds, &l, g, h, cands, p, depth + 1)),
                right: Box::new(grow(ds, &r, g, h, cands, p, depth + 1)),
            }
        }
        _ => {
            let (gt, ht) = total.gh();
            let v = if ht + p.lambda > 0.0 {
                p.learning_rate * (-gt / (ht + p.lambda))
            } else {
                0.0
            };
            let v = v as f32;
            RefNode::Leaf(if v == 0.0 { 0.0 } else { v })
        }
    }
}

fn gradients(task: TaskKind, y: &[f64], scores: &[f64]) -> Vec<(Vec<f64>, Vec<f64>)> {
    let k = task.class_count();
    let mut out = vec![(Vec::new(), Vec::new()); k];
    for (i, &yi) in y.iter().enumerate() {
        let s = &scores[i * k..(i + 1) * k];
        match task {
            TaskKind::Regression => {
                out[0].0.push(s[0] - yi);
                out[0].1.push(1.0);
            }
            TaskKind::Binary => {
                let p = 1.0 / (1.0 + (-s[0]).exp());
                out[0].0.push(p - yi);
                out[0].1.push(p * (1.0 - p));
            }
            TaskKind::Multiclass { .. } => {
                let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for c in 0..k {
                    let p = e[c] / z;
                    out[c].0.push(p - if yi as usize == c { 1.0 } else { 0.0 });
                    out[c].1.push(p * (1.0 - p));
                }
            }
        }
    }
    out
}

/// Trees in boosting order (class-major within a round), stopping after a
/// round of single leaves like the library trainer.
pub fn reference_train(ds: &Dataset, cands: &CandidateSet, p: &RefParams) -> Vec<RefNode> {
    let k = ds.task().class_count();
    let n = ds.n_rows();
    let rows: Vec<usize> = (0..n).collect();
    let mut scores = vec![0.0; n * k];
    let mut trees = Vec::new();
    for _ in 0..p.iterations {
        let grads = gradients(ds.task(), ds.labels(), &scores);
        let round: Vec<RefNode> = grads
            .iter()
            .map(|(g, h)| grow(ds, &rows, g, h, cands, p, 0))
            .collect();
        let stumps = round.iter().all(RefNode::is_leaf);
        if stumps && !trees.is_empty() {
            break;
        }
        for (c, t) in round.into_iter().enumerate() {
            for r in 0..n {
                scores[r * k + c] += f64::from(t.predict(ds.row(r)));
            }
            trees.push(t);
        }
        if stumps {
            break;
        }
    }
    trees
}

pub fn reference_predict(trees: &[RefNode], k: usize, x: &[f64]) -> Vec<f64> {
    let mut s = vec![0.0; k];
    for (j, t) in trees.iter().enumerate() {
        s[j % k] += f64::from(t.predict(x));
    }
    s
}
