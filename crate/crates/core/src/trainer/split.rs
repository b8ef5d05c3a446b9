//! Split gains, histograms over candidate thresholds and split search.

use serde::Serialize;

use crate::data::{CandidateSet, Dataset};
use crate::model::GlobalTables;

use super::grad::{GradPair, GradStats};
use super::TrainConfig;

/// A scored split of one leaf.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainResult {
    /// Unpenalized gain.
    pub delta: f64,
    /// Gain after the feature and threshold penalties.
    pub delta_l: f64,
    pub s_f: bool,
    pub s_t: bool,
    pub feature: usize,
    pub threshold: f64,
    pub left_rows: Vec<usize>,
    pub right_rows: Vec<usize>,
}

/// Unpenalized gain of splitting `left + right` into its two parts, or
/// `None` when a side has no positive curvature.
pub(crate) fn split_gain(left: GradPair, right: GradPair, lambda: f64, gamma: f64) -> Option<f64> {
    Parent::new(left + right, lambda).gain(left, right, lambda, gamma)
}

/// The parent term of the gain, shared by all splits of one leaf.
#[derive(Debug, Clone, Copy)]
struct Parent {
    h: f64,
    term: f64,
}

impl Parent {
    fn new(total: GradPair, lambda: f64) -> Self {
        let (g, h) = (total.g(), total.h() + lambda);
        Parent { h, term: g * g / h }
    }

    fn gain(&self, left: GradPair, right: GradPair, lambda: f64, gamma: f64) -> Option<f64> {
        let (gl, hl) = (left.g(), left.h() + lambda);
        let (gr, hr) = (right.g(), right.h() + lambda);
        if !(hl > 0.0 && hr > 0.0 && self.h > 0.0) {
            return None;
        }
        Some(0.5 * (gl * gl / hl + gr * gr / hr - self.term) - gamma)
    }
}

pub(crate) fn penalized(delta: f64, s_f: bool, s_t: bool, iota: f64, xi: f64) -> f64 {
    (delta - f64::from(u8::from(s_f)) * iota) - f64::from(u8::from(s_t)) * xi
}

/// Dataset columns mapped to candidate bins: a value lands in bin `k`
/// when exactly `k` candidates lie below it, so split `k` sends bins
/// `0..=k` left.
pub(crate) struct Binned<'a> {
    pub candidates: &'a CandidateSet,
    pub bins: Vec<Vec<u32>>,
    pub offsets: Vec<usize>,
    /// Distinct training values per feature, ascending.
    pub values: Vec<Vec<f64>>,
}

impl<'a> Binned<'a> {
    pub fn new(ds: &'a Dataset, candidates: &'a CandidateSet) -> Self {
        let d = ds.n_features();
        let mut bins = Vec::with_capacity(d);
        let mut offsets = Vec::with_capacity(d + 1);
        let mut values = Vec::with_capacity(d);
        offsets.push(0);
        for f in 0..d {
            let cands = candidates.feature(f);
            let col = ds.column(f);
            bins.push(
                col.iter()
                    .map(|&x| cands.partition_point(|&c| c < x) as u32)
                    .collect(),
            );
            offsets.push(offsets[f] + cands.len() + 1);
            let mut v = col;
            v.sort_by(f64::total_cmp);
            v.dedup();
            values.push(v);
        }
        Binned {
            candidates,
            bins,
            offsets,
            values,
        }
    }

    pub fn n_features(&self) -> usize {
        self.bins.len()
    }

    pub fn histogram(&self, fixed: &[GradPair], rows: &[u32]) -> Vec<GradPair> {
        let mut hist = vec![GradPair::default(); *self.offsets.last().unwrap()];
        for (f, col) in self.bins.iter().enumerate() {
            let h = &mut hist[self.offsets[f]..self.offsets[f + 1]];
            for &r in rows {
                h[col[r as usize] as usize] += fixed[r as usize];
            }
        }
        hist
    }

    /// Splits `rows` by split `k` of feature `f`, keeping row order.
    pub fn partition(&self, rows: &[u32], f: usize, k: usize) -> (Vec<u32>, Vec<u32>) {
        let col = &self.bins[f];
        rows.iter().partition(|&&r| col[r as usize] as usize <= k)
    }
}

/// Which features and candidate thresholds are already in the global tables.
pub(crate) struct ReuseMask {
    features: Vec<bool>,
    thresholds: Vec<Vec<bool>>,
}

impl ReuseMask {
    pub fn new(tables: &GlobalTables, candidates: &CandidateSet) -> Self {
        let mut mask = ReuseMask {
            features: vec![false; candidates.n_features()],
            thresholds: (0..candidates.n_features())
                .map(|f| vec![false; candidates.feature(f).len()])
                .collect(),
        };
        for e in tables.features() {
            mask.features[e.input_index] = true;
            for &t in &e.thresholds {
                if let Some(k) = candidates.index_of(e.input_index, t) {
                    mask.thresholds[e.input_index][k] = true;
                }
            }
        }
        mask
    }

    pub fn mark(&mut self, f: usize, k: usize) {
        self.features[f] = true;
        self.thresholds[f][k] = true;
    }

    fn flags(&self, f: usize, k: usize) -> (bool, bool) {
        let s_f = !self.features[f];
        (s_f, s_f || !self.thresholds[f][k])
    }
}

/// Best split found in a histogram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Candidate {
    pub feature: usize,
    pub bin: usize,
    pub delta: f64,
    pub delta_l: f64,
    pub s_f: bool,
    pub s_t: bool,
}

impl Candidate {
    /// Higher penalized gain, then lower feature, then lower threshold.
    fn beats(&self, other: &Candidate) -> bool {
        self.delta_l > other.delta_l
            || (self.delta_l == other.delta_l && (self.feature, self.bin) < (other.feature, other.bin))
    }
}

fn pick(a: Option<Candidate>, b: Option<Candidate>) -> Option<Candidate> {
    match (a, b) {
        (Some(x), Some(y)) => Some(if y.beats(&x) { y } else { x }),
        (x, None) => x,
        (None, y) => y,
    }
}

/// Best split on feature `f`, before the `min_gain` cut.
fn scan_feature(
    binned: &Binned,
    hist: &[GradPair],
    total: GradPair,
    parent: Parent,
    mask: &ReuseMask,
    cfg: &TrainConfig,
    f: usize,
) -> Option<Candidate> {
    let h = &hist[binned.offsets[f]..binned.offsets[f + 1]];
    let mut best: Option<Candidate> = None;
    let mut left = GradPair::default();
    // gain of the current partition, reused across empty bins
    let mut delta: Option<Option<f64>> = None;
    for (k, &b) in h[..h.len() - 1].iter().enumerate() {
        if b.n > 0 {
            left += b;
            delta = None;
        }
        if left.n == 0 {
            continue;
        }
        if left.n == total.n {
            break;
        }
        let d = *delta.get_or_insert_with(|| parent.gain(left, total - left, cfg.lambda, cfg.gamma));
        let Some(d) = d else { continue };
        let (s_f, s_t) = mask.flags(f, k);
        let delta_l = penalized(d, s_f, s_t, cfg.iota, cfg.xi);
        if best.is_none_or(|c| delta_l > c.delta_l) {
            best = Some(Candidate {
                feature: f,
                bin: k,
                delta: d,
                delta_l,
                s_f,
                s_t,
            });
        }
    }
    best
}

/// Highest penalized gain above `min_gain`; ties keep the lower feature,
/// then the lower threshold.
pub(crate) fn scan(
    binned: &Binned,
    hist: &[GradPair],
    total: GradPair,
    mask: &ReuseMask,
    cfg: &TrainConfig,
) -> Option<Candidate> {
    let parent = Parent::new(total, cfg.lambda);
    (0..binned.n_features())
        .map(|f| scan_feature(binned, hist, total, parent, mask, cfg, f))
        .fold(None, pick)
        .filter(|c| c.delta_l > cfg.min_gain)
}

/// Updates a leaf's best split after feature `f` gained a used threshold.
/// Only candidates on `f` can have become cheaper, and only upwards.
pub(crate) fn rescan_feature(
    binned: &Binned,
    hist: &[GradPair],
    total: GradPair,
    mask: &ReuseMask,
    cfg: &TrainConfig,
    current: Option<Candidate>,
    f: usize,
) -> Option<Candidate> {
    let parent = Parent::new(total, cfg.lambda);
    let on_f = scan_feature(binned, hist, total, parent, mask, cfg, f).filter(|c| c.delta_l > cfg.min_gain);
    match current {
        Some(c) if c.feature == f => on_f,
        other => pick(other, on_f),
    }
}

/// Scores splitting `rows` at `x[feature] <= mu` against the current
/// tables without modifying them. `None` when a side is empty or has no
/// positive curvature.
pub fn evaluate_split(
    ds: &Dataset,
    rows: &[usize],
    feature: usize,
    mu: f64,
    grads: &GradStats,
    cfg: &TrainConfig,
    tables: &GlobalTables,
) -> Option<GainResult> {
    let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
        rows.iter().partition(|&&r| ds.value(r, feature) <= mu);
    if left_rows.is_empty() || right_rows.is_empty() {
        return None;
    }
    let delta = split_gain(
        grads.sum_fixed(left_rows.iter().copied()),
        grads.sum_fixed(right_rows.iter().copied()),
        cfg.lambda,
        cfg.gamma,
    )?;
    let fref = tables.find_feature(feature);
    let s_f = fref.is_none();
    let s_t = fref.is_none_or(|i| tables.find_threshold(i, mu).is_none());
    Some(GainResult {
        delta,
        delta_l: penalized(delta, s_f, s_t, cfg.iota, cfg.xi),
        s_f,
        s_t,
        feature,
        threshold: mu,
        left_rows,
        right_rows,
    })
}

/// Best candidate split of `rows` by penalized gain, or `None` if no split
/// beats `cfg.min_gain`.
pub fn best_split(
    ds: &Dataset,
    rows: &[usize],
    candidates: &CandidateSet,
    grads: &GradStats,
    cfg: &TrainConfig,
    tables: &GlobalTables,
) -> Option<GainResult> {
    let binned = Binned::new(ds, candidates);
    let rows32: Vec<u32> = rows.iter().map(|&r| r as u32).collect();
    let hist = binned.histogram(grads.fixed(), &rows32);
    let total = grads.sum_fixed(rows.iter().copied());
    let c = scan(&binned, &hist, total, &ReuseMask::new(tables, candidates), cfg)?;
    let mu = candidates.feature(c.feature)[c.bin];
    let (left_rows, right_rows) = rows.iter().partition(|&&r| ds.value(r, c.feature) <= mu);
    Some(GainResult {
        delta: c.delta,
        delta_l: c.delta_l,
        s_f: c.s_f,
        s_t: c.s_t,
        feature: c.feature,
        threshold: mu,
        left_rows,
        right_rows,
    })
}
