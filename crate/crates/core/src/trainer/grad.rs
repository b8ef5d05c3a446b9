//! Per-row loss derivatives and their exact sums.

use std::ops::{Add, AddAssign, Sub};

use crate::data::TaskKind;
use crate::model::{logistic, softmax};

use super::TrainError;

/// Gradients are summed as integers in units of 2^-FIXED_BITS, so every
/// summation order (histograms, subtraction, sweeps) gives the same total.
pub(crate) const FIXED_BITS: i32 = 52;
/// Largest accepted magnitude of a single g or h.
pub const MAX_GRADIENT: f64 = (1u64 << 40) as f64;

fn to_fixed(x: f64) -> i128 {
    (x * 2f64.powi(FIXED_BITS)).round() as i128
}

fn from_fixed(x: i128) -> f64 {
    x as f64 * 2f64.powi(-FIXED_BITS)
}

/// Exact (G, H, count) aggregate over a set of rows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub(crate) struct GradPair {
    pub g: i128,
    pub h: i128,
    pub n: u32,
}

impl GradPair {
    pub fn g(&self) -> f64 {
        from_fixed(self.g)
    }

    pub fn h(&self) -> f64 {
        from_fixed(self.h)
    }
}

impl Add for GradPair {
    type Output = GradPair;
    fn add(self, o: GradPair) -> GradPair {
        GradPair {
            g: self.g + o.g,
            h: self.h + o.h,
            n: self.n + o.n,
        }
    }
}

impl AddAssign for GradPair {
    fn add_assign(&mut self, o: GradPair) {
        *self = *self + o;
    }
}

impl Sub for GradPair {
    type Output = GradPair;
    fn sub(self, o: GradPair) -> GradPair {
        GradPair {
            g: self.g - o.g,
            h: self.h - o.h,
            n: self.n - o.n,
        }
    }
}

/// First and second derivatives of the loss for each row, for one
/// output score.
#[derive(Debug, Clone, PartialEq)]
pub struct GradStats {
    g: Vec<f64>,
    h: Vec<f64>,
    fixed: Vec<GradPair>,
}

impl GradStats {
    pub fn new(g: Vec<f64>, h: Vec<f64>) -> Result<Self, TrainError> {
        if g.len() != h.len() {
            return Err(TrainError::InvalidConfig(format!(
                "{} gradients but {} hessians",
                g.len(),
                h.len()
            )));
        }
        let mut fixed = Vec::with_capacity(g.len());
        for (row, (&gi, &hi)) in g.iter().zip(&h).enumerate() {
            if !(gi.abs() <= MAX_GRADIENT) || !(0.0..=MAX_GRADIENT).contains(&hi) {
                return Err(TrainError::Gradient { row, g: gi, h: hi });
            }
            fixed.push(GradPair {
                g: to_fixed(gi),
                h: to_fixed(hi),
                n: 1,
            });
        }
        Ok(GradStats { g, h, fixed })
    }

    pub fn g(&self) -> &[f64] {
        &self.g
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    /// (G_S, H_S) over `rows`.
    pub fn sum<I: IntoIterator<Item = usize>>(&self, rows: I) -> (f64, f64) {
        let p = self.sum_fixed(rows);
        (p.g(), p.h())
    }

    pub(crate) fn sum_fixed<I: IntoIterator<Item = usize>>(&self, rows: I) -> GradPair {
        rows.into_iter().fold(GradPair::default(), |acc, r| acc + self.fixed[r])
    }

    pub(crate) fn fixed(&self) -> &[GradPair] {
        &self.fixed
    }
}

/// Gradients at `raw_scores` (row-major, one score per class), one
/// [`GradStats`] per output.
pub fn compute_gradients(
    task: TaskKind,
    labels: &[f64],
    raw_scores: &[f64],
) -> Result<Vec<GradStats>, TrainError> {
    let k = task.class_count();
    if raw_scores.len() != labels.len() * k {
        return Err(TrainError::InvalidConfig(format!(
            "{} scores for {} rows and {k} outputs",
            raw_scores.len(),
            labels.len()
        )));
    }
    if let Some(i) = raw_scores.iter().position(|s| !s.is_finite()) {
        return Err(TrainError::NonFiniteScore { row: i / k });
    }
    let n = labels.len();
    let mut g = vec![Vec::with_capacity(n); k];
    let mut h = vec![Vec::with_capacity(n); k];
    for (i, &y) in labels.iter().enumerate() {
        let s = &raw_scores[i * k..(i + 1) * k];
        match task {
            TaskKind::Regression => {
                g[0].push(s[0] - y);
                h[0].push(1.0);
            }
            TaskKind::Binary => {
                let p = logistic(s[0]);
                g[0].push(p - y);
                h[0].push(p * (1.0 - p));
            }
            TaskKind::Multiclass { .. } => {
                for (c, p) in softmax(s).into_iter().enumerate() {
                    let target = if y as usize == c { 1.0 } else { 0.0 };
                    g[c].push(p - target);
                    h[c].push(p * (1.0 - p));
                }
            }
        }
    }
    g.into_iter().zip(h).map(|(g, h)| GradStats::new(g, h)).collect()
}

/// Shrunk optimal leaf weight `learning_rate * -G / (H + lambda)`.
pub fn leaf_value(g: f64, h: f64, lambda: f64, learning_rate: f64) -> Result<f64, TrainError> {
    if !(h + lambda > 0.0) {
        return Err(TrainError::DegenerateLeaf { g, h, lambda });
    }
    Ok(learning_rate * (-g / (h + lambda)))
}
