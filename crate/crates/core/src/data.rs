//! Dataset ingestion, train/test splitting and split-candidate generation.

use std::fmt;
use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default cap on split candidates per feature.
pub const DEFAULT_MAX_BINS: usize = 255;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("csv error at line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("line {line}, column {column}: cannot parse {value:?} as a number")]
    Parse {
        line: u64,
        column: String,
        value: String,
    },
    #[error("line {line}, column {column}: missing value")]
    Missing { line: u64, column: String },
    #[error("line {line}: expected {expected} columns, found {found}")]
    Ragged {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("row {row}: label {label} is not a class index in [0, {classes})")]
    LabelOutOfRange { row: usize, label: f64, classes: usize },
    #[error("label column {0} not found")]
    UnknownLabelColumn(String),
    #[error("dataset has no rows")]
    Empty,
    #[error("dataset needs at least one feature column")]
    NoFeatures,
    #[error("feature matrix has {values} values, not a multiple of {features} features")]
    Shape { values: usize, features: usize },
    #[error("row {row}, feature {feature}: non-finite value")]
    NonFinite { row: usize, feature: usize },
    #[error("test fraction {0} outside (0, 1)")]
    InvalidFraction(f64),
    #[error("cannot split {rows} rows with test fraction {fraction}: one side would be empty")]
    TooSmall { rows: usize, fraction: f64 },
    #[error("invalid task {0:?}; expected regression, binary, multiclass or multiclass:<classes>")]
    InvalidTask(String),
}

/// Learning task. Multiclass needs at least three classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TaskKind {
    Regression,
    Binary,
    Multiclass { classes: usize },
}

impl TaskKind {
    /// Number of raw scores (and trees per boosting round).
    pub fn class_count(&self) -> usize {
        match self {
            TaskKind::Regression | TaskKind::Binary => 1,
            TaskKind::Multiclass { classes } => *classes,
        }
    }

    pub fn is_classification(&self) -> bool {
        !matches!(self, TaskKind::Regression)
    }

    fn check(&self) -> Result<(), DataError> {
        match self {
            TaskKind::Multiclass { classes } if *classes < 3 => {
                Err(DataError::InvalidTask(format!("multiclass:{classes}")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskKind::Regression => f.write_str("regression"),
            TaskKind::Binary => f.write_str("binary"),
            TaskKind::Multiclass { classes } => write!(f, "multiclass:{classes}"),
        }
    }
}

impl FromStr for TaskKind {
    type Err = DataError;

    /// Accepts `regression`, `binary` and `multiclass:<c>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        let task = match lower.as_str() {
            "regression" => TaskKind::Regression,
            "binary" => TaskKind::Binary,
            other => match other.strip_prefix("multiclass:") {
                Some(c) => TaskKind::Multiclass {
                    classes: c.parse().map_err(|_| DataError::InvalidTask(s.into()))?,
                },
                None => return Err(DataError::InvalidTask(s.into())),
            },
        };
        task.check()?;
        Ok(task)
    }
}

/// Selects the label column of a CSV file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Name(String),
    Index(usize),
}

impl FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    /// A bare non-negative integer is a column index, anything else a name.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(s.to_string()),
        })
    }
}

/// Dense numeric feature matrix (row-major) with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<f64>,
    feature_names: Vec<String>,
    label_name: String,
    d: usize,
    task: TaskKind,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        feature_count: usize,
        labels: Vec<f64>,
        task: TaskKind,
    ) -> Result<Self, DataError> {
        let names = (0..feature_count).map(|j| format!("f{j}")).collect();
        Self::with_names(features, feature_count, labels, task, names, "label".into())
    }

    pub fn with_names(
        features: Vec<f64>,
        feature_count: usize,
        labels: Vec<f64>,
        task: TaskKind,
        feature_names: Vec<String>,
        label_name: String,
    ) -> Result<Self, DataError> {
        if feature_count == 0 {
            return Err(DataError::NoFeatures);
        }
        if !features.len().is_multiple_of(feature_count) || features.len() / feature_count != labels.len() {
            return Err(DataError::Shape {
                values: features.len(),
                features: feature_count,
            });
        }
        if labels.is_empty() {
            return Err(DataError::Empty);
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFinite {
                row: pos / feature_count,
                feature: pos % feature_count,
            });
        }
        task.check()?;
        check_labels(&labels, task)?;
        debug_assert_eq!(feature_names.len(), feature_count);
        Ok(Self {
            features,
            labels,
            feature_names,
            label_name,
            d: feature_count,
            task,
        })
    }

    /// Reinterprets the labels under another task, validating class ranges.
    pub fn with_task(mut self, task: TaskKind) -> Result<Self, DataError> {
        task.check()?;
        check_labels(&self.labels, task)?;
        self.task = task;
        Ok(self)
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.d
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn label_name(&self) -> &str {
        &self.label_name
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.d)
    }

    pub fn value(&self, row: usize, feature: usize) -> f64 {
        self.features[row * self.d + feature]
    }

    pub fn column(&self, feature: usize) -> Vec<f64> {
        self.rows().map(|r| r[feature]).collect()
    }

    /// Largest class label plus one (0 for regression data with negative labels).
    pub fn observed_classes(&self) -> usize {
        self.labels
            .iter()
            .filter(|y| **y >= 0.0 && y.fract() == 0.0)
            .map(|y| *y as usize + 1)
            .max()
            .unwrap_or(0)
    }

    /// New dataset holding the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(rows.len() * self.d);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            features.extend_from_slice(self.row(r));
            labels.push(self.labels[r]);
        }
        Dataset {
            features,
            labels,
            feature_names: self.feature_names.clone(),
            label_name: self.label_name.clone(),
            d: self.d,
            task: self.task,
        }
    }

    /// Writes the dataset as CSV with a header, label last.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push(&self.label_name);
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(self.d + 1);
        for (row, y) in self.rows().zip(&self.labels) {
            record.clear();
            record.extend(row.iter().map(|v| v.to_string()));
            record.push(y.to_string());
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_labels(labels: &[f64], task: TaskKind) -> Result<(), DataError> {
    for (row, &y) in labels.iter().enumerate() {
        let ok = match task {
            TaskKind::Regression => y.is_finite(),
            TaskKind::Binary => y == 0.0 || y == 1.0,
            TaskKind::Multiclass { classes } => {
                y >= 0.0 && y.fract() == 0.0 && (y as usize) < classes
            }
        };
        if !ok {
            return Err(DataError::LabelOutOfRange {
                row,
                label: y,
                classes: task.class_count().max(2),
            });
        }
    }
    Ok(())
}

/// Loads a comma-separated file. The first row is treated as a header when
/// any of its cells is not a number.
pub fn load_csv(
    path: impl AsRef<Path>,
    label: &LabelColumn,
    task: TaskKind,
) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, label, task)
}

/// Same as [`load_csv`] over any reader.
pub fn read_csv<R: io::Read>(
    input: R,
    label: &LabelColumn,
    task: TaskKind,
) -> Result<Dataset, DataError> {
    let table = read_table(input, Some(label))?;
    let label_idx = table.label.expect("label column resolved");
    let feature_names = table
        .names
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != label_idx)
        .map(|(_, n)| n.clone())
        .collect();
    Dataset::with_names(
        table.features,
        table.width - 1,
        table.labels,
        task,
        feature_names,
        table.names[label_idx].clone(),
    )
}

/// Unlabeled rows, e.g. for prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRows {
    /// Row-major values.
    pub values: Vec<f64>,
    pub n_features: usize,
    pub names: Vec<String>,
}

impl FeatureRows {
    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.n_features)
    }
}

/// Loads every column of a comma-separated file as a feature.
pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureRows, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_features(file)
}

/// Same as [`load_features`] over any reader.
pub fn read_features<R: io::Read>(input: R) -> Result<FeatureRows, DataError> {
    let table = read_table(input, None)?;
    Ok(FeatureRows {
        values: table.features,
        n_features: table.width,
        names: table.names,
    })
}

struct Table {
    names: Vec<String>,
    width: usize,
    label: Option<usize>,
    features: Vec<f64>,
    labels: Vec<f64>,
}

fn read_table<R: io::Read>(input: R, label: Option<&LabelColumn>) -> Result<Table, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);

    let mut records = reader.records();
    let first = match records.next() {
        Some(r) => r.map_err(csv_error)?,
        None => return Err(DataError::Empty),
    };
    let width = first.len();
    let is_header = first.iter().any(|c| !c.is_empty() && c.parse::<f64>().is_err());
    let names: Vec<String> = if is_header {
        first.iter().map(str::to_string).collect()
    } else {
        (0..width).map(|j| j.to_string()).collect()
    };

    let label_idx = match label {
        None => None,
        Some(LabelColumn::Index(i)) if *i < width => Some(*i),
        Some(LabelColumn::Index(i)) => return Err(DataError::UnknownLabelColumn(i.to_string())),
        Some(LabelColumn::Name(n)) => Some(
            names
                .iter()
                .position(|c| c == n)
                .ok_or_else(|| DataError::UnknownLabelColumn(n.clone()))?,
        ),
    };
    if width < 1 + usize::from(label_idx.is_some()) {
        return Err(DataError::NoFeatures);
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut parse_record = |record: &csv::StringRecord, line: u64| -> Result<(), DataError> {
        if record.len() != width {
            return Err(DataError::Ragged {
                line,
                expected: width,
                found: record.len(),
            });
        }
        for (j, cell) in record.iter().enumerate() {
            if cell.is_empty() {
                return Err(DataError::Missing {
                    line,
                    column: names[j].clone(),
                });
            }
            let value: f64 = cell.parse().map_err(|_| DataError::Parse {
                line,
                column: names[j].clone(),
                value: cell.to_string(),
            })?;
            if !value.is_finite() {
                return Err(DataError::Missing {
                    line,
                    column: names[j].clone(),
                });
            }
            if Some(j) == label_idx {
                labels.push(value);
            } else {
                features.push(value);
            }
        }
        Ok(())
    };

    if !is_header {
        parse_record(&first, 1)?;
    }
    for record in records {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        parse_record(&record, line)?;
    }
    if features.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(Table {
        names,
        width,
        label: label_idx,
        features,
        labels,
    })
}

fn csv_error(e: csv::Error) -> DataError {
    DataError::Csv {
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    }
}

/// Seeded shuffle split into (train, test). The test part has
/// `floor(n * test_fraction)` rows; both parts keep their original row order.
pub fn split_train_test(
    ds: &Dataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), DataError> {
    let (train, test) = split_indices(ds.n_rows(), test_fraction, seed)?;
    Ok((ds.subset(&train), ds.subset(&test)))
}

/// Row indices of the (train, test) partition used by [`split_train_test`].
pub fn split_indices(
    n: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), DataError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DataError::InvalidFraction(test_fraction));
    }
    let n_test = (n as f64 * test_fraction).floor() as usize;
    if n_test == 0 || n_test >= n {
        return Err(DataError::TooSmall {
            rows: n,
            fraction: test_fraction,
        });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test = perm[..n_test].to_vec();
    let mut train = perm[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

/// Per-feature split thresholds. A row goes left at threshold `mu` when
/// its value is `<= mu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    thresholds: Vec<Vec<f64>>,
    integer_valued: Vec<bool>,
}

impl CandidateSet {
    pub fn from_parts(thresholds: Vec<Vec<f64>>, integer_valued: Vec<bool>) -> Self {
        debug_assert_eq!(thresholds.len(), integer_valued.len());
        Self {
            thresholds,
            integer_valued,
        }
    }

    pub fn n_features(&self) -> usize {
        self.thresholds.len()
    }

    pub fn feature(&self, f: usize) -> &[f64] {
        &self.thresholds[f]
    }

    pub fn is_integer_valued(&self, f: usize) -> bool {
        self.integer_valued[f]
    }

    pub fn total(&self) -> usize {
        self.thresholds.iter().map(Vec::len).sum()
    }

    /// Position of `mu` among the feature's candidates.
    pub fn index_of(&self, f: usize, mu: f64) -> Option<usize> {
        self.thresholds[f]
            .binary_search_by(|c| c.total_cmp(&mu))
            .ok()
    }
}

/// Midpoints between adjacent distinct values of each feature. Above
/// `max_bins` gaps, only the gaps at evenly spaced row-quantile ranks are
/// kept. Every candidate is a single-precision value lying in `[a, b)` for
/// the pair `a < b` it separates; pairs with no such value are skipped.
pub fn candidate_thresholds(ds: &Dataset, max_bins: usize) -> CandidateSet {
    let max_bins = max_bins.max(1);
    let mut thresholds = Vec::with_capacity(ds.n_features());
    let mut integer_valued = Vec::with_capacity(ds.n_features());
    for f in 0..ds.n_features() {
        let mut sorted = ds.column(f);
        sorted.sort_by(f64::total_cmp);
        integer_valued.push(sorted.iter().all(|v| v.fract() == 0.0));
        thresholds.push(feature_candidates(&sorted, max_bins));
    }
    CandidateSet {
        thresholds,
        integer_valued,
    }
}

fn feature_candidates(sorted: &[f64], max_bins: usize) -> Vec<f64> {
    let mut distinct = sorted.to_vec();
    distinct.dedup();
    if distinct.len() < 2 {
        return Vec::new();
    }
    let gaps: Vec<usize> = if distinct.len() - 1 <= max_bins {
        (0..distinct.len() - 1).collect()
    } else {
        let n = sorted.len();
        let mut gaps: Vec<usize> = (1..=max_bins)
            .filter_map(|k| {
                let v = sorted[(k * n / (max_bins + 1)).min(n - 1)];
                let p = distinct.partition_point(|u| *u < v);
                (p + 1 < distinct.len()).then_some(p)
            })
            .collect();
        gaps.dedup();
        gaps
    };
    gaps.into_iter()
        .filter_map(|g| f32_between(distinct[g], distinct[g + 1]))
        .collect()
}

/// A single-precision value `t` with `lo <= t < hi`, preferring the one
/// nearest to the midpoint.
pub(crate) fn f32_between(lo: f64, hi: f64) -> Option<f64> {
    let mid = lo + (hi - lo) / 2.0;
    let near = mid as f32;
    [near, near.next_down(), near.next_up()]
        .into_iter()
        .map(f64::from)
        .find(|t| t.is_finite() && lo <= *t && *t < hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reg(features: Vec<f64>, d: usize) -> Dataset {
        let n = features.len() / d;
        Dataset::new(features, d, vec![0.0; n], TaskKind::Regression).unwrap()
    }

    #[test]
    fn load_small_csv_with_header() {
        let text = "a,b,y\n1,2,0.5\n3,4,1.5\n5,6,2.5\n7,8,3.5\n";
        let ds = read_csv(text.as_bytes(), &"y".parse().unwrap(), TaskKind::Regression).unwrap();
        assert_eq!(ds.n_rows(), 4);
        assert_eq!(ds.n_features(), 2);
        assert_eq!(ds.row(2), &[5.0, 6.0]);
        assert_eq!(ds.labels(), &[0.5, 1.5, 2.5, 3.5]);
        assert_eq!(ds.feature_names(), &["a", "b"]);
    }

    #[test]
    fn label_by_index_without_header() {
        let text = "0,1.5,2\n1,2.5,3\n";
        let ds = read_csv(text.as_bytes(), &LabelColumn::Index(0), TaskKind::Binary).unwrap();
        assert_eq!(ds.labels(), &[0.0, 1.0]);
        assert_eq!(ds.row(1), &[2.5, 3.0]);
    }

    #[test]
    fn blank_cell_names_line_and_column() {
        let text = "a,b,y\n1,2,0\n3,,1\n";
        let err = read_csv(text.as_bytes(), &"y".parse().unwrap(), TaskKind::Binary).unwrap_err();
        match err {
            DataError::Missing { line, column } => {
                assert_eq!(line, 3);
                assert_eq!(column, "b");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unparsable_cell_and_bad_label() {
        let text = "a,y\nx1,0\n";
        assert!(matches!(
            read_csv(text.as_bytes(), &"y".parse().unwrap(), TaskKind::Binary),
            Err(DataError::Parse { line: 2, .. })
        ));
        let text = "a,y\n1,3\n";
        assert!(matches!(
            read_csv(
                text.as_bytes(),
                &"y".parse().unwrap(),
                TaskKind::Multiclass { classes: 3 }
            ),
            Err(DataError::LabelOutOfRange { row: 0, .. })
        ));
    }

    #[test]
    fn unlabeled_rows() {
        let rows = read_features("a,b\n1,2\n3,4\n".as_bytes()).unwrap();
        assert_eq!(rows.n_features, 2);
        assert_eq!(rows.names, ["a", "b"]);
        assert_eq!(rows.rows().collect::<Vec<_>>(), [[1.0, 2.0], [3.0, 4.0]]);
        assert!(matches!(read_features("a,b\n".as_bytes()), Err(DataError::Empty)));
    }

    #[test]
    fn task_parsing() {
        assert_eq!("binary".parse::<TaskKind>().unwrap(), TaskKind::Binary);
        assert_eq!(
            "multiclass:4".parse::<TaskKind>().unwrap(),
            TaskKind::Multiclass { classes: 4 }
        );
        assert!("multiclass:2".parse::<TaskKind>().is_err());
        assert!("ranking".parse::<TaskKind>().is_err());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = reg((0..10).map(f64::from).collect(), 1);
        let (a, b) = split_train_test(&ds, 0.2, 7).unwrap();
        assert_eq!((a.n_rows(), b.n_rows()), (8, 2));
        let (a2, b2) = split_train_test(&ds, 0.2, 7).unwrap();
        assert_eq!(a, a2);
        assert_eq!(b, b2);

        // floor(569 * 0.2) = 113
        let (tr, te) = split_indices(569, 0.2, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (456, 113));
    }

    #[test]
    fn split_rejects_bad_fraction_and_tiny_data() {
        assert!(matches!(
            split_indices(10, 1.0, 0),
            Err(DataError::InvalidFraction(_))
        ));
        assert!(matches!(
            split_indices(3, 0.2, 0),
            Err(DataError::TooSmall { .. })
        ));
    }

    #[test]
    fn candidate_examples() {
        let ds = reg(vec![0.0, 1.0, 0.0], 1);
        assert_eq!(candidate_thresholds(&ds, 255).feature(0), &[0.5]);

        let ds = reg(vec![4.0, 1.0, 2.0, 2.0], 1);
        assert_eq!(candidate_thresholds(&ds, 255).feature(0), &[1.5, 3.0]);

        let ds = reg(vec![5.0, 5.0, 5.0], 1);
        let c = candidate_thresholds(&ds, 255);
        assert!(c.feature(0).is_empty());
        assert!(c.is_integer_valued(0));
    }

    #[test]
    fn candidates_capped_by_max_bins() {
        let ds = reg((0..1000).map(|i| f64::from(i) * 0.37).collect(), 1);
        let c = candidate_thresholds(&ds, 16);
        assert!(c.feature(0).len() <= 16);
        assert!(c.feature(0).len() >= 12);
        assert!(c.feature(0).windows(2).all(|w| w[0] < w[1]));
        assert!(!c.is_integer_valued(0));
    }

    #[test]
    fn f32_snapping_stays_inside_gap() {
        let lo = 1.0;
        let hi = 1.0 + 1e-9;
        // `lo` is the only single-precision value inside the gap.
        assert_eq!(f32_between(lo, hi), Some(1.0));
        let hi = f64::from(1.0f32.next_up());
        assert_eq!(f32_between(1.0, hi), Some(1.0));
        assert_eq!(f32_between(0.1, 0.2), Some(f64::from(0.15f32)));
    }
}
