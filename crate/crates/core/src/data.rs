//! Datasets, CSV ingestion and seeded resampling.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

/// How many times a bootstrap draw with an empty out-of-bag set is retried.
pub const MAX_RESAMPLE_ATTEMPTS: u64 = 16;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dataset must have at least one row and one feature column")]
    Empty,
    #[error("feature rows ({rows}) and targets ({targets}) disagree in length")]
    LengthMismatch { rows: usize, targets: usize },
    #[error("row {row} has {found} features, expected {expected}")]
    RaggedRow { row: usize, found: usize, expected: usize },
    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("non-numeric cell {value:?} at row {row}, column {column}")]
    NonNumeric { row: usize, column: usize, value: String },
    #[error("target column {0} not found")]
    MissingTarget(String),
    #[error("file contains no data rows")]
    EmptyFile,
    #[error("test_count {test_count} must lie in [1, {n})")]
    TestCountOutOfRange { test_count: usize, n: usize },
    #[error("bootstrap resampling needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("every bootstrap draw left an empty out-of-bag set after {0} attempts")]
    DegenerateResample(u64),
    #[error("fold count {k} must lie in [2, {n}]")]
    FoldCountOutOfRange { k: usize, n: usize },
    #[error("row index {index} out of range for {n} rows")]
    IndexOutOfRange { index: usize, n: usize },
}

/// Feature matrix (row-major, `n x d`) plus a continuous target.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    n_rows: usize,
    n_features: usize,
    targets: Vec<f64>,
    feature_names: Option<Vec<String>>,
    target_name: Option<String>,
}

impl Dataset {
    pub fn new(rows: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self, DataError> {
        let d = rows.first().map(Vec::len).unwrap_or(0);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(DataError::RaggedRow { row: i, found: r.len(), expected: d });
            }
        }
        let n = rows.len();
        Self::from_flat(rows.into_iter().flatten().collect(), n, d, targets)
    }

    pub fn from_flat(
        features: Vec<f64>,
        n_rows: usize,
        n_features: usize,
        targets: Vec<f64>,
    ) -> Result<Self, DataError> {
        if n_rows == 0 || n_features == 0 {
            return Err(DataError::Empty);
        }
        if targets.len() != n_rows || features.len() != n_rows * n_features {
            return Err(DataError::LengthMismatch {
                rows: features.len() / n_features,
                targets: targets.len(),
            });
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFinite { row: pos / n_features, column: pos % n_features });
        }
        if let Some(row) = targets.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFinite { row, column: n_features });
        }
        Ok(Self { features, n_rows, n_features, targets, feature_names: None, target_name: None })
    }

    pub fn with_names(mut self, feature_names: Vec<String>, target_name: Option<String>) -> Self {
        if feature_names.len() == self.n_features {
            self.feature_names = Some(feature_names);
        }
        self.target_name = target_name;
        self
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.features.chunks_exact(self.n_features)
    }

    pub fn target(&self, i: usize) -> f64 {
        self.targets[i]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Row-major feature storage.
    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn target_name(&self) -> Option<&str> {
        self.target_name.as_deref()
    }

    /// Rows at `indices`, in that order; repeats are kept.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset, DataError> {
        if indices.is_empty() {
            return Err(DataError::Empty);
        }
        let mut features = Vec::with_capacity(indices.len() * self.n_features);
        let mut targets = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.n_rows {
                return Err(DataError::IndexOutOfRange { index: i, n: self.n_rows });
            }
            features.extend_from_slice(self.row(i));
            targets.push(self.targets[i]);
        }
        Ok(Dataset {
            features,
            n_rows: indices.len(),
            n_features: self.n_features,
            targets,
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
        })
    }

    /// Copy of this dataset with one extra row appended.
    pub fn augmented(&self, x: &[f64], y: f64) -> Result<Dataset, DataError> {
        if x.len() != self.n_features {
            return Err(DataError::RaggedRow {
                row: self.n_rows,
                found: x.len(),
                expected: self.n_features,
            });
        }
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(DataError::NonFinite { row: self.n_rows, column: 0 });
        }
        let mut out = self.clone();
        out.features.extend_from_slice(x);
        out.targets.push(y);
        out.n_rows += 1;
        Ok(out)
    }
}

/// Column selector for the target of a CSV file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetColumn {
    Index(usize),
    Name(String),
}

impl fmt::Display for TargetColumn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetColumn::Index(i) => write!(f, "#{i}"),
            TargetColumn::Name(s) => write!(f, "{s:?}"),
        }
    }
}

/// Loads a numeric CSV file. Data rows in errors are numbered from 1,
/// excluding the header; columns are numbered from 0.
pub fn load_csv(
    path: impl AsRef<Path>,
    target_column: &TargetColumn,
    header: bool,
) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
    parse_csv(&text, target_column, header)
}

/// Parses CSV text; see [`load_csv`].
pub fn parse_csv(
    text: &str,
    target_column: &TargetColumn,
    header: bool,
) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(header)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let headers: Option<Vec<String>> = if header {
        Some(reader.headers()?.iter().map(str::to_owned).collect())
    } else {
        None
    };

    let mut parsed: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row_no = i + 1;
        let mut values = Vec::with_capacity(record.len());
        for (column, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| DataError::NonNumeric {
                row: row_no,
                column,
                value: cell.to_owned(),
            })?;
            if !v.is_finite() {
                return Err(DataError::NonFinite { row: row_no, column });
            }
            values.push(v);
        }
        parsed.push(values);
    }
    if parsed.is_empty() {
        return Err(DataError::EmptyFile);
    }
    let width = parsed[0].len();

    let target = match target_column {
        TargetColumn::Index(i) if *i < width => *i,
        TargetColumn::Name(name) => headers
            .as_ref()
            .and_then(|h| h.iter().position(|c| c == name))
            .or_else(|| name.parse::<usize>().ok().filter(|i| *i < width))
            .ok_or_else(|| DataError::MissingTarget(target_column.to_string()))?,
        _ => return Err(DataError::MissingTarget(target_column.to_string())),
    };
    if width < 2 {
        return Err(DataError::Empty);
    }

    let n = parsed.len();
    let mut features = Vec::with_capacity(n * (width - 1));
    let mut targets = Vec::with_capacity(n);
    for row in &parsed {
        for (c, &v) in row.iter().enumerate() {
            if c == target {
                targets.push(v);
            } else {
                features.push(v);
            }
        }
    }
    let data = Dataset::from_flat(features, n, width - 1, targets)?;
    Ok(match headers {
        Some(h) => {
            let target_name = h.get(target).cloned();
            let names = h.into_iter().enumerate().filter(|(c, _)| *c != target).map(|(_, s)| s);
            data.with_names(names.collect(), target_name)
        }
        None => data,
    })
}

/// Index sets of a random train/test partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn train_test_indices(n: usize, test_count: usize, seed: u64) -> Result<SplitIndices, DataError> {
    if test_count == 0 || test_count >= n {
        return Err(DataError::TestCountOutOfRange { test_count, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(seed));
    let train = order.split_off(test_count);
    Ok(SplitIndices { train, test: order })
}

/// Random sequestering of `test_count` rows; returns `(train, test)`.
pub fn train_test_split(
    data: &Dataset,
    test_count: usize,
    seed: u64,
) -> Result<(Dataset, Dataset), DataError> {
    let idx = train_test_indices(data.n_rows(), test_count, seed)?;
    Ok((data.subset(&idx.train)?, data.subset(&idx.test)?))
}

/// One bootstrap draw with its out-of-bag complement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BootstrapResample {
    pub in_bag: Vec<usize>,
    pub out_of_bag: Vec<usize>,
}

impl BootstrapResample {
    fn draw(n: usize, seed: u64) -> Self {
        let mut rng = rng::seeded(seed);
        let in_bag: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let mut seen = vec![false; n];
        for &i in &in_bag {
            seen[i] = true;
        }
        let out_of_bag = (0..n).filter(|&i| !seen[i]).collect();
        Self { in_bag, out_of_bag }
    }
}

/// Samples `n` row indices with replacement. A draw with no out-of-bag rows
/// is redrawn with `seed + attempt` up to [`MAX_RESAMPLE_ATTEMPTS`] times.
pub fn bootstrap_resample(n: usize, seed: u64) -> Result<BootstrapResample, DataError> {
    if n < 2 {
        return Err(DataError::TooFewRows(n));
    }
    for attempt in 0..MAX_RESAMPLE_ATTEMPTS {
        let draw = BootstrapResample::draw(n, seed.wrapping_add(attempt));
        if !draw.out_of_bag.is_empty() {
            return Ok(draw);
        }
    }
    Err(DataError::DegenerateResample(MAX_RESAMPLE_ATTEMPTS))
}

/// Fold label of every row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub fold_of_row: Vec<usize>,
    pub k: usize,
}

impl FoldAssignment {
    /// Rows belonging to `fold`, ascending.
    pub fn fold(&self, fold: usize) -> Vec<usize> {
        self.fold_of_row.iter().enumerate().filter(|(_, &f)| f == fold).map(|(i, _)| i).collect()
    }

    /// Rows outside `fold`, ascending.
    pub fn complement(&self, fold: usize) -> Vec<usize> {
        self.fold_of_row.iter().enumerate().filter(|(_, &f)| f != fold).map(|(i, _)| i).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_of_row {
            sizes[f] += 1;
        }
        sizes
    }
}

pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<FoldAssignment, DataError> {
    if k < 2 || k > n {
        return Err(DataError::FoldCountOutOfRange { k, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(seed));
    let mut fold_of_row = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        fold_of_row[row] = pos % k;
    }
    Ok(FoldAssignment { fold_of_row, k })
}

/// Per-column z-score transform fit on training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    means: Vec<f64>,
    scales: Vec<f64>,
}

impl Standardizer {
    /// Columns with zero spread keep scale 1.
    pub fn fit(data: &Dataset) -> Self {
        let d = data.n_features();
        let n = data.n_rows() as f64;
        let mut means = vec![0.0; d];
        for row in data.rows() {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut vars = vec![0.0; d];
        for row in data.rows() {
            for ((s, v), m) in vars.iter_mut().zip(row).zip(&means) {
                *s += (v - m).powi(2);
            }
        }
        let scales = vars
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { means, scales }
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.means).zip(&self.scales).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn transform_dataset(&self, data: &Dataset) -> Dataset {
        let features = data.rows().flat_map(|r| self.transform(r)).collect();
        let mut out = data.clone();
        out.features = features;
        out
    }
}

/// Checks that a resample's bookkeeping is internally consistent.
pub fn check_resample(r: &BootstrapResample, n: usize) -> bool {
    let distinct: HashSet<usize> = r.in_bag.iter().copied().collect();
    r.in_bag.len() == n
        && r.in_bag.iter().all(|&i| i < n)
        && r.out_of_bag.iter().all(|i| !distinct.contains(i))
        && distinct.len() + r.out_of_bag.len() == n
}
