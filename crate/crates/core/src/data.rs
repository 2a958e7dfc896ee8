//! Labeled datasets: CSV ingestion, min-max normalization, seeded splits and
//! k-fold partitioning.
//!
//! CSV rows carry the label in the first column followed by the `m` feature
//! values. There is no header row and no quoting. Labels may be written as
//! `-1`/`+1` or `0`/`1`; `0` maps to `-1`.

use std::io::Read;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Split permutations tried before giving up on drawing both classes into
/// the training side.
const MAX_SPLIT_ATTEMPTS: usize = 100;

/// Labeled feature matrix. Labels are stored as `+1.0` / `-1.0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Array1<f64>,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Array1<f64>) -> Result<Self> {
        let (n, m) = features.dim();
        if n == 0 || m == 0 {
            return Err(Error::InvalidArgument(format!(
                "dataset must have at least one row and one feature (got {n}x{m})"
            )));
        }
        if labels.len() != n {
            return Err(Error::DimensionMismatch {
                context: "label count vs feature rows",
                expected: n,
                found: labels.len(),
            });
        }
        if let Some((row, &value)) = labels
            .iter()
            .enumerate()
            .find(|(_, &y)| y != 1.0 && y != -1.0)
        {
            return Err(Error::InvalidLabel {
                row: row + 1,
                value: value.to_string(),
            });
        }
        Ok(Dataset { features, labels })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &Array1<f64> {
        &self.labels
    }

    /// Sample count.
    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    /// Feature dimension.
    pub fn m(&self) -> usize {
        self.features.ncols()
    }

    pub fn has_both_classes(&self) -> bool {
        has_both_classes(self.labels.iter().copied())
    }

    /// Rows at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        Dataset::new(
            self.features.select(Axis(0), indices),
            self.labels.select(Axis(0), indices),
        )
    }
}

fn has_both_classes(labels: impl IntoIterator<Item = f64>) -> bool {
    let (mut pos, mut neg) = (false, false);
    for y in labels {
        if y > 0.0 {
            pos = true;
        } else {
            neg = true;
        }
        if pos && neg {
            return true;
        }
    }
    false
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file)
}

/// Parses the label-first CSV layout from any reader.
pub fn read_dataset(reader: impl Read) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut labels = Vec::new();
    let mut values = Vec::new();
    let mut width: Option<usize> = None;

    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            column: 0,
            message: e.to_string(),
        })?;
        match width {
            None => {
                if record.len() < 2 {
                    return Err(Error::Parse {
                        row,
                        column: record.len(),
                        message: "expected a label followed by at least one feature".into(),
                    });
                }
                width = Some(record.len());
            }
            Some(w) if w != record.len() => {
                return Err(Error::RaggedRow {
                    row,
                    expected: w,
                    found: record.len(),
                })
            }
            _ => {}
        }

        let raw_label = &record[0];
        let label: f64 = raw_label.parse().map_err(|_| Error::Parse {
            row,
            column: 1,
            message: format!("cannot parse label {raw_label:?}"),
        })?;
        let label = match label {
            1.0 => 1.0,
            l if l == 0.0 || l == -1.0 => -1.0,
            _ => {
                return Err(Error::InvalidLabel {
                    row,
                    value: raw_label.to_string(),
                })
            }
        };
        labels.push(label);

        for (col, field) in record.iter().enumerate().skip(1) {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row,
                column: col + 1,
                message: format!("cannot parse number {field:?}"),
            })?;
            values.push(v);
        }
    }

    let Some(width) = width else {
        return Err(Error::Parse {
            row: 0,
            column: 0,
            message: "empty dataset".into(),
        });
    };
    let n = labels.len();
    let features = Array2::from_shape_vec((n, width - 1), values)
        .expect("row widths were checked while parsing");
    Dataset::new(features, Array1::from(labels))
}

/// Per-feature min-max statistics fitted on a training set.
#[derive(Debug, Clone, PartialEq)]
pub struct NormParams {
    pub min: Array1<f64>,
    /// `max - min`; zero for constant features.
    pub range: Array1<f64>,
}

impl NormParams {
    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// Normalizes a raw feature matrix. Values outside the training range are
    /// kept as-is (no clamping) because clamping would distort l1 distances.
    pub fn transform(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        if features.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "feature dimension vs normalizer",
                expected: self.dim(),
                found: features.ncols(),
            });
        }
        let mut out = features.clone();
        for mut row in out.rows_mut() {
            for ((x, &lo), &r) in row.iter_mut().zip(&self.min).zip(&self.range) {
                *x = if r > 0.0 { (*x - lo) / r } else { 0.0 };
            }
        }
        Ok(out)
    }
}

pub fn fit_normalizer(train: &Dataset) -> NormParams {
    let x = train.features();
    let min = x.fold_axis(Axis(0), f64::INFINITY, |&a, &b| a.min(b));
    let max = x.fold_axis(Axis(0), f64::NEG_INFINITY, |&a, &b| a.max(b));
    let range = &max - &min;
    NormParams { min, range }
}

pub fn apply_normalizer(params: &NormParams, data: &Dataset) -> Result<Dataset> {
    Dataset::new(params.transform(data.features())?, data.labels().clone())
}

/// Index-level random split. The training side gets `ceil(n * fraction)`
/// samples and must contain both classes; permutations are redrawn up to 100
/// times before failing. Both index lists are returned in ascending order.
pub fn split_indices(
    data: &Dataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = data.n();
    let n_train = (n as f64 * train_fraction).ceil() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::Split(format!(
            "cannot split {n} samples with train fraction {train_fraction} into two non-empty parts"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    for _ in 0..MAX_SPLIT_ATTEMPTS {
        perm.shuffle(&mut rng);
        let train = &perm[..n_train];
        if has_both_classes(train.iter().map(|&i| data.labels()[i])) {
            let mut train = train.to_vec();
            let mut test = perm[n_train..].to_vec();
            train.sort_unstable();
            test.sort_unstable();
            return Ok((train, test));
        }
    }
    Err(Error::Split(format!(
        "no permutation out of {MAX_SPLIT_ATTEMPTS} put both classes in the training split"
    )))
}

pub fn split(data: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(data, train_fraction, seed)?;
    Ok((data.select(&train)?, data.select(&test)?))
}

/// One cross-validation fold: training indices and held-out indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Partitions `0..n` into `k` validation folds whose sizes differ by at most
/// one.
pub fn kfold(data: &Dataset, k: usize, seed: u64) -> Result<Vec<Fold>> {
    kfold_indices(data.n(), k, seed)
}

pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k-fold needs k >= 2, got {k}")));
    }
    if n < k {
        return Err(Error::InvalidArgument(format!(
            "cannot build {k} folds from {n} samples"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);

    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut validation = perm[start..start + size].to_vec();
        validation.sort_unstable();
        let mut train: Vec<usize> = perm[..start]
            .iter()
            .chain(&perm[start + size..])
            .copied()
            .collect();
        train.sort_unstable();
        folds.push(Fold { train, validation });
        start += size;
    }
    Ok(folds)
}
