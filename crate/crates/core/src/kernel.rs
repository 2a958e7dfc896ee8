//! Kernel functions and dense kernel matrices.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

use crate::data::{kfold, Dataset};
use crate::error::{Error, Result};

/// Default TL1 width as a multiple of the feature dimension.
pub const TL1_TAU_FACTOR: f64 = 0.7;

#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    /// Truncated l1 kernel `max(tau - |u - v|_1, 0)`. Indefinite in general.
    Tl1 { tau: f64 },
    /// `exp(-d / sigma^2)` with `d = |u - v|_2`, or `|u - v|_2^2` when
    /// `squared_exponent` is set.
    Rbf { sigma: f64, squared_exponent: bool },
    /// A kernel matrix stored on disk; has no pointwise form.
    Precomputed(PathBuf),
}

impl KernelSpec {
    pub fn tl1(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidArgument(format!("TL1 tau must be positive, got {tau}")));
        }
        Ok(KernelSpec::Tl1 { tau })
    }

    /// TL1 with `tau = 0.7 * m`.
    pub fn tl1_for_dim(m: usize) -> Self {
        KernelSpec::Tl1 {
            tau: TL1_TAU_FACTOR * m as f64,
        }
    }

    pub fn rbf(sigma: f64, squared_exponent: bool) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("RBF sigma must be positive, got {sigma}")));
        }
        Ok(KernelSpec::Rbf {
            sigma,
            squared_exponent,
        })
    }

    pub fn eval(&self, u: ArrayView1<f64>, v: ArrayView1<f64>) -> Result<f64> {
        if u.len() != v.len() {
            return Err(Error::DimensionMismatch {
                context: "kernel arguments",
                expected: u.len(),
                found: v.len(),
            });
        }
        let f = self.pointwise()?;
        Ok(f(u, v))
    }

    fn pointwise(&self) -> Result<impl Fn(ArrayView1<f64>, ArrayView1<f64>) -> f64 + Sync + '_> {
        match self {
            KernelSpec::Precomputed(_) => Err(Error::InvalidArgument(
                "a precomputed kernel cannot be evaluated pointwise".into(),
            )),
            spec => Ok(move |u: ArrayView1<f64>, v: ArrayView1<f64>| match *spec {
                KernelSpec::Tl1 { tau } => {
                    let d: f64 = u.iter().zip(v).map(|(a, b)| (a - b).abs()).sum();
                    (tau - d).max(0.0)
                }
                KernelSpec::Rbf {
                    sigma,
                    squared_exponent,
                } => {
                    let d2: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
                    let d = if squared_exponent { d2 } else { d2.sqrt() };
                    (-d / (sigma * sigma)).exp()
                }
                KernelSpec::Precomputed(_) => unreachable!(),
            }),
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Tl1 { tau } => write!(f, "tl1(tau={tau})"),
            KernelSpec::Rbf {
                sigma,
                squared_exponent,
            } => write!(f, "rbf(sigma={sigma}, squared={squared_exponent})"),
            KernelSpec::Precomputed(p) => write!(f, "precomputed({})", p.display()),
        }
    }
}

pub fn eval_kernel(spec: &KernelSpec, u: ArrayView1<f64>, v: ArrayView1<f64>) -> Result<f64> {
    spec.eval(u, v)
}

/// Dense square kernel matrix. When `symmetric` is set, `entries[i][j]` and
/// `entries[j][i]` are bitwise equal.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    entries: Array2<f64>,
    symmetric: bool,
}

impl KernelMatrix {
    /// Wraps a square matrix, recording whether it is exactly symmetric.
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        let (r, c) = entries.dim();
        if r != c {
            return Err(Error::DimensionMismatch {
                context: "kernel matrix must be square",
                expected: r,
                found: c,
            });
        }
        let symmetric = is_exactly_symmetric(entries.view());
        Ok(KernelMatrix { entries, symmetric })
    }

    /// Wraps a matrix after copying its lower triangle over the upper one.
    pub fn symmetrized_from_lower(mut entries: Array2<f64>) -> Result<Self> {
        let (r, c) = entries.dim();
        if r != c {
            return Err(Error::DimensionMismatch {
                context: "kernel matrix must be square",
                expected: r,
                found: c,
            });
        }
        mirror_lower(&mut entries);
        Ok(KernelMatrix {
            entries,
            symmetric: true,
        })
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> Array2<f64> {
        self.entries
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.entries.view()
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }
}

fn is_exactly_symmetric(m: ArrayView2<f64>) -> bool {
    let n = m.nrows();
    (0..n).all(|i| (0..i).all(|j| m[[i, j]].to_bits() == m[[j, i]].to_bits()))
}

pub(crate) fn mirror_lower(m: &mut Array2<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            m[[j, i]] = m[[i, j]];
        }
    }
}

/// Symmetric Gram matrix `K_ij = k(x_i, x_j)`. Rows are evaluated in
/// parallel; only the lower triangle is computed and then mirrored, so the
/// result is independent of the thread count.
pub fn gram_matrix(spec: &KernelSpec, x: ArrayView2<f64>) -> Result<KernelMatrix> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("gram matrix needs at least one sample".into()));
    }
    let f = spec.pointwise()?;
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..=i).map(|j| f(x.row(i), x.row(j))).collect())
        .collect();
    let mut entries = Array2::zeros((n, n));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            entries[[i, j]] = v;
        }
    }
    KernelMatrix::symmetrized_from_lower(entries)
}

/// Test-by-train kernel matrix: entry `(i, j)` is `k(z_i, x_j)`.
pub fn cross_matrix(spec: &KernelSpec, z: ArrayView2<f64>, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    if z.ncols() != x.ncols() {
        return Err(Error::DimensionMismatch {
            context: "test vs training feature dimension",
            expected: x.ncols(),
            found: z.ncols(),
        });
    }
    let f = spec.pointwise()?;
    let (s, n) = (z.nrows(), x.nrows());
    let rows: Vec<Vec<f64>> = (0..s)
        .into_par_iter()
        .map(|i| (0..n).map(|j| f(z.row(i), x.row(j))).collect())
        .collect();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(Array2::from_shape_vec((s, n), flat).expect("row lengths are n"))
}

/// Median of all pairwise Euclidean distances (`i < j`). Zero for fewer than
/// two samples.
pub fn median_pairwise_distance(x: ArrayView2<f64>) -> f64 {
    let n = x.nrows();
    let mut d: Vec<f64> = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in 0..i {
            let s: f64 = x
                .row(i)
                .iter()
                .zip(x.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d.push(s.sqrt());
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    if d.len() % 2 == 1 {
        d[mid]
    } else {
        0.5 * (d[mid - 1] + d[mid])
    }
}

/// `2^k * median pairwise distance` for `k = -3..=3`.
pub fn default_sigma_grid(x: ArrayView2<f64>) -> Vec<f64> {
    let mut med = median_pairwise_distance(x);
    if !(med > 0.0) {
        med = 1.0;
    }
    (-3..=3).map(|k| med * 2f64.powi(k)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaSelection {
    pub sigma: f64,
    /// `(sigma, mean validation accuracy)` for every grid point, ascending in
    /// sigma.
    pub scores: Vec<(f64, f64)>,
}

/// Cross-validated choice of the RBF width. `evaluate(fit, validation, sigma)`
/// trains on `fit` and returns accuracy on `validation`. The highest mean
/// accuracy wins; ties go to the smallest sigma.
pub fn select_rbf_sigma<F>(
    train: &Dataset,
    grid: &[f64],
    folds: usize,
    seed: u64,
    mut evaluate: F,
) -> Result<SigmaSelection>
where
    F: FnMut(&Dataset, &Dataset, f64) -> Result<f64>,
{
    if grid.is_empty() {
        return Err(Error::InvalidArgument("sigma grid is empty".into()));
    }
    if let Some(bad) = grid.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::InvalidArgument(format!("sigma grid value {bad} is not positive")));
    }
    let partitions = kfold(train, folds, seed)?;
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();

    let mut scores = Vec::with_capacity(sorted.len());
    for &sigma in &sorted {
        let mut total = 0.0;
        for fold in &partitions {
            let fit = train.select(&fold.train)?;
            let val = train.select(&fold.validation)?;
            total += evaluate(&fit, &val, sigma)?;
        }
        scores.push((sigma, total / partitions.len() as f64));
    }

    let mut best = scores[0];
    for &cand in &scores[1..] {
        if cand.1 > best.1 {
            best = cand;
        }
    }
    Ok(SigmaSelection {
        sigma: best.0,
        scores,
    })
}

/// Writes a dense matrix as CSV with 17 significant digits. An optional
/// comment is emitted first as a `#` line.
pub fn write_matrix_csv(path: impl AsRef<Path>, m: ArrayView2<f64>, comment: Option<&str>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    render_matrix_csv(&mut w, m, comment).map_err(|e| Error::io(path, e))
}

pub fn render_matrix_csv(w: &mut impl Write, m: ArrayView2<f64>, comment: Option<&str>) -> std::io::Result<()> {
    if let Some(c) = comment {
        for line in c.lines() {
            writeln!(w, "# {line}")?;
        }
    }
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|v| format_f64(*v)).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()
}

/// Reads a square kernel matrix CSV; lines starting with `#` are skipped.
pub fn read_kernel_csv(path: impl AsRef<Path>) -> Result<KernelMatrix> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_kernel_csv(&text)
}

pub fn parse_kernel_csv(text: &str) -> Result<KernelMatrix> {
    let mut values = Vec::new();
    let mut n: Option<usize> = None;
    let mut rows = 0;
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let width = *n.get_or_insert(fields.len());
        if fields.len() != width {
            return Err(Error::RaggedRow {
                row: idx + 1,
                expected: width,
                found: fields.len(),
            });
        }
        for (col, f) in fields.iter().enumerate() {
            values.push(f.parse::<f64>().map_err(|_| Error::Parse {
                row: idx + 1,
                column: col + 1,
                message: format!("cannot parse number {f:?}"),
            })?);
        }
        rows += 1;
    }
    let n = n.ok_or_else(|| Error::Parse {
        row: 0,
        column: 0,
        message: "empty kernel matrix".into(),
    })?;
    if rows != n {
        return Err(Error::DimensionMismatch {
            context: "kernel matrix rows vs columns",
            expected: n,
            found: rows,
        });
    }
    KernelMatrix::new(Array2::from_shape_vec((n, n), values).expect("checked shape"))
}

/// 17 significant digits; parses back to the identical `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}
