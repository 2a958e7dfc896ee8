//! Training facade, prediction and model persistence.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2};

use crate::data::{fit_normalizer, Dataset, NormParams};
use crate::error::{Error, Result};
use crate::kernel::{cross_matrix, format_f64, gram_matrix, KernelMatrix, KernelSpec};
use crate::linalg::inf_norm;
use crate::objective::sigmoid;
use crate::solver::{ccicp_train, cccp_train, klr_train, SolveResult, SolverConfig};
use crate::spectral::{eigh, spectrum_modify, SpectrumMode};

pub const MODEL_VERSION: &str = "IKLR/1";

/// Relative tolerance on the smallest eigenvalue for a kernel to count as
/// positive semidefinite.
const PSD_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Ccicp,
    Cccp,
    Spectrum(SpectrumMode),
    KlrPsd,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Ccicp,
        Method::Cccp,
        Method::Spectrum(SpectrumMode::Flip),
        Method::Spectrum(SpectrumMode::Clip),
        Method::Spectrum(SpectrumMode::Shift),
        Method::KlrPsd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ccicp => "ccicp",
            Method::Cccp => "cccp",
            Method::Spectrum(mode) => mode.name(),
            Method::KlrPsd => "klr-psd",
        }
    }

    pub fn valid_names() -> String {
        Method::ALL.map(Method::name).join(", ")
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown method {s:?} (valid methods: {})",
                    Method::valid_names()
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMeta {
    pub lambda: f64,
    /// The inexactness actually used (`1e-4` for cccp).
    pub epsilon: f64,
    pub outer_iterations: usize,
    pub final_objective: f64,
}

/// A trained classifier in representer form `f(z) = sum_j beta_j k(z, x_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub kernel_spec: KernelSpec,
    pub norm_params: NormParams,
    /// Normalized training samples, one per row.
    pub train_features: Array2<f64>,
    pub beta: Array1<f64>,
    pub meta: TrainingMeta,
}

/// Trains on raw (unnormalized) data.
pub fn train_model(train: &Dataset, spec: &KernelSpec, config: &SolverConfig, method: Method) -> Result<Model> {
    train_model_detailed(train, spec, config, method).map(|(m, _)| m)
}

/// Like [`train_model`], also returning the solver output (objective trace,
/// iteration counts).
pub fn train_model_detailed(
    train: &Dataset,
    spec: &KernelSpec,
    config: &SolverConfig,
    method: Method,
) -> Result<(Model, SolveResult)> {
    config.validate()?;
    if !train.has_both_classes() {
        return Err(Error::InvalidArgument("training data must contain both classes".into()));
    }
    if let KernelSpec::Precomputed(_) = spec {
        return Err(Error::InvalidArgument(
            "models need a pointwise kernel (tl1 or rbf) to score new samples".into(),
        ));
    }
    let norm_params = fit_normalizer(train);
    let x = norm_params.transform(train.features())?;
    let k = gram_matrix(spec, x.view())?;
    let labels = train.labels().clone();

    let (result, epsilon) = match method {
        Method::Ccicp => (ccicp_train(&config.instance(k, labels)?, config)?, config.epsilon),
        Method::Cccp => {
            let preset = config.cccp_preset();
            (cccp_train(&config.instance(k, labels)?, config)?, preset.epsilon)
        }
        Method::Spectrum(mode) => {
            let eig = eigh(&k)?;
            let repaired = if eig.min_eigenvalue() >= 0.0 {
                k
            } else {
                spectrum_modify(&eig, mode)
            };
            (klr_train(&repaired, &labels, config)?, config.epsilon)
        }
        Method::KlrPsd => {
            ensure_psd(&k)?;
            (klr_train(&k, &labels, config)?, config.epsilon)
        }
    };

    let model = Model {
        kernel_spec: spec.clone(),
        norm_params,
        train_features: x,
        beta: result.beta.clone(),
        meta: TrainingMeta {
            lambda: config.lambda,
            epsilon,
            outer_iterations: result.outer_iterations,
            final_objective: result.final_objective(),
        },
    };
    Ok((model, result))
}

fn ensure_psd(k: &KernelMatrix) -> Result<()> {
    let min = eigh(k)?.min_eigenvalue();
    if min < -PSD_TOLERANCE * inf_norm(k.view()) {
        return Err(Error::IndefiniteKernel { min_eigenvalue: min });
    }
    Ok(())
}

impl Model {
    /// Representer sums `f(z_i)` for raw test features.
    pub fn decision_values(&self, test_features: ArrayView2<f64>) -> Result<Array1<f64>> {
        let z = self.norm_params.transform(&test_features.to_owned())?;
        let c = cross_matrix(&self.kernel_spec, z.view(), self.train_features.view())?;
        Ok(c.dot(&self.beta))
    }
}

/// `sigmoid(K_test[i] . beta)` for every test row.
pub fn predict_scores(model: &Model, test_features: ArrayView2<f64>) -> Result<Array1<f64>> {
    Ok(model.decision_values(test_features)?.mapv(sigmoid))
}

/// `+1` where the score exceeds 0.5, `-1` otherwise (including exactly 0.5).
pub fn classify(scores: &Array1<f64>) -> Array1<f64> {
    scores.mapv(|p| if p > 0.5 { 1.0 } else { -1.0 })
}

/// Fraction of exact label matches.
pub fn accuracy(predicted: &Array1<f64>, truth: &Array1<f64>) -> f64 {
    assert_eq!(predicted.len(), truth.len(), "accuracy length mismatch");
    if truth.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / truth.len() as f64
}

pub fn evaluate(model: &Model, test: &Dataset) -> Result<f64> {
    let labels = classify(&predict_scores(model, test.features().view())?);
    Ok(accuracy(&labels, test.labels()))
}

fn csv_row<'a>(values: impl IntoIterator<Item = &'a f64>) -> String {
    values.into_iter().map(|v| format_f64(*v)).collect::<Vec<_>>().join(",")
}

pub fn write_model(w: &mut impl Write, model: &Model) -> std::io::Result<()> {
    writeln!(w, "{MODEL_VERSION}")?;
    match &model.kernel_spec {
        KernelSpec::Tl1 { tau } => writeln!(w, "kernel tl1 {}", format_f64(*tau))?,
        KernelSpec::Rbf {
            sigma,
            squared_exponent,
        } => writeln!(
            w,
            "kernel rbf {} {}",
            format_f64(*sigma),
            if *squared_exponent { "squared" } else { "literal" }
        )?,
        KernelSpec::Precomputed(_) => {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidInput,
                "precomputed kernels cannot be stored in a model",
            ))
        }
    }
    let (n, m) = model.train_features.dim();
    writeln!(w, "lambda {}", format_f64(model.meta.lambda))?;
    writeln!(w, "epsilon {}", format_f64(model.meta.epsilon))?;
    writeln!(w, "outer_iterations {}", model.meta.outer_iterations)?;
    writeln!(w, "final_objective {}", format_f64(model.meta.final_objective))?;
    writeln!(w, "n {n}")?;
    writeln!(w, "m {m}")?;
    writeln!(w, "norm_min {}", csv_row(&model.norm_params.min))?;
    writeln!(w, "norm_range {}", csv_row(&model.norm_params.range))?;
    for row in model.train_features.rows() {
        writeln!(w, "{}", csv_row(row))?;
    }
    writeln!(w, "{}", csv_row(&model.beta))?;
    w.flush()
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_model(&mut w, model).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let lines = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(path, e))?;
    parse_model(lines.iter().map(String::as_str))
}

pub fn read_model(text: &str) -> Result<Model> {
    parse_model(text.lines())
}

struct Lines<'a, I: Iterator<Item = &'a str>> {
    inner: I,
    line: usize,
}

impl<'a, I: Iterator<Item = &'a str>> Lines<'a, I> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::ModelFormat {
            line: self.line,
            message: message.into(),
        }
    }

    fn next(&mut self) -> Result<&'a str> {
        self.line += 1;
        self.inner
            .next()
            .map(str::trim_end)
            .ok_or_else(|| self.err("unexpected end of file"))
    }

    fn keyed(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next()?;
        match line.split_once(' ') {
            Some((k, rest)) if k == key => Ok(rest.trim()),
            _ => Err(self.err(format!("expected `{key} ...`, found {line:?}"))),
        }
    }

    fn keyed_number<T: FromStr>(&mut self, key: &str) -> Result<T> {
        let value = self.keyed(key)?;
        self.number(value)
    }

    fn keyed_row(&mut self, key: &str, len: usize) -> Result<Array1<f64>> {
        let value = self.keyed(key)?;
        self.row(value, len)
    }

    fn number<T: FromStr>(&self, s: &str) -> Result<T> {
        s.parse().map_err(|_| self.err(format!("cannot parse number {s:?}")))
    }

    fn row(&self, s: &str, len: usize) -> Result<Array1<f64>> {
        let values = s
            .split(',')
            .map(|f| self.number::<f64>(f.trim()))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != len {
            return Err(self.err(format!("expected {len} values, found {}", values.len())));
        }
        Ok(Array1::from(values))
    }
}

fn parse_model<'a>(lines: impl Iterator<Item = &'a str>) -> Result<Model> {
    let mut p = Lines { inner: lines, line: 0 };

    let header = p.next()?;
    if header != MODEL_VERSION {
        if header.starts_with("IKLR/") {
            return Err(Error::ModelVersion {
                expected: MODEL_VERSION.into(),
                found: header.into(),
            });
        }
        return Err(p.err(format!("missing {MODEL_VERSION} header")));
    }

    let kernel = p.keyed("kernel")?;
    let parts: Vec<&str> = kernel.split_whitespace().collect();
    let kernel_spec = match parts.as_slice() {
        ["tl1", tau] => KernelSpec::tl1(p.number(tau)?),
        ["rbf", sigma, form] => {
            let squared = match *form {
                "squared" => true,
                "literal" => false,
                other => return Err(p.err(format!("unknown rbf form {other:?}"))),
            };
            KernelSpec::rbf(p.number(sigma)?, squared)
        }
        _ => return Err(p.err(format!("unrecognized kernel {kernel:?}"))),
    }
    .map_err(|e| p.err(e.to_string()))?;

    let lambda = p.keyed_number("lambda")?;
    let epsilon = p.keyed_number("epsilon")?;
    let outer_iterations = p.keyed_number("outer_iterations")?;
    let final_objective = p.keyed_number("final_objective")?;
    let n: usize = p.keyed_number("n")?;
    let m: usize = p.keyed_number("m")?;
    if n == 0 || m == 0 {
        return Err(p.err("n and m must be positive"));
    }
    let min = p.keyed_row("norm_min", m)?;
    let range = p.keyed_row("norm_range", m)?;

    let mut train_features = Array2::<f64>::zeros((n, m));
    for i in 0..n {
        let line = p.next()?;
        train_features.row_mut(i).assign(&p.row(line, m)?);
    }
    let line = p.next()?;
    let beta = p.row(line, n)?;

    Ok(Model {
        kernel_spec,
        norm_params: NormParams { min, range },
        train_features,
        beta,
        meta: TrainingMeta {
            lambda,
            epsilon,
            outer_iterations,
            final_objective,
        },
    })
}
