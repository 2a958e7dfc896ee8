//! Command-line front end: Gram construction, spectral reports, training,
//! prediction, evaluation and benchmarking.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use iklr::data::{load_dataset, split, Dataset};
use iklr::kernel::{
    default_sigma_grid, format_f64, gram_matrix, read_kernel_csv, render_matrix_csv, select_rbf_sigma,
    KernelMatrix, KernelSpec, TL1_TAU_FACTOR,
};
use iklr::linalg::inf_norm;
use iklr::model::{classify, evaluate, load_model, predict_scores, save_model, train_model_detailed, Method};
use iklr::objective::ProblemInstance;
use iklr::solver::{theorem_bound, SolverConfig};
use iklr::spectral::{choose_rho, eigh, positive_decomposition};

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

const CV_FOLDS: usize = 5;

#[derive(Debug, Parser)]
#[command(name = "iklr", version, about = "Indefinite kernel logistic regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the Gram matrix of a data set as CSV.
    Gram(GramArgs),
    /// Report the spectrum and positive decomposition of a kernel matrix.
    Decompose(DecomposeArgs),
    /// Train a model and write it to disk.
    Train(TrainArgs),
    /// Score a data set with a trained model.
    Predict(PredictArgs),
    /// Print the accuracy of a trained model on a labeled data set.
    Eval(PredictArgs),
    /// Repeated random-split comparison of several methods.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelKind {
    Tl1,
    Rbf,
}

#[derive(Debug, Clone, Args)]
pub struct KernelArgs {
    #[arg(long, value_enum, default_value = "tl1")]
    pub kernel: KernelKind,
    /// TL1 threshold as a multiple of the feature dimension.
    #[arg(long, default_value_t = TL1_TAU_FACTOR)]
    pub tau_factor: f64,
    /// RBF width.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Use exp(-||u-v||^2 / sigma^2) instead of exp(-||u-v|| / sigma^2).
    #[arg(long)]
    pub squared_exponent: bool,
    /// Pick the RBF width by cross-validation when --sigma is absent.
    #[arg(long)]
    pub cv_sigma: bool,
}

#[derive(Debug, Args)]
pub struct GramArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    /// Precomputed square kernel CSV.
    #[arg(long, conflicts_with = "data", required_unless_present = "data")]
    pub kernel_matrix: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub kernel: KernelArgs,
    /// `auto` or an explicit shift.
    #[arg(long, default_value = "auto")]
    pub rho: String,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    pub epsilon: f64,
    #[arg(long)]
    pub out_plus: Option<PathBuf>,
    #[arg(long)]
    pub out_minus: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 15)]
    pub max_outer: usize,
    #[arg(long, default_value_t = 1000)]
    pub max_inner: usize,
    /// Base step size eta.
    #[arg(long, default_value_t = 0.2)]
    pub step: f64,
    #[arg(long, default_value_t = 0.5)]
    pub decay: f64,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        SolverConfig {
            lambda: self.lambda,
            epsilon: self.epsilon,
            eta: self.step,
            decay: self.decay,
            t_max: self.max_outer,
            k_max: self.max_inner,
            ..Default::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "ccicp")]
    pub method: Method,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub model: PathBuf,
    /// CSV of the objective after every outer iteration.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub data: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "ccicp,cccp,flip,clip,shift,klr-psd")]
    pub methods: Vec<Method>,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0.5)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = TL1_TAU_FACTOR)]
    pub tau_factor: f64,
    /// RBF width for klr-psd; chosen by cross-validation when absent.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub squared_exponent: bool,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<iklr::Error> for CliError {
    fn from(e: iklr::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(e) => write!(f, "error: {e:#}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn load(path: &Path) -> CliResult<Dataset> {
    Ok(load_dataset(path)?)
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(CliError::from)
}

/// Resolves kernel flags against a data set. `method` is only used to train
/// candidates during sigma cross-validation.
fn resolve_kernel(
    args: &KernelArgs,
    data: &Dataset,
    method: Method,
    config: &SolverConfig,
    seed: u64,
) -> CliResult<KernelSpec> {
    match args.kernel {
        KernelKind::Tl1 => {
            if !(args.tau_factor > 0.0) {
                return Err(CliError::Usage("--tau-factor must be positive".into()));
            }
            Ok(KernelSpec::tl1(args.tau_factor * data.m() as f64)?)
        }
        KernelKind::Rbf => match (args.sigma, args.cv_sigma) {
            (Some(sigma), _) => KernelSpec::rbf(sigma, args.squared_exponent).map_err(|e| CliError::Usage(e.to_string())),
            (None, true) => {
                let sigma = cv_sigma(data, method, config, args.squared_exponent, seed)?;
                Ok(KernelSpec::rbf(sigma, args.squared_exponent)?)
            }
            (None, false) => Err(CliError::Usage("--kernel rbf needs --sigma or --cv-sigma".into())),
        },
    }
}

fn cv_sigma(data: &Dataset, method: Method, config: &SolverConfig, squared: bool, seed: u64) -> CliResult<f64> {
    let normalized = iklr::data::apply_normalizer(&iklr::fit_normalizer(data), data)?;
    let grid = default_sigma_grid(normalized.features().view());
    let selection = select_rbf_sigma(data, &grid, CV_FOLDS, seed, |fit, val, sigma| {
        let spec = KernelSpec::rbf(sigma, squared)?;
        let (model, _) = train_model_detailed(fit, &spec, config, method)?;
        evaluate(&model, val)
    })?;
    Ok(selection.sigma)
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Gram(a) => cmd_gram(a),
        Command::Decompose(a) => cmd_decompose(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Benchmark(a) => cmd_benchmark(a),
    }
}

/// Twelve decimals with trailing zeros dropped, for header comments.
fn readable(v: f64) -> String {
    let s = format!("{v:.12}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn cmd_gram(a: GramArgs) -> CliResult<()> {
    let data = load(&a.data)?;
    let spec = resolve_kernel(&a.kernel, &data, Method::KlrPsd, &SolverConfig::default(), 0)?;
    let x = iklr::fit_normalizer(&data).transform(data.features())?;
    let k = gram_matrix(&spec, x.view())?;
    let comment = match &spec {
        KernelSpec::Tl1 { tau } => format!(
            "kernel=tl1 tau_factor={} m={} tau={}",
            a.kernel.tau_factor,
            data.m(),
            readable(*tau)
        ),
        other => format!("kernel={other}"),
    };
    let mut buf = Vec::new();
    render_matrix_csv(&mut buf, k.view(), Some(&comment)).context("rendering Gram matrix")?;
    write_file(&a.out, &String::from_utf8_lossy(&buf))?;
    println!("wrote {}x{} Gram matrix to {} ({comment})", k.n(), k.n(), a.out.display());
    Ok(())
}

fn cmd_decompose(a: DecomposeArgs) -> CliResult<()> {
    let k: KernelMatrix = match (&a.kernel_matrix, &a.data) {
        (Some(path), _) => read_kernel_csv(path)?,
        (None, Some(path)) => {
            let data = load(path)?;
            let spec = resolve_kernel(&a.kernel, &data, Method::KlrPsd, &SolverConfig::default(), 0)?;
            let x = iklr::fit_normalizer(&data).transform(data.features())?;
            gram_matrix(&spec, x.view())?
        }
        (None, None) => return Err(CliError::Usage("give --kernel-matrix or --data".into())),
    };
    if !k.is_symmetric() {
        return Err(CliError::Runtime(anyhow::anyhow!("kernel matrix is not symmetric")));
    }
    if !(a.lambda > 0.0) {
        return Err(CliError::Usage("--lambda must be positive".into()));
    }
    let eig = eigh(&k)?;
    let rho = match a.rho.as_str() {
        "auto" => choose_rho(&eig),
        s => s
            .parse::<f64>()
            .map_err(|_| CliError::Usage(format!("--rho expects `auto` or a number, got {s:?}")))?,
    };
    let pd = positive_decomposition(&k, &eig, rho)?;
    let n = k.n();
    // The bound does not depend on the labels.
    let instance = ProblemInstance::new(pd.clone(), ndarray::Array1::ones(n), a.lambda)?;
    let bound = theorem_bound(&instance);

    let mut out = String::new();
    let _ = writeln!(out, "n            {n}");
    let _ = writeln!(out, "mu_min       {}", format_f64(eig.min_eigenvalue()));
    let _ = writeln!(out, "mu_max       {}", format_f64(eig.max_eigenvalue()));
    let _ = writeln!(out, "v            {}", eig.nonnegative_count());
    let _ = writeln!(out, "rho          {}", format_f64(rho));
    let _ = writeln!(out, "kplus_inf    {}", format_f64(inf_norm(pd.k_plus.view())));
    let _ = writeln!(out, "kminus_inf   {}", format_f64(inf_norm(pd.k_minus.view())));
    let _ = writeln!(out, "theorem_bound {} (lambda {}, epsilon {}, {})",
        format_f64(bound),
        a.lambda,
        a.epsilon,
        if bound > a.epsilon { "satisfied" } else { "not satisfied" }
    );
    if eig.min_eigenvalue() < 0.0 {
        let _ = writeln!(out, "indefinite: {} negative eigenvalues", n - eig.nonnegative_count());
    } else {
        let _ = writeln!(out, "positive semidefinite: K- = rho I up to rounding");
    }
    print!("{out}");

    for (path, m) in [(&a.out_plus, &pd.k_plus), (&a.out_minus, &pd.k_minus)] {
        if let Some(path) = path {
            let mut buf = Vec::new();
            render_matrix_csv(&mut buf, m.view(), None).context("rendering matrix")?;
            write_file(path, &String::from_utf8_lossy(&buf))?;
        }
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> CliResult<()> {
    let data = load(&a.data)?;
    let config = a.solver.config();
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let spec = resolve_kernel(&a.kernel, &data, a.method, &config, a.seed)?;
    let (model, result) = train_model_detailed(&data, &spec, &config, a.method)?;
    save_model(&model, &a.model)?;

    if let Some(path) = &a.trace {
        let mut csv = String::from("outer_iteration,objective\n");
        for (t, f) in &result.objective_trace {
            let _ = writeln!(csv, "{t},{}", format_f64(*f));
        }
        write_file(path, &csv)?;
    }

    let train_acc = evaluate(&model, &data)?;
    println!("method              {}", a.method);
    println!("kernel              {spec}");
    println!("lambda              {}", model.meta.lambda);
    println!("epsilon             {}", model.meta.epsilon);
    println!("outer_iterations    {}", result.outer_iterations);
    println!("gradient_evals      {}", result.inner_gradient_evaluations);
    println!("stopped_by          {:?}", result.converged_by);
    println!("final_objective     {}", format_f64(model.meta.final_objective));
    println!("train_accuracy      {train_acc:.4}");
    println!("model               {}", a.model.display());
    Ok(())
}

fn score(a: &PredictArgs) -> CliResult<(Dataset, ndarray::Array1<f64>)> {
    let model = load_model(&a.model)?;
    let data = load(&a.data)?;
    let scores = predict_scores(&model, data.features().view())?;
    Ok((data, scores))
}

fn cmd_predict(a: PredictArgs) -> CliResult<()> {
    let (_, scores) = score(&a)?;
    let labels = classify(&scores);
    let mut csv = String::from("index,score,label\n");
    for (i, (s, l)) in scores.iter().zip(&labels).enumerate() {
        let _ = writeln!(csv, "{i},{},{}", format_f64(*s), *l as i32);
    }
    match &a.out {
        Some(path) => write_file(path, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn cmd_eval(a: PredictArgs) -> CliResult<()> {
    let (data, scores) = score(&a)?;
    let acc = iklr::accuracy(&classify(&scores), data.labels());
    println!("accuracy {acc:.6}");
    if let Some(path) = &a.out {
        write_file(path, &format!("accuracy\n{}\n", format_f64(acc)))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub dataset: String,
    pub method: Method,
    pub repeat: usize,
    pub accuracy: f64,
    pub train_seconds: f64,
    pub test_seconds: f64,
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn cmd_benchmark(a: BenchmarkArgs) -> CliResult<()> {
    if a.repeats == 0 {
        return Err(CliError::Usage("--repeats must be at least 1".into()));
    }
    if !(a.train_fraction > 0.0 && a.train_fraction < 1.0) {
        return Err(CliError::Usage("--train-fraction must lie in (0, 1)".into()));
    }
    let config = a.solver.config();
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let mut rows = Vec::new();
    for path in &a.data {
        let data = load(path)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        for r in 0..a.repeats {
            let seed = a.seed + r as u64;
            let (train, test) = split(&data, a.train_fraction, seed)?;
            for &method in &a.methods {
                let kernel = KernelArgs {
                    kernel: if method == Method::KlrPsd { KernelKind::Rbf } else { KernelKind::Tl1 },
                    tau_factor: a.tau_factor,
                    sigma: a.sigma,
                    squared_exponent: a.squared_exponent,
                    cv_sigma: true,
                };
                let spec = resolve_kernel(&kernel, &train, method, &config, seed)?;
                let t0 = Instant::now();
                let (model, _) = train_model_detailed(&train, &spec, &config, method)
                    .with_context(|| format!("{name}: {method}, repeat {r}"))?;
                let train_seconds = t0.elapsed().as_secs_f64();
                let t1 = Instant::now();
                let accuracy = evaluate(&model, &test)?;
                let test_seconds = t1.elapsed().as_secs_f64();
                rows.push(BenchmarkRow {
                    dataset: name.clone(),
                    method,
                    repeat: r,
                    accuracy,
                    train_seconds,
                    test_seconds,
                });
            }
        }
    }

    if let Some(path) = &a.out {
        let mut csv = String::from("dataset,method,repeat,accuracy,train_seconds,test_seconds\n");
        for row in &rows {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{}",
                row.dataset,
                row.method,
                row.repeat,
                format_f64(row.accuracy),
                format_f64(row.train_seconds),
                format_f64(row.test_seconds)
            );
        }
        write_file(path, &csv)?;
    }
    print!("{}", render_report(&rows));
    Ok(())
}

/// Aligned mean/std table keyed by (dataset, method) in first-seen order.
pub fn render_report(rows: &[BenchmarkRow]) -> String {
    let mut keys: Vec<(String, Method)> = Vec::new();
    for row in rows {
        let key = (row.dataset.clone(), row.method);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let mut out = format!(
        "{:<16} {:<8} {:>8} {:>8} {:>12} {:>12}\n",
        "dataset", "method", "acc", "std", "train_s", "test_s"
    );
    for (dataset, method) in keys {
        let sel: Vec<&BenchmarkRow> = rows
            .iter()
            .filter(|r| r.dataset == dataset && r.method == method)
            .collect();
        let acc: Vec<f64> = sel.iter().map(|r| r.accuracy).collect();
        let (mean, std) = mean_std(&acc);
        let train = sel.iter().map(|r| r.train_seconds).sum::<f64>() / sel.len() as f64;
        let test = sel.iter().map(|r| r.test_seconds).sum::<f64>() / sel.len() as f64;
        let _ = writeln!(
            out,
            "{:<16} {:<8} {:>8.4} {:>8.4} {:>12.6} {:>12.6}",
            dataset,
            method.name(),
            mean,
            std,
            train,
            test
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solver_flags_default_to_reference_settings() {
        let cli = Cli::try_parse_from(["iklr", "train", "--data", "d.csv", "--model", "m.txt"]).unwrap();
        let Command::Train(t) = cli.command else { panic!() };
        let cfg = t.solver.config();
        let d = SolverConfig::default();
        assert_eq!((cfg.lambda, cfg.epsilon, cfg.eta, cfg.decay, cfg.t_max), (1.0, 1.0, 0.2, 0.5, 15));
        assert_eq!((cfg.lambda, cfg.epsilon, cfg.eta, cfg.decay, cfg.t_max, cfg.k_max), (d.lambda, d.epsilon, d.eta, d.decay, d.t_max, d.k_max));
        assert_eq!(t.method, Method::Ccicp);
    }

    #[test]
    fn method_list_parsing() {
        let cli = Cli::try_parse_from(["iklr", "benchmark", "--data", "a.csv", "--methods", "ccicp,klr-psd"]).unwrap();
        let Command::Benchmark(b) = cli.command else { panic!() };
        assert_eq!(b.methods, vec![Method::Ccicp, Method::KlrPsd]);
        assert!(Cli::try_parse_from(["iklr", "benchmark", "--data", "a.csv", "--methods", "svm"]).is_err());
    }

    #[test]
    fn mean_and_sample_std() {
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn report_groups_rows() {
        let row = |method, repeat, accuracy| BenchmarkRow {
            dataset: "toy".into(),
            method,
            repeat,
            accuracy,
            train_seconds: 0.0,
            test_seconds: 0.0,
        };
        let text = render_report(&[row(Method::Ccicp, 0, 0.5), row(Method::Cccp, 0, 1.0), row(Method::Ccicp, 1, 1.0)]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("toy") && lines[1].contains("ccicp") && lines[1].contains("0.7500"));
        assert!(lines[2].contains("cccp") && lines[2].contains("1.0000"));
    }
}
