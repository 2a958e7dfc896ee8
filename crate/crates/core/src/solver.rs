//! Concave-inexact-convex procedure (CCICP) and its exact-CCCP preset.
//!
//! Each outer iteration linearizes `h` at the current point and runs plain
//! gradient descent on the convex surrogate until
//! `|grad|_2 <= epsilon * |beta_k|_2`. The outer loop stops after `t_max`
//! iterations or once `|b_t - b_{t-1}|_2 / |b_t|_2 <= epsilon`.
//!
//! Gradient steps use the constant length `decay * eta`. A step that would
//! increase the surrogate is retried at half length, up to 30 times; if no
//! retry decreases it the inner loop ends at the current point. This keeps
//! the surrogate, and hence `f`, non-increasing across outer iterations.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernel::KernelMatrix;
use crate::linalg::{cholesky, forward_substitute, inf_norm, norm2, norm_inf, spd_inverse};
use crate::objective::{objective_f, GradientWorkspace, ProblemInstance, Surrogate};
use crate::spectral::{eigh, PositiveDecomposition};

/// Inexactness used by the exact-CCCP preset.
pub const CCCP_EPSILON: f64 = 1e-4;
const MAX_HALVINGS: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub lambda: f64,
    /// Inner-loop inexactness and outer relative-change threshold.
    pub epsilon: f64,
    pub eta: f64,
    /// Multiplies `eta` to give the step length.
    pub decay: f64,
    pub t_max: usize,
    pub k_max: usize,
    pub rho_override: Option<f64>,
    pub beta0: Option<Array1<f64>>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lambda: 1.0,
            epsilon: 1.0,
            eta: 0.2,
            decay: 0.5,
            t_max: 15,
            k_max: 1000,
            rho_override: None,
            beta0: None,
        }
    }
}

impl SolverConfig {
    /// Same settings with `epsilon = 1e-4`.
    pub fn cccp_preset(&self) -> Self {
        SolverConfig {
            epsilon: CCCP_EPSILON,
            ..self.clone()
        }
    }

    pub fn step_length(&self) -> f64 {
        self.decay * self.eta
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
            }
        };
        positive("lambda", self.lambda)?;
        positive("epsilon", self.epsilon)?;
        positive("eta", self.eta)?;
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "decay must lie in (0, 1], got {}",
                self.decay
            )));
        }
        if self.t_max == 0 {
            return Err(Error::InvalidArgument("t_max must be at least 1".into()));
        }
        if self.k_max == 0 {
            return Err(Error::InvalidArgument("k_max must be at least 1".into()));
        }
        Ok(())
    }

    /// Decomposes `k` (honouring `rho_override`) into a problem instance.
    pub fn instance(&self, k: KernelMatrix, labels: Array1<f64>) -> Result<ProblemInstance> {
        ProblemInstance::from_kernel(k, labels, self.lambda, self.rho_override)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvergedBy {
    RelativeChange,
    IterationCap,
    /// Gradient-norm test of a single convex solve (the KLR reference).
    GradientNorm,
    /// No halved step changed the iterate: the descent hit rounding level.
    Stalled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub beta: Array1<f64>,
    pub outer_iterations: usize,
    pub inner_gradient_evaluations: usize,
    /// `(outer iteration, f)` including the starting point.
    pub objective_trace: Vec<(usize, f64)>,
    pub converged_by: ConvergedBy,
}

impl SolveResult {
    pub fn final_objective(&self) -> f64 {
        self.objective_trace.last().map(|&(_, f)| f).unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolve {
    pub beta: Array1<f64>,
    pub gradient_evals: usize,
    /// Accepted gradient steps.
    pub steps: usize,
    pub stalled: bool,
}

/// Inexact minimization of the surrogate linearized at `beta_t`, started
/// from `beta_t`.
pub fn inner_solve(
    instance: &ProblemInstance,
    beta_t: ArrayView1<f64>,
    config: &SolverConfig,
) -> Result<InnerSolve> {
    instance.check_len(beta_t, "beta_t length")?;
    let anchor = instance.k_minus_dot(beta_t) * instance.lambda();
    descend(&Surrogate::new(instance, anchor), beta_t.to_owned(), config)
}

fn descend(surrogate: &Surrogate<'_>, start: Array1<f64>, config: &SolverConfig) -> Result<InnerSolve> {
    let mut beta = start;
    let (mut value, mut cache) = surrogate.value(beta.view());
    let mut gradient_evals = 0;
    let mut steps = 0;
    let mut stalled = false;
    loop {
        let grad = surrogate.gradient(&cache);
        gradient_evals += 1;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { iteration: steps });
        }
        if norm2(grad.view()) <= config.epsilon * norm2(beta.view()) || steps == config.k_max {
            break;
        }

        let mut step = config.step_length();
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand = &beta - &(&grad * step);
            let (cv, cc) = surrogate.value(cand.view());
            if cv <= value {
                accepted = Some((cand, cv, cc));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, cv, cc)) = accepted.filter(|(cand, _, _)| *cand != beta) else {
            stalled = true;
            break;
        };
        beta = cand;
        value = cv;
        cache = cc;
        steps += 1;
    }
    Ok(InnerSolve {
        beta,
        gradient_evals,
        steps,
        stalled,
    })
}

fn relative_change(new: &Array1<f64>, old: &Array1<f64>) -> f64 {
    let denom = norm2(new.view());
    let diff = norm2((new - old).view());
    if denom > 0.0 {
        diff / denom
    } else if norm2(old.view()) == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

fn start_point(instance: &ProblemInstance, config: &SolverConfig) -> Result<Array1<f64>> {
    match &config.beta0 {
        Some(b) => {
            instance.check_len(b.view(), "beta0 length")?;
            Ok(b.clone())
        }
        None => Ok(Array1::zeros(instance.n())),
    }
}

/// CCICP outer loop.
pub fn ccicp_train(instance: &ProblemInstance, config: &SolverConfig) -> Result<SolveResult> {
    config.validate()?;
    let mut beta = start_point(instance, config)?;
    let mut trace = vec![(0, objective_f(instance, beta.view())?)];
    let mut evals = 0;
    let mut converged_by = ConvergedBy::IterationCap;

    for t in 1..=config.t_max {
        let inner = inner_solve(instance, beta.view(), config)?;
        evals += inner.gradient_evals;
        let change = relative_change(&inner.beta, &beta);
        beta = inner.beta;
        trace.push((t, objective_f(instance, beta.view())?));
        if change <= config.epsilon {
            converged_by = ConvergedBy::RelativeChange;
            break;
        }
    }

    Ok(SolveResult {
        beta,
        outer_iterations: trace.len() - 1,
        inner_gradient_evaluations: evals,
        objective_trace: trace,
        converged_by,
    })
}

/// CCICP with `epsilon` forced to `1e-4`.
pub fn cccp_train(instance: &ProblemInstance, config: &SolverConfig) -> Result<SolveResult> {
    ccicp_train(instance, &config.cccp_preset())
}

/// Gradient descent on the convex objective of standard kernel logistic
/// regression, with the same step and stopping rules as the inner loop and
/// at most `k_max` steps. `k` is expected to be positive semidefinite.
pub fn klr_train(k: &KernelMatrix, labels: &Array1<f64>, config: &SolverConfig) -> Result<SolveResult> {
    config.validate()?;
    let n = k.n();
    let zero = KernelMatrix::new(Array2::zeros((n, n)))?;
    let split = PositiveDecomposition::from_parts(k.clone(), zero, 0.0, k.clone())?;
    let instance = ProblemInstance::new(split, labels.clone(), config.lambda)?;

    let start = start_point(&instance, config)?;
    let f0 = objective_f(&instance, start.view())?;
    let surrogate = Surrogate::new(&instance, Array1::zeros(n));
    let inner = descend(&surrogate, start, config)?;
    let f1 = objective_f(&instance, inner.beta.view())?;
    let converged_by = if inner.stalled {
        ConvergedBy::Stalled
    } else if inner.steps < config.k_max {
        ConvergedBy::GradientNorm
    } else {
        ConvergedBy::IterationCap
    };
    Ok(SolveResult {
        beta: inner.beta,
        outer_iterations: 1,
        inner_gradient_evaluations: inner.gradient_evals,
        objective_trace: vec![(0, f0), (1, f1)],
        converged_by,
    })
}

/// Right-hand side of the contraction condition on the inexactness:
/// `lambda (|K+| - |K-|) - |K|^2 / (4n)` with induced infinity norms. May be
/// negative.
pub fn theorem_bound(instance: &ProblemInstance) -> f64 {
    let d = instance.decomposition();
    let k = inf_norm(d.k_original.view());
    instance.lambda() * (inf_norm(d.k_plus.view()) - inf_norm(d.k_minus.view()))
        - k * k / (4.0 * instance.n() as f64)
}

/// Linearized outer map `M' = lambda K- ((1/n) K H K + lambda K+)^-1` at
/// `beta`, with its spectral radius.
///
/// The radius comes from the symmetric similarity `L^-1 K- L^-T`, where
/// `L L^T` is the Cholesky factorization of the bracketed matrix.
pub fn convergence_matrix(instance: &ProblemInstance, beta: ArrayView1<f64>) -> Result<(Array2<f64>, f64)> {
    let ws = GradientWorkspace::new(instance, beta)?;
    let d = instance.decomposition();
    let n = instance.n();
    let lam = instance.lambda();
    let k = d.k_original.entries();

    let mut hk = k.clone();
    for (mut row, &h) in hk.rows_mut().into_iter().zip(&ws.h_diag) {
        row *= h / n as f64;
    }
    let mut inner = k.t().dot(&hk) + d.k_plus.entries() * lam;
    crate::kernel::mirror_lower(&mut inner);

    let m = d.k_minus.entries().dot(&spd_inverse(inner.view())?) * lam;

    let l = cholesky(inner.view())?;
    let mut x = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        x.column_mut(j)
            .assign(&forward_substitute(l.view(), d.k_minus.entries().column(j)));
    }
    let mut s = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        s.column_mut(j).assign(&forward_substitute(l.view(), x.row(j)));
    }
    let sym = KernelMatrix::symmetrized_from_lower((&s + &s.t()) * 0.5)?;
    let eig = eigh(&sym)?;
    let radius = lam * eig.max_eigenvalue().abs().max(eig.min_eigenvalue().abs());
    Ok((m, radius))
}

/// Empirical Lipschitz factor of one outer step, `max |phi(a) - phi(b)|_inf /
/// |a - b|_inf` over `trials` pairs drawn uniformly from `[-1, 1]^n`.
pub fn contraction_estimate(
    instance: &ProblemInstance,
    config: &SolverConfig,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    if trials == 0 {
        return Err(Error::InvalidArgument("contraction estimate needs at least one trial".into()));
    }
    config.validate()?;
    let n = instance.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let a = Array1::from_shape_fn(n, |_| rng.gen_range(-1.0..=1.0));
        let b = Array1::from_shape_fn(n, |_| rng.gen_range(-1.0..=1.0));
        worst = worst.max(pair_ratio(instance, config, &a, &b)?.unwrap_or(0.0));
    }
    Ok(worst)
}

/// `|phi(a) - phi(b)|_inf / |a - b|_inf`, or `None` when `a == b`.
pub fn pair_ratio(
    instance: &ProblemInstance,
    config: &SolverConfig,
    a: &Array1<f64>,
    b: &Array1<f64>,
) -> Result<Option<f64>> {
    let denom = norm_inf((a - b).view());
    if denom == 0.0 {
        return Ok(None);
    }
    let pa = inner_solve(instance, a.view(), config)?.beta;
    let pb = inner_solve(instance, b.view(), config)?.beta;
    Ok(Some(norm_inf((&pa - &pb).view()) / denom))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub theorem_bound: f64,
    /// `epsilon < theorem_bound`.
    pub bound_satisfied: bool,
    pub convergence_matrix_spectral_radius: f64,
    pub contraction_estimate: f64,
}

/// Runtime convergence diagnostics at `beta` (typically the solver output).
pub fn diagnostics(
    instance: &ProblemInstance,
    config: &SolverConfig,
    beta: ArrayView1<f64>,
    trials: usize,
    seed: u64,
) -> Result<Diagnostics> {
    let bound = theorem_bound(instance);
    let (_, radius) = convergence_matrix(instance, beta)?;
    Ok(Diagnostics {
        theorem_bound: bound,
        bound_satisfied: config.epsilon < bound,
        convergence_matrix_spectral_radius: radius,
        contraction_estimate: contraction_estimate(instance, config, trials, seed)?,
    })
}
