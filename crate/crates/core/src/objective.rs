//! Scalar and vector functions of the indefinite KLR problem
//!
//! ```text
//! f(b)      = (lambda/2) b'Kb + (1/n) sum_i ln(1 + exp(-y_i (Kb)_i))
//! g(b)      = (lambda/2) b'K+b + (1/n) sum_i ln(1 + exp(-y_i (Kb)_i))
//! h(b)      = (lambda/2) b'K-b
//! f~(b; bt) = g(b) - lambda b'K- bt
//! ```
//!
//! No bias term is modelled.

use ndarray::{Array1, ArrayView1};

use crate::error::{Error, Result};
use crate::kernel::KernelMatrix;
use crate::spectral::{decompose, eigh, positive_decomposition, PositiveDecomposition};

/// Logistic function `1 / (1 + exp(-x))`, evaluated without overflow.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + exp(-z))` as `max(0, -z) + ln(1 + exp(-|z|))`.
pub fn logistic_loss(z: f64) -> f64 {
    (-z).max(0.0) + (-z.abs()).exp().ln_1p()
}

#[derive(Debug, Clone)]
pub struct ProblemInstance {
    decomp: PositiveDecomposition,
    labels: Array1<f64>,
    lambda: f64,
}

impl ProblemInstance {
    pub fn new(decomp: PositiveDecomposition, labels: Array1<f64>, lambda: f64) -> Result<Self> {
        let n = decomp.n();
        if labels.len() != n {
            return Err(Error::DimensionMismatch {
                context: "labels vs kernel size",
                expected: n,
                found: labels.len(),
            });
        }
        if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(Error::InvalidArgument("labels must be +1 or -1".into()));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
        }
        Ok(ProblemInstance {
            decomp,
            labels,
            lambda,
        })
    }

    /// Decomposes `k` with the default rho rule, or with `rho` when given.
    pub fn from_kernel(k: KernelMatrix, labels: Array1<f64>, lambda: f64, rho: Option<f64>) -> Result<Self> {
        let decomp = match rho {
            None => decompose(&k)?.1,
            Some(rho) => {
                let eig = eigh(&k)?;
                positive_decomposition(&k, &eig, rho)?
            }
        };
        ProblemInstance::new(decomp, labels, lambda)
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn kernel(&self) -> &KernelMatrix {
        &self.decomp.k_original
    }

    pub fn decomposition(&self) -> &PositiveDecomposition {
        &self.decomp
    }

    pub fn labels(&self) -> &Array1<f64> {
        &self.labels
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub(crate) fn check_len(&self, v: ArrayView1<f64>, context: &'static str) -> Result<()> {
        if v.len() != self.n() {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.n(),
                found: v.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn k_dot(&self, v: ArrayView1<f64>) -> Array1<f64> {
        self.decomp.k_original.entries().dot(&v)
    }

    pub(crate) fn k_plus_dot(&self, v: ArrayView1<f64>) -> Array1<f64> {
        self.decomp.k_plus.entries().dot(&v)
    }

    pub(crate) fn k_minus_dot(&self, v: ArrayView1<f64>) -> Array1<f64> {
        self.decomp.k_minus.entries().dot(&v)
    }

    /// Mean logistic loss given `Kb`.
    pub(crate) fn mean_loss(&self, kb: &Array1<f64>) -> f64 {
        let total: f64 = kb
            .iter()
            .zip(&self.labels)
            .map(|(m, y)| logistic_loss(y * m))
            .sum();
        total / self.n() as f64
    }

    /// `(1/n) K (y * (1 - q))`, the loss contribution to the negative
    /// gradient, given `Kb`.
    pub(crate) fn loss_pull(&self, kb: &Array1<f64>) -> Array1<f64> {
        let n = self.n() as f64;
        let r = Array1::from_iter(
            kb.iter()
                .zip(&self.labels)
                .map(|(m, y)| y * (1.0 - sigmoid(y * m)) / n),
        );
        self.k_dot(r.view())
    }
}

/// Per-sample quantities at a given coefficient vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientWorkspace {
    /// `exp(-y_i (Kb)_i)`, clamped to `f64::MAX` on overflow.
    pub w_diag: Array1<f64>,
    /// Posteriors `sigmoid(y_i (Kb)_i)`.
    pub q: Array1<f64>,
    /// `q_i (1 - q_i)`.
    pub h_diag: Array1<f64>,
}

impl GradientWorkspace {
    pub fn new(instance: &ProblemInstance, beta: ArrayView1<f64>) -> Result<Self> {
        instance.check_len(beta, "beta length")?;
        let kb = instance.k_dot(beta);
        let margins = &kb * instance.labels();
        let w_diag = margins.mapv(|z| (-z).exp().min(f64::MAX));
        let q = margins.mapv(sigmoid);
        let h_diag = q.mapv(|p| p * (1.0 - p));
        Ok(GradientWorkspace { w_diag, q, h_diag })
    }
}

pub fn posterior_q(instance: &ProblemInstance, beta: ArrayView1<f64>) -> Result<Array1<f64>> {
    instance.check_len(beta, "beta length")?;
    let kb = instance.k_dot(beta);
    Ok(Array1::from_iter(
        kb.iter().zip(instance.labels()).map(|(m, y)| sigmoid(y * m)),
    ))
}

/// Full objective. The quadratic term uses the original `K`, not `K+ - K-`.
pub fn objective_f(instance: &ProblemInstance, beta: ArrayView1<f64>) -> Result<f64> {
    instance.check_len(beta, "beta length")?;
    let kb = instance.k_dot(beta);
    Ok(0.5 * instance.lambda() * beta.dot(&kb) + instance.mean_loss(&kb))
}

/// Convex parts `(g, h)` with `f = g - h`.
pub fn split_gh(instance: &ProblemInstance, beta: ArrayView1<f64>) -> Result<(f64, f64)> {
    instance.check_len(beta, "beta length")?;
    let kb = instance.k_dot(beta);
    let lam = instance.lambda();
    let g = 0.5 * lam * beta.dot(&instance.k_plus_dot(beta)) + instance.mean_loss(&kb);
    let h = 0.5 * lam * beta.dot(&instance.k_minus_dot(beta));
    Ok((g, h))
}

/// Convex surrogate with `h` linearized at `beta_t`.
pub fn surrogate_value(
    instance: &ProblemInstance,
    beta: ArrayView1<f64>,
    beta_t: ArrayView1<f64>,
) -> Result<f64> {
    instance.check_len(beta, "beta length")?;
    instance.check_len(beta_t, "beta_t length")?;
    let anchor = instance.k_minus_dot(beta_t) * instance.lambda();
    Ok(Surrogate::new(instance, anchor).value(beta).0)
}

/// `lambda K+ b - (1/n) K Y W q - lambda K- bt`, with `W q` evaluated as
/// `1 - q`.
pub fn surrogate_gradient(
    instance: &ProblemInstance,
    beta: ArrayView1<f64>,
    beta_t: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    instance.check_len(beta, "beta length")?;
    instance.check_len(beta_t, "beta_t length")?;
    let anchor = instance.k_minus_dot(beta_t) * instance.lambda();
    let s = Surrogate::new(instance, anchor);
    let (_, cache) = s.value(beta);
    Ok(s.gradient(&cache))
}

/// The surrogate for one outer iteration, with `lambda K- bt` precomputed.
pub(crate) struct Surrogate<'a> {
    instance: &'a ProblemInstance,
    anchor: Array1<f64>,
}

/// Products reused between a value and the gradient at the same point.
pub(crate) struct PointCache {
    kb: Array1<f64>,
    kpb: Array1<f64>,
}

impl<'a> Surrogate<'a> {
    pub(crate) fn new(instance: &'a ProblemInstance, anchor: Array1<f64>) -> Self {
        Surrogate { instance, anchor }
    }

    pub(crate) fn value(&self, beta: ArrayView1<f64>) -> (f64, PointCache) {
        let inst = self.instance;
        let kb = inst.k_dot(beta);
        let kpb = inst.k_plus_dot(beta);
        let v = 0.5 * inst.lambda() * beta.dot(&kpb) + inst.mean_loss(&kb) - beta.dot(&self.anchor);
        (v, PointCache { kb, kpb })
    }

    pub(crate) fn gradient(&self, cache: &PointCache) -> Array1<f64> {
        let pull = self.instance.loss_pull(&cache.kb);
        &cache.kpb * self.instance.lambda() - &pull - &self.anchor
    }
}
