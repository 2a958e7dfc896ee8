//! Reference implementations used as oracles by the acceptance suite.
//! Nothing here calls into the `iklr` numerical code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub fn eigenvalues(a: &Array2<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = SymmetricEigen::new(to_dmatrix(a)).eigenvalues.iter().copied().collect();
    v.sort_by(|x, y| y.total_cmp(x));
    v
}

pub fn min_eigenvalue(a: &Array2<f64>) -> f64 {
    *eigenvalues(a).last().unwrap()
}

pub fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
    let mut a = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let v = rng.gen_range(-1.0..=1.0);
            a[[i, j]] = v;
            a[[j, i]] = v;
        }
    }
    a
}

pub fn random_labels(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    let mut y = Array1::from_shape_fn(n, |_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 });
    y[0] = 1.0;
    if n > 1 {
        y[1] = -1.0;
    }
    y
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus_neg(z: f64) -> f64 {
    // ln(1 + e^{-z})
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// Convex KLR objective `lambda/2 b'Kb + mean ln(1 + exp(-y_i (Kb)_i))`.
pub fn klr_objective(k: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, beta: &DVector<f64>) -> f64 {
    let kb = k * beta;
    let n = y.len() as f64;
    0.5 * lambda * beta.dot(&kb) + kb.iter().zip(y.iter()).map(|(m, yy)| softplus_neg(yy * m)).sum::<f64>() / n
}

/// Damped Newton iteration on the representer residual
/// `r = lambda b - y (1 - q) / n`, whose zero is the KLR optimum.
pub fn newton_klr(k: &Array2<f64>, y: &Array1<f64>, lambda: f64) -> Array1<f64> {
    let n = y.len();
    let km = to_dmatrix(k);
    let yv = DVector::from_iterator(n, y.iter().copied());
    let mut beta = DVector::<f64>::zeros(n);
    for _ in 0..200 {
        let kb = &km * &beta;
        let q: Vec<f64> = (0..n).map(|i| sigmoid(yv[i] * kb[i])).collect();
        let r = DVector::from_fn(n, |i, _| lambda * beta[i] - yv[i] * (1.0 - q[i]) / n as f64);
        if r.amax() < 1e-15 {
            break;
        }
        // d/db of r: lambda I + W K / n with W = diag(q (1 - q)).
        let jac = DMatrix::from_fn(n, n, |i, j| {
            (if i == j { lambda } else { 0.0 }) + q[i] * (1.0 - q[i]) * km[(i, j)] / n as f64
        });
        let step = jac.lu().solve(&(-&r)).expect("Newton system is nonsingular");
        let f0 = klr_objective(&km, &yv, lambda, &beta);
        let mut t = 1.0;
        loop {
            let cand = &beta + &step * t;
            if klr_objective(&km, &yv, lambda, &cand) <= f0 + 1e-15 || t < 1e-10 {
                beta = cand;
                break;
            }
            t *= 0.5;
        }
    }
    Array1::from_iter(beta.iter().copied())
}

/// Two noisy blobs separated along the first axis.
pub fn blobs(rng: &mut ChaCha8Rng, n: usize, m: usize, gap: f64) -> (Array2<f64>, Array1<f64>) {
    let mut x = Array2::<f64>::zeros((n, m));
    let mut y = Array1::<f64>::zeros(n);
    for i in 0..n {
        let c = if i % 2 == 0 { 1.0 } else { -1.0 };
        y[i] = c;
        for j in 0..m {
            let shift = if j == 0 { c * gap } else { 0.0 };
            x[[i, j]] = shift + rng.gen_range(-1.0..1.0);
        }
    }
    (x, y)
}

pub fn tl1(u: &[f64], v: &[f64], tau: f64) -> f64 {
    let d: f64 = u.iter().zip(v).map(|(a, b)| (a - b).abs()).sum();
    (tau - d).max(0.0)
}

pub fn rbf_literal(u: &[f64], v: &[f64], sigma: f64) -> f64 {
    let d: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    (-d / (sigma * sigma)).exp()
}

/// Min-max scaling fitted on `train` and applied to `x`.
pub fn minmax(train: &Array2<f64>, x: &Array2<f64>) -> Array2<f64> {
    let m = train.ncols();
    let mut out = x.clone();
    for j in 0..m {
        let col = train.column(j);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for i in 0..x.nrows() {
            out[[i, j]] = if hi > lo { (x[[i, j]] - lo) / (hi - lo) } else { 0.0 };
        }
    }
    out
}

pub fn kernel_matrix(a: &Array2<f64>, b: &Array2<f64>, k: impl Fn(&[f64], &[f64]) -> f64) -> Array2<f64> {
    let rows: Vec<Vec<f64>> = a.rows().into_iter().map(|r| r.to_vec()).collect();
    let cols: Vec<Vec<f64>> = b.rows().into_iter().map(|r| r.to_vec()).collect();
    Array2::from_shape_fn((a.nrows(), b.nrows()), |(i, j)| k(&rows[i], &cols[j]))
}
