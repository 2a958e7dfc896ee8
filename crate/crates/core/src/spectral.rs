//! Symmetric eigendecomposition, the rho-shifted positive decomposition
//! `K = K+ - K-`, and the flip/clip/shift spectrum repairs.
//!
//! Eigenvectors are stored as the *rows* of `basis`, so that
//! `K = basis^T * diag(eigenvalues) * basis`.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::kernel::{mirror_lower, KernelMatrix};
use crate::linalg::{frobenius_norm, inf_norm};

const JACOBI_RELATIVE_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;
/// Accepted asymmetry, relative to the largest entry, before `eigh` refuses
/// a matrix.
const SYMMETRY_TOL: f64 = 1e-12;
const RHO_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    /// Descending.
    pub eigenvalues: Array1<f64>,
    /// Row `i` is the unit eigenvector of `eigenvalues[i]`.
    pub basis: Array2<f64>,
}

impl EigenDecomposition {
    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues[self.n() - 1]
    }

    /// Number of nonnegative eigenvalues (zeros included).
    pub fn nonnegative_count(&self) -> usize {
        self.eigenvalues.iter().filter(|&&mu| mu >= 0.0).count()
    }

    /// `basis^T * diag(values) * basis`, mirrored so the result is exactly
    /// symmetric.
    pub fn reconstruct_with(&self, values: &Array1<f64>) -> Array2<f64> {
        assert_eq!(values.len(), self.n());
        let mut scaled = self.basis.clone();
        for (mut row, &d) in scaled.rows_mut().into_iter().zip(values) {
            row *= d;
        }
        let mut m = self.basis.t().dot(&scaled);
        mirror_lower(&mut m);
        m
    }

    pub fn reconstruct(&self) -> Array2<f64> {
        self.reconstruct_with(&self.eigenvalues)
    }
}

/// Cyclic Jacobi eigensolver.
///
/// Sweeps over all `(p, q)` pairs until the off-diagonal Frobenius norm is at
/// most `1e-12 * |K|_F`, with a cap of 100 sweeps. The result is sorted in
/// descending order and each eigenvector is oriented so that its
/// largest-magnitude component (lowest index on ties) is positive. The
/// routine is single-threaded and bitwise reproducible.
pub fn eigh(k: &KernelMatrix) -> Result<EigenDecomposition> {
    let n = k.n();
    if n == 0 {
        return Err(Error::InvalidArgument("empty matrix".into()));
    }
    let src = k.entries();
    if !k.is_symmetric() {
        let scale = src.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for i in 0..n {
            for j in 0..i {
                let diff = (src[[i, j]] - src[[j, i]]).abs();
                if !(diff <= SYMMETRY_TOL * scale) {
                    return Err(Error::NotSymmetric { row: i, col: j, diff });
                }
            }
        }
    }

    // Row-major working copy built from the lower triangle.
    let mut a = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..=i {
            a[i * n + j] = src[[i, j]];
            a[j * n + i] = src[[i, j]];
        }
    }
    let mut v = vec![0.0f64; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let tol = JACOBI_RELATIVE_TOL * frobenius_norm(src.view());
    let off_norm = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..i {
                s += a[i * n + j] * a[i * n + j];
            }
        }
        (2.0 * s).sqrt()
    };

    let mut converged = false;
    let mut row_p = vec![0.0f64; n];
    let mut row_q = vec![0.0f64; n];
    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_norm(&a) <= tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.is_infinite() {
                    0.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                if t == 0.0 {
                    a[p * n + q] = 0.0;
                    a[q * n + p] = 0.0;
                    continue;
                }
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                row_p.copy_from_slice(&a[p * n..(p + 1) * n]);
                row_q.copy_from_slice(&a[q * n..(q + 1) * n]);
                for r in 0..n {
                    let (xp, xq) = (row_p[r], row_q[r]);
                    a[p * n + r] = c * xp - s * xq;
                    a[q * n + r] = s * xp + c * xq;
                }
                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for r in 0..n {
                    if r != p && r != q {
                        a[r * n + p] = a[p * n + r];
                        a[r * n + q] = a[q * n + r];
                    }
                }

                // Rows of v hold eigenvectors, i.e. columns of Q with A = Q D Q^T.
                let (lo, hi) = v.split_at_mut(q * n);
                let vp = &mut lo[p * n..(p + 1) * n];
                let vq = &mut hi[..n];
                for (xp, xq) in vp.iter_mut().zip(vq.iter_mut()) {
                    let (bp, bq) = (*xp, *xq);
                    *xp = c * bp - s * bq;
                    *xq = s * bp + c * bq;
                }
            }
        }
    }
    if !converged {
        let off = off_norm(&a);
        if !(off <= tol) {
            return Err(Error::NoConvergence {
                sweeps: JACOBI_MAX_SWEEPS,
                off_norm: off,
            });
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]).then(i.cmp(&j)));

    let eigenvalues = Array1::from_iter(order.iter().map(|&i| a[i * n + i]));
    let mut basis = Array2::<f64>::zeros((n, n));
    for (dst, &src_row) in order.iter().enumerate() {
        let row = &v[src_row * n..(src_row + 1) * n];
        let mut lead = 0;
        for (idx, x) in row.iter().enumerate() {
            if x.abs() > row[lead].abs() {
                lead = idx;
            }
        }
        let sign = if row[lead] < 0.0 { -1.0 } else { 1.0 };
        for (c, x) in row.iter().enumerate() {
            basis[[dst, c]] = sign * x;
        }
    }
    Ok(EigenDecomposition { eigenvalues, basis })
}

/// `max(0, -mu_min) + 1e-6 * max(1, |mu_max|)`, which strictly exceeds
/// `-mu_min`.
pub fn choose_rho(eig: &EigenDecomposition) -> f64 {
    (-eig.min_eigenvalue()).max(0.0) + RHO_MARGIN * eig.max_eigenvalue().abs().max(1.0)
}

/// `K = K+ - K-` with both parts positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct PositiveDecomposition {
    pub k_plus: KernelMatrix,
    pub k_minus: KernelMatrix,
    pub rho: f64,
    pub k_original: KernelMatrix,
}

impl PositiveDecomposition {
    /// Assembles a decomposition from explicit parts. Only the shapes and the
    /// identity `K+ - K- = K` are checked, so callers may build degenerate
    /// splits (for instance `K- = 0`) for analysis.
    pub fn from_parts(
        k_plus: KernelMatrix,
        k_minus: KernelMatrix,
        rho: f64,
        k_original: KernelMatrix,
    ) -> Result<Self> {
        let n = k_original.n();
        for (what, m) in [("K+ size", &k_plus), ("K- size", &k_minus)] {
            if m.n() != n {
                return Err(Error::DimensionMismatch {
                    context: what,
                    expected: n,
                    found: m.n(),
                });
            }
        }
        let err = decomposition_error(&k_plus, &k_minus, &k_original);
        let tol = 1e-8 * inf_norm(k_original.view()).max(1.0);
        if !(err <= tol) {
            return Err(Error::InvalidArgument(format!(
                "K+ - K- differs from K by {err:e} (tolerance {tol:e})"
            )));
        }
        Ok(PositiveDecomposition {
            k_plus,
            k_minus,
            rho,
            k_original,
        })
    }

    pub fn n(&self) -> usize {
        self.k_original.n()
    }

    /// `max |(K+ - K-) - K|`.
    pub fn reconstruction_error(&self) -> f64 {
        decomposition_error(&self.k_plus, &self.k_minus, &self.k_original)
    }
}

fn decomposition_error(kp: &KernelMatrix, km: &KernelMatrix, k: &KernelMatrix) -> f64 {
    let (kp, km, k) = (kp.entries(), km.entries(), k.entries());
    let mut err = 0.0f64;
    for ((p, m), o) in kp.iter().zip(km.iter()).zip(k.iter()) {
        err = err.max(((p - m) - o).abs());
    }
    err
}

/// Shifted positive decomposition:
///
/// ```text
/// K+ = V^T diag(mu_1 + rho, .., mu_v + rho, rho, .., rho) V
/// K- = V^T diag(rho, .., rho, rho - mu_{v+1}, .., rho - mu_n) V
/// ```
///
/// where `mu_1..mu_v` are the nonnegative eigenvalues. `k` must be the matrix
/// `eig` was computed from.
pub fn positive_decomposition(
    k: &KernelMatrix,
    eig: &EigenDecomposition,
    rho: f64,
) -> Result<PositiveDecomposition> {
    if eig.n() != k.n() {
        return Err(Error::DimensionMismatch {
            context: "eigendecomposition vs kernel size",
            expected: k.n(),
            found: eig.n(),
        });
    }
    let neg_mu_min = -eig.min_eigenvalue();
    if !(rho > neg_mu_min) {
        return Err(Error::RhoTooSmall { rho, neg_mu_min });
    }
    let plus = eig.eigenvalues.mapv(|mu| if mu >= 0.0 { mu + rho } else { rho });
    let minus = eig.eigenvalues.mapv(|mu| if mu >= 0.0 { rho } else { rho - mu });
    Ok(PositiveDecomposition {
        k_plus: KernelMatrix::symmetrized_from_lower(eig.reconstruct_with(&plus))?,
        k_minus: KernelMatrix::symmetrized_from_lower(eig.reconstruct_with(&minus))?,
        rho,
        k_original: k.clone(),
    })
}

/// Eigendecomposition plus the default rho rule.
pub fn decompose(k: &KernelMatrix) -> Result<(EigenDecomposition, PositiveDecomposition)> {
    let eig = eigh(k)?;
    let rho = choose_rho(&eig);
    let pd = positive_decomposition(k, &eig, rho)?;
    Ok((eig, pd))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpectrumMode {
    /// Negative eigenvalues replaced by their absolute values.
    Flip,
    /// Negative eigenvalues set to zero.
    Clip,
    /// Every eigenvalue raised by `max(0, -mu_min)`.
    Shift,
}

impl SpectrumMode {
    pub const ALL: [SpectrumMode; 3] = [SpectrumMode::Flip, SpectrumMode::Clip, SpectrumMode::Shift];

    pub fn apply(self, eigenvalues: &Array1<f64>) -> Array1<f64> {
        match self {
            SpectrumMode::Flip => eigenvalues.mapv(f64::abs),
            SpectrumMode::Clip => eigenvalues.mapv(|mu| mu.max(0.0)),
            SpectrumMode::Shift => {
                let lo = eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
                let shift = (-lo).max(0.0);
                eigenvalues.mapv(|mu| mu + shift)
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SpectrumMode::Flip => "flip",
            SpectrumMode::Clip => "clip",
            SpectrumMode::Shift => "shift",
        }
    }
}

impl fmt::Display for SpectrumMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SpectrumMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flip" => Ok(SpectrumMode::Flip),
            "clip" => Ok(SpectrumMode::Clip),
            "shift" => Ok(SpectrumMode::Shift),
            other => Err(Error::InvalidArgument(format!(
                "unknown spectrum mode {other:?} (expected flip, clip or shift)"
            ))),
        }
    }
}

/// PSD matrix rebuilt from the modified spectrum in the original eigenbasis.
pub fn spectrum_modify(eig: &EigenDecomposition, mode: SpectrumMode) -> KernelMatrix {
    KernelMatrix::symmetrized_from_lower(eig.reconstruct_with(&mode.apply(&eig.eigenvalues)))
        .expect("reconstruction is square")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn km(m: Array2<f64>) -> KernelMatrix {
        KernelMatrix::new(m).unwrap()
    }

    fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> KernelMatrix {
        let mut m = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..=i {
                m[[i, j]] = rng.gen_range(-1.0..=1.0);
            }
        }
        KernelMatrix::symmetrized_from_lower(m).unwrap()
    }

    #[test]
    fn eigh_known_spectra() {
        let e = eigh(&km(array![[0.0, 1.0], [1.0, 0.0]])).unwrap();
        assert_abs_diff_eq!(e.eigenvalues, array![1.0, -1.0], epsilon = 1e-14);

        let e = eigh(&km(Array2::from_diag(&array![3.0, 2.0, 1.0]))).unwrap();
        assert_eq!(e.eigenvalues, array![3.0, 2.0, 1.0]);
        assert_eq!(e.basis, Array2::eye(3));

        let e = eigh(&km(Array2::from_diag(&array![1.0, 3.0, 2.0]))).unwrap();
        assert_eq!(e.eigenvalues, array![3.0, 2.0, 1.0]);
        assert_eq!(e.basis, array![[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]);
    }

    #[test]
    fn eigh_two_by_two_vectors() {
        // Characteristic polynomial (2 - x)^2 - 1 = 0 gives 3 and 1.
        let e = eigh(&km(array![[2.0, 1.0], [1.0, 2.0]])).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(e.eigenvalues, array![3.0, 1.0], epsilon = 1e-14);
        assert_abs_diff_eq!(e.basis.row(0), array![r, r], epsilon = 1e-14);
        // Tie in magnitude: the lower index carries the positive sign.
        assert_abs_diff_eq!(e.basis.row(1), array![r, -r], epsilon = 1e-14);
    }

    #[test]
    fn eigh_rejects_asymmetric() {
        let k = km(array![[1.0, 2.0], [0.0, 1.0]]);
        assert!(matches!(eigh(&k), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn eigh_reconstructs_and_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [1, 2, 3, 7, 30, 64] {
            let k = random_symmetric(n, &mut rng);
            let e = eigh(&k).unwrap();
            let tol = 1e-8 * inf_norm(k.view()).max(1.0);
            assert!(max_abs_diff(e.reconstruct().view(), k.view()) <= tol);
            let gram = e.basis.dot(&e.basis.t());
            assert!(max_abs_diff(gram.view(), Array2::eye(n).view()) <= 1e-10);
            assert!(e.eigenvalues.windows(2).into_iter().all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn eigh_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = random_symmetric(40, &mut rng);
        let a = eigh(&k).unwrap();
        let b = eigh(&k).unwrap();
        assert!(a.eigenvalues.iter().zip(&b.eigenvalues).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(a.basis.iter().zip(&b.basis).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn rho_rule() {
        let e = EigenDecomposition {
            eigenvalues: array![94.077, 10.0, -2.094],
            basis: Array2::eye(3),
        };
        assert_abs_diff_eq!(choose_rho(&e), 2.094 + 1e-6 * 94.077, epsilon = 1e-12);
        assert_abs_diff_eq!(choose_rho(&e), 2.09409, epsilon = 1e-5);

        let e = EigenDecomposition {
            eigenvalues: array![3.0, 1.0],
            basis: Array2::eye(2),
        };
        assert_abs_diff_eq!(choose_rho(&e), 3e-6, epsilon = 1e-18);

        let e = eigh(&km(array![[0.0, 1.0], [1.0, 0.0]])).unwrap();
        assert_abs_diff_eq!(choose_rho(&e), 1.0 + 1e-6, epsilon = 1e-14);
        assert!(choose_rho(&e) > -e.min_eigenvalue());
    }

    #[test]
    fn decomposition_of_swap_matrix() {
        // Eigenvectors (1, +-1)/sqrt2 with eigenvalues +-1; with rho = 1.5:
        // K+ = 2.5 P+ + 1.5 P-, K- = 1.5 P+ + 2.5 P-.
        let k = km(array![[0.0, 1.0], [1.0, 0.0]]);
        let e = eigh(&k).unwrap();
        let pd = positive_decomposition(&k, &e, 1.5).unwrap();
        assert_abs_diff_eq!(pd.k_plus.entries(), &array![[2.0, 0.5], [0.5, 2.0]], epsilon = 1e-14);
        assert_abs_diff_eq!(pd.k_minus.entries(), &array![[2.0, -0.5], [-0.5, 2.0]], epsilon = 1e-14);
        assert!(pd.reconstruction_error() <= 1e-14);
        assert!(matches!(
            positive_decomposition(&k, &e, 1.0),
            Err(Error::RhoTooSmall { .. })
        ));
    }

    #[test]
    fn decomposition_of_diagonal() {
        let k = km(Array2::from_diag(&array![10.0, -0.1]));
        let e = eigh(&k).unwrap();
        let pd = positive_decomposition(&k, &e, 0.2).unwrap();
        assert_abs_diff_eq!(pd.k_plus.entries(), &Array2::from_diag(&array![10.2, 0.2]), epsilon = 1e-15);
        assert_abs_diff_eq!(pd.k_minus.entries(), &Array2::from_diag(&array![0.2, 0.3]), epsilon = 1e-15);
        assert_eq!(inf_norm(pd.k_plus.view()), 10.2);
    }

    #[test]
    fn decomposition_min_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [2, 5, 20, 50] {
            let k = random_symmetric(n, &mut rng);
            let (e, pd) = decompose(&k).unwrap();
            let tol = 1e-8 * inf_norm(k.view()).max(1.0);
            assert!(pd.reconstruction_error() <= tol);
            let v = e.nonnegative_count();
            let rho = pd.rho;
            let plus_min = if v > 0 { (e.eigenvalues[v - 1] + rho).min(rho) } else { rho };
            let minus_min = if v < n { rho.min(rho - e.eigenvalues[v]) } else { rho };
            let ep = eigh(&pd.k_plus).unwrap();
            let em = eigh(&pd.k_minus).unwrap();
            assert_abs_diff_eq!(ep.min_eigenvalue(), plus_min, epsilon = 1e-8);
            assert_abs_diff_eq!(em.min_eigenvalue(), minus_min, epsilon = 1e-8);
            assert!(ep.min_eigenvalue() > 0.0 && em.min_eigenvalue() > 0.0);
        }
    }

    #[test]
    fn spectrum_modes_on_diagonal() {
        let k = km(Array2::from_diag(&array![2.0, -1.0]));
        let e = eigh(&k).unwrap();
        assert_eq!(spectrum_modify(&e, SpectrumMode::Flip).entries(), &Array2::from_diag(&array![2.0, 1.0]));
        assert_eq!(spectrum_modify(&e, SpectrumMode::Clip).entries(), &Array2::from_diag(&array![2.0, 0.0]));
        assert_eq!(spectrum_modify(&e, SpectrumMode::Shift).entries(), &Array2::from_diag(&array![3.0, 0.0]));
        assert_eq!("clip".parse::<SpectrumMode>().unwrap(), SpectrumMode::Clip);
        assert!("abs".parse::<SpectrumMode>().is_err());
    }

    #[test]
    fn clip_is_nearest_of_the_three() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for n in [3, 10, 25] {
            let k = random_symmetric(n, &mut rng);
            let e = eigh(&k).unwrap();
            let dist = |mode| {
                let m = spectrum_modify(&e, mode);
                frobenius_norm((m.entries() - k.entries()).view())
            };
            let clip = dist(SpectrumMode::Clip);
            assert!(clip <= dist(SpectrumMode::Flip) + 1e-12);
            assert!(clip <= dist(SpectrumMode::Shift) + 1e-12);
            for mode in SpectrumMode::ALL {
                let m = spectrum_modify(&e, mode);
                assert!(eigh(&m).unwrap().min_eigenvalue() >= -1e-8);
            }
        }
    }
}
