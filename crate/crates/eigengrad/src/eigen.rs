//! Exact symmetric eigensolver (cyclic Jacobi rotations).
//!
//! Jacobi is unconditionally stable for symmetric input and easy to make
//! deterministic: sweeps visit the strict upper triangle in a fixed order, so
//! identical input bytes produce identical output bytes. Eigenvalues come out
//! sorted descending and every eigenvector is sign-fixed so that its entry of
//! largest magnitude is non-negative (ties broken by lowest index).

use crate::error::LinalgError;
use crate::matrix::{dot, Matrix};
use crate::scalar::{cst, Scalar};
use crate::symmetric::SymmetricMatrix;

/// Hard cap on Jacobi sweeps; well-conditioned input converges in well under 20.
const MAX_SWEEPS: usize = 100;

/// Full eigendecomposition of a symmetric matrix.
///
/// Eigenvalues are sorted descending; eigenvectors are the columns of
/// [`Self::vectors`], unit norm, in matching order.
#[derive(Debug, Clone)]
pub struct EigenDecomposition<F> {
    values: Vec<F>,
    vectors: Matrix<F>,
}

impl<F: Scalar> EigenDecomposition<F> {
    /// Assembles a decomposition from parts. Values must be sorted descending
    /// and `vectors` must hold one unit-norm eigenvector per column; nothing
    /// beyond shape is validated here.
    pub fn from_parts(values: Vec<F>, vectors: Matrix<F>) -> Result<Self, LinalgError> {
        if vectors.rows() != values.len() || vectors.cols() != values.len() {
            return Err(LinalgError::Shape(format!(
                "{} eigenvalues need a {0}x{0} vector matrix, got {}x{}",
                values.len(),
                vectors.rows(),
                vectors.cols()
            )));
        }
        Ok(Self { values, vectors })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn value(&self, i: usize) -> F {
        self.values[i]
    }

    /// Eigenvector matrix, one eigenvector per column.
    pub fn vectors(&self) -> &Matrix<F> {
        &self.vectors
    }

    pub fn vector(&self, i: usize) -> Vec<F> {
        self.vectors.column(i)
    }

    /// Rebuilds `V diag(values) V^T`.
    pub fn reconstruct(&self) -> Matrix<F> {
        let n = self.dim();
        let mut out = Matrix::zeros(n, n);
        for k in 0..n {
            let v = self.vector(k);
            let lk = self.values[k];
            for i in 0..n {
                let s = lk * v[i];
                let row = out.row_mut(i);
                for (j, &vj) in v.iter().enumerate() {
                    row[j] += s * vj;
                }
            }
        }
        out
    }
}

/// Computes the full eigendecomposition of `m`.
///
/// Deterministic for identical input. Fails with
/// [`LinalgError::EigensolverFailure`] if the off-diagonal mass has not
/// dropped below `jacobi_tol() * ||M||_F` after the sweep cap; the caller may
/// regularize and retry once.
pub fn sym_eigen<F: Scalar>(m: &SymmetricMatrix<F>) -> Result<EigenDecomposition<F>, LinalgError> {
    let n = m.dim();
    let mut a = m.as_matrix().clone();
    let mut v = Matrix::identity(n);
    let norm = a.frobenius_norm();
    let tol = F::jacobi_tol() * norm;

    let mut converged = false;
    let mut last_off = F::zero();
    for _ in 0..MAX_SWEEPS {
        last_off = off_diagonal_norm(&a);
        if last_off <= tol {
            converged = true;
            break;
        }
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                rotate(&mut a, &mut v, p, q);
            }
        }
    }
    if !converged && off_diagonal_norm(&a) > tol {
        return Err(LinalgError::EigensolverFailure {
            sweeps: MAX_SWEEPS,
            off_norm: last_off.to_f64().unwrap_or(f64::NAN),
        });
    }

    // Sort descending; stable in the original index order on ties.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a.get(j, j)
            .partial_cmp(&a.get(i, i))
            .expect("eigenvalues are finite")
    });

    let values: Vec<F> = order.iter().map(|&i| a.get(i, i)).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = v.column(src);
        fix_sign(&mut col);
        vectors.set_column(dst, &col);
    }

    Ok(EigenDecomposition { values, vectors })
}

/// Frobenius norm of the off-diagonal part.
fn off_diagonal_norm<F: Scalar>(a: &Matrix<F>) -> F {
    let n = a.rows();
    let mut sum = F::zero();
    for p in 0..n {
        for q in 0..n {
            if p != q {
                let x = a.get(p, q);
                sum += x * x;
            }
        }
    }
    sum.sqrt()
}

/// One Jacobi rotation annihilating `a[p][q]`, accumulated into `v`.
fn rotate<F: Scalar>(a: &mut Matrix<F>, v: &mut Matrix<F>, p: usize, q: usize) {
    let apq = a.get(p, q);
    if apq == F::zero() {
        return;
    }
    let app = a.get(p, p);
    let aqq = a.get(q, q);
    let theta = (aqq - app) / (cst::<F>(2.0) * apq);
    // tan of the rotation angle; the guarded branch avoids theta^2 overflow.
    let t = if theta.abs() > cst::<F>(1e150) {
        (cst::<F>(2.0) * theta).recip()
    } else {
        let s = theta.abs() + (theta * theta + F::one()).sqrt();
        if theta < F::zero() {
            -s.recip()
        } else {
            s.recip()
        }
    };
    let c = (t * t + F::one()).sqrt().recip();
    let s = t * c;

    let n = a.rows();
    let two = cst::<F>(2.0);
    let new_pp = c * c * app - two * s * c * apq + s * s * aqq;
    let new_qq = s * s * app + two * s * c * apq + c * c * aqq;
    a.set(p, p, new_pp);
    a.set(q, q, new_qq);
    a.set(p, q, F::zero());
    a.set(q, p, F::zero());
    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let akp = a.get(k, p);
        let akq = a.get(k, q);
        let np = c * akp - s * akq;
        let nq = s * akp + c * akq;
        a.set(k, p, np);
        a.set(p, k, np);
        a.set(k, q, nq);
        a.set(q, k, nq);
    }
    for k in 0..n {
        let vkp = v.get(k, p);
        let vkq = v.get(k, q);
        v.set(k, p, c * vkp - s * vkq);
        v.set(k, q, s * vkp + c * vkq);
    }
}

/// Flips `v` so its entry of largest magnitude is non-negative; on magnitude
/// ties the lowest index wins.
pub(crate) fn fix_sign<F: Scalar>(v: &mut [F]) {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < F::zero() {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

/// Residual `||M v - lambda v||` for one eigenpair; used by tests.
pub fn eigenpair_residual<F: Scalar>(m: &SymmetricMatrix<F>, value: F, vector: &[F]) -> F {
    let mv = m.matvec(vector);
    let mut sum = F::zero();
    for (i, &x) in mv.iter().enumerate() {
        let d = x - value * vector[i];
        sum += d * d;
    }
    sum.sqrt()
}

/// `V^T V - I` in Frobenius norm; used by tests.
pub fn orthonormality_defect<F: Scalar>(eig: &EigenDecomposition<F>) -> F {
    let n = eig.dim();
    let mut sum = F::zero();
    for i in 0..n {
        let vi = eig.vector(i);
        for j in 0..n {
            let vj = eig.vector(j);
            let d = dot(&vi, &vj) - if i == j { F::one() } else { F::zero() };
            sum += d * d;
        }
    }
    sum.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_matrix_is_its_own_decomposition() {
        let m = SymmetricMatrix::diag(&[4.0, 1.0]);
        let eig = sym_eigen(&m).unwrap();
        assert_eq!(eig.values(), &[4.0, 1.0]);
        assert_eq!(eig.vector(0), vec![1.0, 0.0]);
        assert_eq!(eig.vector(1), vec![0.0, 1.0]);
    }

    #[test]
    fn identity_has_degenerate_unit_spectrum() {
        let m = SymmetricMatrix::<f64>::identity(3);
        let eig = sym_eigen(&m).unwrap();
        for &l in eig.values() {
            assert!((l - 1.0).abs() < 1e-15);
        }
        assert!(orthonormality_defect(&eig) < 1e-12);
        for i in 0..3 {
            assert!(eigenpair_residual(&m, eig.value(i), &eig.vector(i)) < 1e-12);
        }
    }

    #[test]
    fn two_by_two_known_eigenvalues() {
        // [[3,1],[1,3]] has eigenvalues 4 and 2.
        let rows = vec![vec![3.0f64, 1.0], vec![1.0, 3.0]];
        let m = SymmetricMatrix::new(Matrix::from_rows(&rows).unwrap()).unwrap();
        let eig = sym_eigen(&m).unwrap();
        assert!((eig.value(0) - 4.0).abs() < 1e-12);
        assert!((eig.value(1) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_for_identical_input() {
        let m = SymmetricMatrix::new(
            Matrix::from_rows(&[
                vec![2.0, 0.5, 0.1],
                vec![0.5, 1.0, 0.3],
                vec![0.1, 0.3, 0.7],
            ])
            .unwrap(),
        )
        .unwrap();
        let a = sym_eigen(&m).unwrap();
        let b = sym_eigen(&m).unwrap();
        assert_eq!(a.values(), b.values());
        assert_eq!(a.vectors().data(), b.vectors().data());
    }

    #[test]
    fn sign_convention_largest_entry_non_negative() {
        let mut v = vec![0.3, -0.9, 0.3];
        fix_sign(&mut v);
        assert_eq!(v, vec![-0.3, 0.9, -0.3]);
        let mut tie = vec![-0.5, 0.5];
        fix_sign(&mut tie);
        assert_eq!(tie, vec![0.5, -0.5]);
    }

    #[test]
    fn works_in_single_precision() {
        let m = SymmetricMatrix::<f32>::new(
            Matrix::from_rows(&[vec![3.0f32, 1.0], vec![1.0, 3.0]]).unwrap(),
        )
        .unwrap();
        let eig = sym_eigen(&m).unwrap();
        assert!((eig.value(0) - 4.0).abs() < 1e-5);
        assert!((eig.value(1) - 2.0).abs() < 1e-5);
    }
}
