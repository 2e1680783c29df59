//! Symmetric matrices and diagonal regularization.

use crate::error::LinalgError;
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Dense real symmetric matrix.
///
/// Construction symmetrizes the input as `(A + A^T) / 2` and rejects
/// non-finite entries, so a value of this type always satisfies
/// `get(i, j) == get(j, i)` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix<F> {
    inner: Matrix<F>,
}

impl<F: Scalar> SymmetricMatrix<F> {
    /// Symmetrizes and validates a square matrix.
    pub fn new(m: Matrix<F>) -> Result<Self, LinalgError> {
        if m.rows() != m.cols() {
            return Err(LinalgError::Shape(format!(
                "symmetric matrix must be square, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        if let Some((row, col)) = m.first_non_finite() {
            return Err(LinalgError::NonFinite { row, col });
        }
        Ok(Self { inner: m.symmetrized() })
    }

    pub fn zeros(n: usize) -> Self {
        Self { inner: Matrix::zeros(n, n) }
    }

    pub fn identity(n: usize) -> Self {
        Self { inner: Matrix::identity(n) }
    }

    pub fn diag(values: &[F]) -> Self {
        Self { inner: Matrix::diag(values) }
    }

    pub fn dim(&self) -> usize {
        self.inner.rows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> F {
        self.inner.get(i, j)
    }

    pub fn as_matrix(&self) -> &Matrix<F> {
        &self.inner
    }

    pub fn into_matrix(self) -> Matrix<F> {
        self.inner
    }

    pub fn matvec(&self, v: &[F]) -> Vec<F> {
        self.inner.matvec(v)
    }

    pub fn frobenius_norm(&self) -> F {
        self.inner.frobenius_norm()
    }

    /// Returns `M + eps * I`.
    pub fn add_scaled_identity(&self, eps: F) -> Self {
        let mut m = self.inner.clone();
        for i in 0..m.rows() {
            let d = m.get(i, i);
            m.set(i, i, d + eps);
        }
        Self { inner: m }
    }
}

/// Shifts the whole spectrum up by `eps`: every eigenvalue of the result is
/// the corresponding eigenvalue of `m` plus `eps`.
pub fn regularize<F: Scalar>(m: &SymmetricMatrix<F>, eps: F) -> SymmetricMatrix<F> {
    assert!(eps > F::zero(), "regularization strength must be positive");
    m.add_scaled_identity(eps)
}
