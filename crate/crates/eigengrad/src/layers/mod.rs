//! Normalization layers built on the stable eigendecomposition gradients:
//! ZCA whitening and PCA denoising, with grouped channels, truncation guards,
//! running statistics and a learnable affine transform.

mod pca;
mod zca;

pub use pca::{pca_backward, pca_forward, PcaLayerState, PcaMode};
pub use zca::{zca_backward, zca_forward, ZcaLayerState};

use thiserror::Error;

use crate::eigen::EigenDecomposition;
use crate::error::LinalgError;
use crate::grad::{rayleigh_quotient, DeflationTape, GradError};
use crate::matrix::Matrix;
use crate::scalar::{cst, Scalar};
use crate::symmetric::SymmetricMatrix;

/// Relative Rayleigh-quotient disagreement at which an eigenpair is dropped.
pub const RQ_AGREEMENT_TOL: f64 = 0.1;

/// Default cumulative-energy threshold for whitening: stop once all but
/// 0.0001 of the spectrum mass is retained.
pub const WHITENING_ENERGY_THRESHOLD: f64 = 1.0 - 1e-4;

#[derive(Debug, Error)]
pub enum LayerError {
    #[error("no eigenpair survived truncation at the first index")]
    DegenerateBatch,

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid layer state: {0}")]
    InvalidState(String),

    #[error(transparent)]
    Linalg(#[from] LinalgError),

    #[error(transparent)]
    Grad(#[from] GradError),
}

/// Train updates running statistics and returns a tape; eval uses the stored
/// statistics and returns none.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerMode {
    Train,
    Eval,
}

/// A feature batch: `c` channels by `n` samples, all entries finite, `n >= 2`.
#[derive(Debug, Clone)]
pub struct Batch<F> {
    data: Matrix<F>,
}

impl<F: Scalar> Batch<F> {
    pub fn new(data: Matrix<F>) -> Result<Self, LayerError> {
        if data.cols() < 2 {
            return Err(LayerError::Shape(format!(
                "a batch needs at least 2 samples, got {}",
                data.cols()
            )));
        }
        if let Some((row, col)) = data.first_non_finite() {
            return Err(LayerError::Linalg(LinalgError::NonFinite { row, col }));
        }
        Ok(Self { data })
    }

    pub fn channels(&self) -> usize {
        self.data.rows()
    }

    pub fn samples(&self) -> usize {
        self.data.cols()
    }

    pub fn matrix(&self) -> &Matrix<F> {
        &self.data
    }

    pub fn into_matrix(self) -> Matrix<F> {
        self.data
    }
}

/// Splits the channels into `groups` contiguous blocks, applies `op` to each
/// block independently, and reassembles the results in order.
pub fn group_apply<F, Op>(x: &Batch<F>, groups: usize, mut op: Op) -> Result<Batch<F>, LayerError>
where
    F: Scalar,
    Op: FnMut(usize, &Matrix<F>) -> Result<Matrix<F>, LayerError>,
{
    let c = x.channels();
    if groups == 0 || c % groups != 0 {
        return Err(LayerError::Shape(format!(
            "{groups} groups do not divide {c} channels"
        )));
    }
    let d = c / groups;
    let mut out = Matrix::zeros(c, x.samples());
    for g in 0..groups {
        let block = x.matrix().row_block(g * d, d);
        let result = op(g, &block)?;
        if result.rows() != d || result.cols() != x.samples() {
            return Err(LayerError::Shape(format!(
                "group op changed block shape: {}x{} -> {}x{}",
                d,
                x.samples(),
                result.rows(),
                result.cols()
            )));
        }
        out.set_row_block(g * d, &result);
    }
    Batch::new(out)
}

/// Which layer produced a tape; backward passes check it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Zca,
    Pca,
}

/// Per-group forward-pass record.
#[derive(Debug, Clone)]
pub struct GroupTape<F> {
    /// Centered (ZCA) or standardized (PCA) input block.
    pub centered: Matrix<F>,
    pub mean: Vec<F>,
    /// Per-channel standard deviation; PCA only.
    pub sigma: Option<Vec<F>>,
    pub deflation: DeflationTape<F>,
    pub rank: usize,
    /// Whitening transform `S` or projector `P`, symmetric.
    pub transform: Matrix<F>,
    /// Output block before the affine transform.
    pub pre_affine: Matrix<F>,
    /// True when truncation left no eigenpair and the identity transform was
    /// substituted.
    pub fallback: bool,
}

/// Forward-pass record for a whole layer invocation (train mode only).
#[derive(Debug, Clone)]
pub struct LayerTape<F> {
    pub kind: LayerKind,
    pub group_dim: usize,
    /// Snapshot of the affine scale at forward time.
    pub gamma: Vec<F>,
    pub groups: Vec<GroupTape<F>>,
}

impl<F: Scalar> LayerTape<F> {
    /// Pre-affine output assembled across groups.
    pub fn pre_affine(&self) -> Matrix<F> {
        let d = self.group_dim;
        let n = self.groups[0].pre_affine.cols();
        let mut out = Matrix::zeros(d * self.groups.len(), n);
        for (g, tape) in self.groups.iter().enumerate() {
            out.set_row_block(g * d, &tape.pre_affine);
        }
        out
    }
}

/// The truncated deflation loop shared by both layers.
///
/// Walks the eigenpairs of `m` in descending order. An index is dropped, and
/// the loop stopped, when its eigenvalue is at or below `epsilon` or when the
/// Rayleigh quotient on the deflated matrix disagrees with the solver
/// eigenvalue by 10% or more. When the cumulative eigenvalue fraction reaches
/// `energy_threshold`, the crossing index is kept and the loop stops there:
/// only the negligible remainder of the spectrum is discarded. `max_rank`
/// caps the number of retained pairs.
///
/// Fails with [`LayerError::DegenerateBatch`] when no eigenpair is retained.
pub fn truncated_deflation<F: Scalar>(
    m: &SymmetricMatrix<F>,
    eig: &EigenDecomposition<F>,
    epsilon: F,
    energy_threshold: Option<F>,
    max_rank: Option<usize>,
) -> Result<DeflationTape<F>, LayerError> {
    let n = eig.dim();
    let limit = max_rank.unwrap_or(n).min(n);
    let total: F = eig.values().iter().copied().sum();
    let rq_tol = cst::<F>(RQ_AGREEMENT_TOL);

    let mut tape = DeflationTape::new(epsilon);
    let mut deflated = m.clone();
    let mut cumulative = F::zero();
    for i in 0..limit {
        let lambda = eig.value(i);
        if lambda <= epsilon {
            break;
        }
        let v = eig.vector(i);
        let lambda_rq = rayleigh_quotient(&deflated, &v)?;
        if (lambda_rq - lambda).abs() / lambda >= rq_tol {
            break;
        }
        let next = crate::grad::deflate(&deflated, &v);
        tape.push(deflated, v, lambda_rq)?;
        deflated = next;
        cumulative += lambda;
        if let Some(threshold) = energy_threshold {
            if total > F::zero() && cumulative / total >= threshold {
                break;
            }
        }
    }
    if tape.rank() == 0 {
        return Err(LayerError::DegenerateBatch);
    }
    Ok(tape)
}

/// Per-channel means of a block.
pub(crate) fn row_means<F: Scalar>(x: &Matrix<F>) -> Vec<F> {
    let inv_n = cst::<F>(1.0 / x.cols() as f64);
    (0..x.rows())
        .map(|i| x.row(i).iter().copied().sum::<F>() * inv_n)
        .collect()
}

/// Subtracts `mu[i]` from every entry of row `i`.
pub(crate) fn center_rows<F: Scalar>(x: &Matrix<F>, mu: &[F]) -> Matrix<F> {
    Matrix::from_fn(x.rows(), x.cols(), |i, j| x.get(i, j) - mu[i])
}

/// Gram matrix `X X^T` plus `eps` on the diagonal, as a symmetric matrix.
pub(crate) fn regularized_gram<F: Scalar>(
    x: &Matrix<F>,
    eps: F,
) -> Result<SymmetricMatrix<F>, LayerError> {
    let gram = x.matmul(&x.transpose());
    Ok(SymmetricMatrix::new(gram)?.add_scaled_identity(eps))
}

/// Solves the eigenproblem, regularizing and retrying once on failure.
pub(crate) fn eigen_with_retry<F: Scalar>(
    m: SymmetricMatrix<F>,
    eps: F,
) -> Result<(SymmetricMatrix<F>, EigenDecomposition<F>), LayerError> {
    match crate::eigen::sym_eigen(&m) {
        Ok(eig) => Ok((m, eig)),
        Err(_) => {
            let retry = crate::symmetric::regularize(&m, eps);
            let eig = crate::eigen::sym_eigen(&retry)?;
            Ok((retry, eig))
        }
    }
}

/// Applies `y[i][j] = gamma[i] * y0[i][j] + beta[i]`.
pub(crate) fn affine<F: Scalar>(y0: &Matrix<F>, gamma: &[F], beta: &[F]) -> Matrix<F> {
    Matrix::from_fn(y0.rows(), y0.cols(), |i, j| gamma[i] * y0.get(i, j) + beta[i])
}

/// Adjoint of row centering: subtracts each row's mean from the cotangent.
pub(crate) fn centering_backward<F: Scalar>(g: &Matrix<F>) -> Matrix<F> {
    let means = row_means(g);
    Matrix::from_fn(g.rows(), g.cols(), |i, j| g.get(i, j) - means[i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigen::sym_eigen;

    #[test]
    fn batch_requires_two_samples_and_finite_entries() {
        assert!(Batch::new(Matrix::<f64>::zeros(3, 1)).is_err());
        let mut bad = Matrix::zeros(2, 3);
        bad.set(1, 2, f64::INFINITY);
        assert!(Batch::new(bad).is_err());
        assert!(Batch::new(Matrix::<f64>::zeros(2, 2)).is_ok());
    }

    #[test]
    fn group_apply_single_group_is_plain_application() {
        let x = Batch::new(Matrix::from_fn(4, 6, |i, j| (i + j) as f64)).unwrap();
        let doubled = group_apply(&x, 1, |_, block| Ok(block.scale(2.0))).unwrap();
        assert_eq!(doubled.matrix().data(), x.matrix().scale(2.0).data());
    }

    #[test]
    fn group_apply_rejects_non_divisible_groups() {
        let x = Batch::new(Matrix::<f64>::zeros(4, 4)).unwrap();
        assert!(matches!(
            group_apply(&x, 3, |_, b| Ok(b.clone())),
            Err(LayerError::Shape(_))
        ));
    }

    #[test]
    fn group_apply_blocks_are_independent() {
        let x = Batch::new(Matrix::from_fn(4, 3, |i, j| (10 * i + j) as f64)).unwrap();
        let out = group_apply(&x, 2, |g, block| {
            Ok(block.scale(if g == 0 { 1.0 } else { -1.0 }))
        })
        .unwrap();
        assert_eq!(out.matrix().get(0, 0), 0.0);
        assert_eq!(out.matrix().get(2, 0), -20.0);
    }

    #[test]
    fn truncation_drops_at_epsilon_and_below() {
        // Eigenvalues 1.0, 0.5, epsilon: the third is dropped along with
        // everything after it.
        let eps = 1e-4;
        let m = SymmetricMatrix::diag(&[1.0, 0.5, eps]);
        let eig = sym_eigen(&m).unwrap();
        let tape = truncated_deflation(&m, &eig, eps, None, None).unwrap();
        assert_eq!(tape.rank(), 2);
    }

    #[test]
    fn truncation_keeps_the_energy_crossing_index() {
        // Fractions 0.90, 0.06, 0.04: threshold 0.95 is crossed at the second
        // index, which stays retained.
        let m = SymmetricMatrix::diag(&[0.90, 0.06, 0.04]);
        let eig = sym_eigen(&m).unwrap();
        let tape = truncated_deflation(&m, &eig, 1e-6, Some(0.95), None).unwrap();
        assert_eq!(tape.rank(), 2);

        // Threshold 1.0 retains everything.
        let full = truncated_deflation(&m, &eig, 1e-6, Some(1.0), None).unwrap();
        assert_eq!(full.rank(), 3);
    }

    #[test]
    fn truncation_respects_rank_cap() {
        let m = SymmetricMatrix::diag(&[1.0, 0.5, 0.25, 0.125]);
        let eig = sym_eigen(&m).unwrap();
        let tape = truncated_deflation(&m, &eig, 1e-8, None, Some(2)).unwrap();
        assert_eq!(tape.rank(), 2);
    }

    #[test]
    fn truncation_drops_on_rayleigh_disagreement() {
        // Hand the machinery a decomposition whose second vector is wrong:
        // its Rayleigh quotient on the deflated matrix lands near zero, far
        // from the claimed eigenvalue.
        let m = SymmetricMatrix::diag(&[1.0, 0.5, 0.1]);
        let eig = sym_eigen(&m).unwrap();
        let mut vectors = eig.vectors().clone();
        vectors.set_column(1, &[1.0, 0.0, 0.0]); // duplicate of v1
        let forged = EigenDecomposition::from_parts(eig.values().to_vec(), vectors).unwrap();
        let tape = truncated_deflation(&m, &forged, 1e-8, None, None).unwrap();
        assert_eq!(tape.rank(), 1);
    }

    #[test]
    fn truncation_at_first_index_signals_degenerate_batch() {
        let eps = 1e-4;
        let m = SymmetricMatrix::diag(&[eps, eps * 0.5]);
        let eig = sym_eigen(&m).unwrap();
        assert!(matches!(
            truncated_deflation(&m, &eig, eps, None, None),
            Err(LayerError::DegenerateBatch)
        ));
    }
}
