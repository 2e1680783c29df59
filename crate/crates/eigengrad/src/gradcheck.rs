//! Independent gradient verification: central finite differences over
//! symmetric (or unconstrained) perturbations, comparison metrics, and
//! explosion detection.

use thiserror::Error;

use crate::matrix::{dot, Matrix};
use crate::scalar::{cst, Scalar};
use crate::symmetric::SymmetricMatrix;

/// Default central-difference step; balances truncation against round-off
/// for losses of order one in 64-bit arithmetic.
pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum CheckError {
    #[error("loss evaluated to a non-finite value during differencing")]
    OracleFailure,

    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Outcome of comparing a candidate gradient against a reference.
#[derive(Debug, Clone, Copy)]
pub struct ComparisonResult<F> {
    /// Frobenius-norm error relative to `max(1, ||reference||)`; the infinity
    /// sentinel when either side has non-finite entries.
    pub relative_error: F,
    pub max_abs_diff: F,
    pub both_finite: bool,
}

/// Compares two same-shaped matrices.
pub fn compare<F: Scalar>(
    candidate: &Matrix<F>,
    reference: &Matrix<F>,
) -> Result<ComparisonResult<F>, CheckError> {
    if candidate.rows() != reference.rows() || candidate.cols() != reference.cols() {
        return Err(CheckError::Shape(format!(
            "{}x{} vs {}x{}",
            candidate.rows(),
            candidate.cols(),
            reference.rows(),
            reference.cols()
        )));
    }
    let both_finite = candidate.is_finite() && reference.is_finite();
    if !both_finite {
        return Ok(ComparisonResult {
            relative_error: F::infinity(),
            max_abs_diff: F::infinity(),
            both_finite,
        });
    }
    let diff = candidate.sub(reference);
    let denom = reference.frobenius_norm().max(F::one());
    Ok(ComparisonResult {
        relative_error: diff.frobenius_norm() / denom,
        max_abs_diff: diff.max_abs(),
        both_finite,
    })
}

/// True iff the gradient has a non-finite entry or its Frobenius norm exceeds
/// `threshold`.
pub fn detect_explosion<F: Scalar>(g: &Matrix<F>, threshold: F) -> bool {
    !g.is_finite() || g.frobenius_norm() > threshold
}

/// Default norm threshold for [`detect_explosion`].
pub const EXPLOSION_THRESHOLD: f64 = 1e8;

/// Central finite differences of a scalar loss over the symmetric matrix
/// directions, returning the symmetric gradient representation: the matrix
/// `G` with `<G, dM> = dL` for every symmetric perturbation `dM`.
///
/// Diagonal directions perturb one entry; off-diagonal directions perturb the
/// `(i, j)` and `(j, i)` entries together, and the directional derivative is
/// halved so `G` lands in the same convention as symmetrized analytical
/// gradients. The loss is rescaled to order one before differencing.
pub fn finite_diff_gradient<F, L>(
    loss: L,
    m: &SymmetricMatrix<F>,
    h: F,
) -> Result<Matrix<F>, CheckError>
where
    F: Scalar,
    L: Fn(&SymmetricMatrix<F>) -> F,
{
    assert!(h > F::zero(), "step size must be positive");
    let n = m.dim();
    let base = loss(m);
    if !base.is_finite() {
        return Err(CheckError::OracleFailure);
    }
    let scale = base.abs().max(F::one());
    let mut grad = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let plus = eval_perturbed(&loss, m, i, j, h)? / scale;
            let minus = eval_perturbed(&loss, m, i, j, -h)? / scale;
            let directional = scale * (plus - minus) / (cst::<F>(2.0) * h);
            let g = if i == j {
                directional
            } else {
                directional * cst::<F>(0.5)
            };
            grad.set(i, j, g);
            grad.set(j, i, g);
        }
    }
    Ok(grad)
}

fn eval_perturbed<F, L>(
    loss: &L,
    m: &SymmetricMatrix<F>,
    i: usize,
    j: usize,
    delta: F,
) -> Result<F, CheckError>
where
    F: Scalar,
    L: Fn(&SymmetricMatrix<F>) -> F,
{
    let mut pert = m.as_matrix().clone();
    pert.set(i, j, pert.get(i, j) + delta);
    if i != j {
        pert.set(j, i, pert.get(j, i) + delta);
    }
    let pm = SymmetricMatrix::new(pert).map_err(|_| CheckError::OracleFailure)?;
    let value = loss(&pm);
    if !value.is_finite() {
        return Err(CheckError::OracleFailure);
    }
    Ok(value)
}

/// Central finite differences of a scalar loss over every entry of an
/// unconstrained matrix (used for layer inputs).
pub fn finite_diff_matrix<F, L>(loss: L, x: &Matrix<F>, h: F) -> Result<Matrix<F>, CheckError>
where
    F: Scalar,
    L: Fn(&Matrix<F>) -> F,
{
    assert!(h > F::zero(), "step size must be positive");
    let base = loss(x);
    if !base.is_finite() {
        return Err(CheckError::OracleFailure);
    }
    let scale = base.abs().max(F::one());
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let mut xp = x.clone();
            xp.set(i, j, x.get(i, j) + h);
            let plus = loss(&xp);
            let mut xm = x.clone();
            xm.set(i, j, x.get(i, j) - h);
            let minus = loss(&xm);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(CheckError::OracleFailure);
            }
            grad.set(i, j, scale * (plus / scale - minus / scale) / (cst::<F>(2.0) * h));
        }
    }
    Ok(grad)
}

/// Flips `v` so it points the same way as `reference`; eigenvector losses use
/// this so finite differences stay smooth across the solver's sign convention.
pub fn align_sign<F: Scalar>(v: &mut [F], reference: &[F]) {
    if dot(v, reference) < F::zero() {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigen::sym_eigen;
    use crate::grad::ed_gradient_analytical;
    use crate::matrix::outer;

    #[test]
    fn trace_gradient_is_identity() {
        let m = SymmetricMatrix::new(
            Matrix::from_rows(&[vec![1.0, 0.5], vec![0.5, 2.0]]).unwrap(),
        )
        .unwrap();
        let g = finite_diff_gradient(|m| (0..2).map(|i| m.get(i, i)).sum(), &m, 1e-5).unwrap();
        let diff = g.sub(&Matrix::identity(2)).frobenius_norm();
        assert!(diff < 1e-10, "diff {diff}");
    }

    #[test]
    fn squared_norm_gradient_is_the_matrix() {
        let m = SymmetricMatrix::new(
            Matrix::from_rows(&[vec![1.0, -0.3], vec![-0.3, 0.4]]).unwrap(),
        )
        .unwrap();
        let g = finite_diff_gradient(
            |m| {
                let f = m.frobenius_norm();
                f * f / 2.0
            },
            &m,
            1e-5,
        )
        .unwrap();
        let diff = g.sub(m.as_matrix()).frobenius_norm();
        assert!(diff < 1e-8, "diff {diff}");
    }

    #[test]
    fn eigenvector_loss_agrees_with_analytical_gradient() {
        let m = SymmetricMatrix::diag(&[4.0, 1.0]);
        let eig0 = sym_eigen(&m).unwrap();
        let base_v1 = eig0.vector(0);
        let c = [0.0, 1.0];
        let fd = finite_diff_gradient(
            |pm| {
                let eig = sym_eigen(pm).expect("eigensolver");
                let mut v1 = eig.vector(0);
                align_sign(&mut v1, &base_v1);
                dot(&c, &v1)
            },
            &m,
            1e-6,
        )
        .unwrap();
        let analytical = ed_gradient_analytical(&eig0, &c).grad.symmetrized();
        let diff = fd.sub(&analytical).frobenius_norm();
        assert!(diff < 1e-5, "diff {diff}");
    }

    #[test]
    fn compare_reports_identical_and_scaled() {
        let a = Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let same: ComparisonResult<f64> = compare(&a, &a).unwrap();
        assert_eq!(same.relative_error, 0.0);
        assert!(same.both_finite);

        let scaled = a.scale(1.001);
        let r = compare(&scaled, &a).unwrap();
        assert!((r.relative_error - 1e-3).abs() < 1e-6);
    }

    #[test]
    fn compare_flags_nan_and_shape() {
        let a = Matrix::from_rows(&[vec![1.0, f64::NAN]]).unwrap();
        let b = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let r = compare(&a, &b).unwrap();
        assert!(!r.both_finite);
        assert!(r.relative_error.is_infinite());
        // both_finite detection is symmetric in its arguments
        let r2 = compare(&b, &a).unwrap();
        assert!(!r2.both_finite);

        let c = Matrix::zeros(2, 2);
        assert!(compare(&b, &c).is_err());
    }

    #[test]
    fn explosion_detection() {
        assert!(!detect_explosion(&Matrix::<f64>::zeros(3, 3), 1e8));
        let mut inf = Matrix::zeros(2, 2);
        inf.set(0, 1, f64::INFINITY);
        assert!(detect_explosion(&inf, 1e8));

        // Tiny eigengap: the analytical gradient norm passes the threshold.
        let m = SymmetricMatrix::diag(&[1.0, 1.0 - 1e-12]);
        let eig = sym_eigen(&m).unwrap();
        let g = ed_gradient_analytical(&eig, &[0.0, 1.0]);
        assert!(detect_explosion(&g.grad, 1e8));
    }

    #[test]
    fn halving_the_step_quarters_the_error() {
        // Smooth non-quadratic loss with a closed-form gradient:
        // L = sum exp(m_ij), dL/dm_ij = exp(m_ij) in the symmetric convention.
        let m = SymmetricMatrix::new(
            Matrix::from_rows(&[vec![0.3f64, -0.2], vec![-0.2, 0.1]]).unwrap(),
        )
        .unwrap();
        let loss = |m: &SymmetricMatrix<f64>| {
            m.as_matrix().data().iter().map(|&x: &f64| x.exp()).sum::<f64>()
        };
        let exact = Matrix::from_fn(2, 2, |i, j| m.get(i, j).exp());
        let err_at = |h: f64| {
            finite_diff_gradient(loss, &m, h)
                .unwrap()
                .sub(&exact)
                .frobenius_norm()
        };
        let ratio = err_at(0.05) / err_at(0.025);
        assert!((3.0..=5.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn entrywise_fd_on_plain_matrices() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let w = Matrix::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.25]]).unwrap();
        // L = <W, X> has gradient W.
        let g = finite_diff_matrix(
            |x| {
                x.data()
                    .iter()
                    .zip(w.data())
                    .map(|(&a, &b)| a * b)
                    .sum::<f64>()
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(g.sub(&w).frobenius_norm() < 1e-8);
    }

    #[test]
    fn sign_alignment() {
        let mut v = vec![-1.0, 0.0];
        align_sign(&mut v, &[1.0, 0.0]);
        assert_eq!(v, vec![1.0, 0.0]);
        let _ = outer(&v, &v);
    }
}
