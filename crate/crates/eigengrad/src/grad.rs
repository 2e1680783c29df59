//! Gradients of eigenvectors through power-iteration structure.
//!
//! The forward pass always uses the exact eigensolver. For the backward pass,
//! the dominant-eigenvector cotangent is pushed through the truncated
//! power-iteration recurrence seeded with that exact eigenvector:
//!
//! ```text
//! dL/dM = sum_{j=0}^{K-1}  M^j (I - v v^T) / ||Mv||^{j+1}  * dL/dv * v^T
//! ```
//!
//! Summed over the deflation chain this converges to the analytical
//! eigendecomposition gradient as K grows, while staying bounded by
//! `n K / lambda_1` (or `n K / epsilon` after diagonal regularization) no
//! matter how close the eigenvalues are. The analytical form is also provided
//! here, unguarded, as the unstable reference the benchmarks measure against.

use thiserror::Error;

use crate::eigen::EigenDecomposition;
use crate::matrix::{axpy, dot, norm2, outer, Matrix};
use crate::scalar::{cst, Scalar};
use crate::symmetric::SymmetricMatrix;

/// Errors raised by the gradient kernels.
#[derive(Debug, Error)]
pub enum GradError {
    #[error("power iteration hit a zero iterate: v lies in the nullspace of M")]
    ZeroIterate,

    #[error("operation undefined for the zero vector")]
    ZeroVector,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// One saved deflation step: the deflated matrix the eigenvector was extracted
/// from, the eigenvector itself, and its Rayleigh-quotient eigenvalue.
#[derive(Debug, Clone)]
pub struct DeflationStep<F> {
    pub matrix: SymmetricMatrix<F>,
    pub vector: Vec<F>,
    pub eigenvalue: F,
}

/// Forward-pass record of the deflation procedure.
///
/// `steps[0].matrix` is the (regularized) input matrix; step `i` holds the
/// matrix after `i` deflations together with the eigenvector extracted from
/// it. Nothing here is recomputed in the backward pass.
#[derive(Debug, Clone)]
pub struct DeflationTape<F> {
    steps: Vec<DeflationStep<F>>,
    epsilon: F,
}

impl<F: Scalar> DeflationTape<F> {
    pub fn new(epsilon: F) -> Self {
        Self { steps: Vec::new(), epsilon }
    }

    /// Appends a step. The eigenvector must be unit norm.
    pub fn push(
        &mut self,
        matrix: SymmetricMatrix<F>,
        vector: Vec<F>,
        eigenvalue: F,
    ) -> Result<(), GradError> {
        let norm = norm2(&vector);
        if (norm - F::one()).abs() > cst::<F>(1e-10) {
            return Err(GradError::Domain(format!(
                "deflation eigenvector must be unit norm, got {norm}"
            )));
        }
        self.steps.push(DeflationStep { matrix, vector, eigenvalue });
        Ok(())
    }

    /// Runs the deflation loop on an already-regularized matrix, seeding each
    /// step with the exact eigenvectors, and records the first `rank` steps.
    pub fn from_decomposition(
        m: &SymmetricMatrix<F>,
        eig: &EigenDecomposition<F>,
        rank: usize,
        epsilon: F,
    ) -> Result<Self, GradError> {
        if rank > eig.dim() {
            return Err(GradError::Shape(format!(
                "rank {rank} exceeds dimension {}",
                eig.dim()
            )));
        }
        let mut tape = Self::new(epsilon);
        let mut deflated = m.clone();
        for i in 0..rank {
            let v = eig.vector(i);
            let lambda = rayleigh_quotient(&deflated, &v)?;
            let next = deflate(&deflated, &v);
            tape.push(deflated, v, lambda)?;
            deflated = next;
        }
        Ok(tape)
    }

    pub fn rank(&self) -> usize {
        self.steps.len()
    }

    pub fn epsilon(&self) -> F {
        self.epsilon
    }

    pub fn steps(&self) -> &[DeflationStep<F>] {
        &self.steps
    }

    pub fn dim(&self) -> usize {
        self.steps.first().map_or(0, |s| s.matrix.dim())
    }
}

/// A computed matrix gradient together with the diagnostics the stability
/// story is about.
#[derive(Debug, Clone)]
pub struct GradientReport<F> {
    pub grad: Matrix<F>,
    pub frobenius_norm: F,
    pub finite: bool,
    /// A priori bound `n K / denom * ||cotangent||` this gradient was expected
    /// to respect; infinite when no bound applies.
    pub bound: F,
}

impl<F: Scalar> GradientReport<F> {
    pub fn new(grad: Matrix<F>, bound: F) -> Self {
        let finite = grad.is_finite();
        let frobenius_norm = grad.frobenius_norm();
        Self { grad, frobenius_norm, finite, bound }
    }
}

/// One power-iteration update `Mv / ||Mv||`.
pub fn power_iteration_step<F: Scalar>(
    m: &SymmetricMatrix<F>,
    v: &[F],
) -> Result<Vec<F>, GradError> {
    let mv = m.matvec(v);
    crate::matrix::normalized(&mv).ok_or(GradError::ZeroIterate)
}

/// Rayleigh quotient `v^T M v / v^T v`.
pub fn rayleigh_quotient<F: Scalar>(m: &SymmetricMatrix<F>, v: &[F]) -> Result<F, GradError> {
    let vv = dot(v, v);
    if vv == F::zero() {
        return Err(GradError::ZeroVector);
    }
    let mv = m.matvec(v);
    Ok(dot(v, &mv) / vv)
}

/// Removes the projection of `m` on `v`: `M - M v v^T`, re-symmetrized so the
/// next Rayleigh quotient stays meaningful for inexact eigenvectors.
pub fn deflate<F: Scalar>(m: &SymmetricMatrix<F>, v: &[F]) -> SymmetricMatrix<F> {
    let mv = m.matvec(v);
    let half = cst::<F>(0.5);
    let n = m.dim();
    let mut out = m.as_matrix().clone();
    for i in 0..n {
        let row = out.row_mut(i);
        for j in 0..n {
            row[j] -= half * (mv[i] * v[j] + v[i] * mv[j]);
        }
    }
    SymmetricMatrix::new(out).expect("deflation of a finite matrix stays finite")
}

/// Truncated power-iteration gradient of the dominant eigenvector of `m`,
/// with cotangent `grad_v`, accumulated Horner-style so no matrix power is
/// ever formed.
pub fn pi_gradient_dominant<F: Scalar>(
    m: &SymmetricMatrix<F>,
    v: &[F],
    grad_v: &[F],
    k: usize,
) -> Result<GradientReport<F>, GradError> {
    assert!(k >= 1, "iteration count must be at least 1");
    let n = m.dim();
    if v.len() != n || grad_v.len() != n {
        return Err(GradError::Shape("vector length does not match matrix".into()));
    }
    let denom = norm2(&m.matvec(v));
    if denom == F::zero() {
        return Err(GradError::ZeroIterate);
    }
    // p = (I - v v^T) grad_v
    let overlap = dot(v, grad_v);
    let mut p = grad_v.to_vec();
    axpy(&mut p, -overlap, v);
    // Horner accumulation of sum_j M^j p / denom^{j+1}.
    let mut acc = p.clone();
    for _ in 1..k {
        let mut next = m.matvec(&acc);
        for (x, &b) in next.iter_mut().zip(&p) {
            *x = *x / denom + b;
        }
        acc = next;
    }
    for x in acc.iter_mut() {
        *x = *x / denom;
    }
    let grad = outer(&acc, v);
    let bound = gradient_bound(n, k, denom, norm2(grad_v));
    Ok(GradientReport::new(grad, bound))
}

/// Analytical eigendecomposition gradient for the dominant eigenvector:
/// `sum_{i>=2} v_i v_i^T grad_v1 v_1^T / (lambda_1 - lambda_i)`.
///
/// Intentionally unguarded: coincident eigenvalues produce non-finite or huge
/// entries, reported through the `finite` flag rather than an error. This is
/// the unstable reference the stable path is compared against.
pub fn ed_gradient_analytical<F: Scalar>(
    eig: &EigenDecomposition<F>,
    grad_v1: &[F],
) -> GradientReport<F> {
    let grad = analytical_term(eig, 0, grad_v1);
    GradientReport::new(grad, F::infinity())
}

/// Analytical gradient with cotangents for every eigenvector, the full
/// unstable reference used for multi-eigenvector losses.
pub fn ed_gradient_analytical_multi<F: Scalar>(
    eig: &EigenDecomposition<F>,
    grad_vs: &[Vec<F>],
) -> GradientReport<F> {
    let n = eig.dim();
    let mut grad = Matrix::zeros(n, n);
    for (j, g) in grad_vs.iter().enumerate() {
        grad = grad.add(&analytical_term(eig, j, g));
    }
    GradientReport::new(grad, F::infinity())
}

fn analytical_term<F: Scalar>(eig: &EigenDecomposition<F>, j: usize, grad_vj: &[F]) -> Matrix<F> {
    let n = eig.dim();
    let vj = eig.vector(j);
    let lj = eig.value(j);
    let mut coeff = vec![F::zero(); n];
    for i in 0..n {
        if i == j {
            continue;
        }
        let vi = eig.vector(i);
        let c = dot(&vi, grad_vj) / (lj - eig.value(i));
        axpy(&mut coeff, c, &vi);
    }
    outer(&coeff, &vj)
}

/// Truncated geometric coefficient `(1/l1) sum_{j<K} (li/l1)^j`, the scalar
/// weight the power-iteration gradient assigns to the `li` eigendirection.
/// Equals `K/l1` when the eigenvalues coincide.
pub fn geometric_coefficient<F: Scalar>(l1: F, li: F, k: usize) -> Result<F, GradError> {
    if l1 <= F::zero() {
        return Err(GradError::Domain(format!("leading eigenvalue must be positive, got {l1}")));
    }
    if li < F::zero() || li > l1 {
        return Err(GradError::Domain(format!("eigenvalue {li} outside [0, {l1}]")));
    }
    assert!(k >= 1, "iteration count must be at least 1");
    let q = li / l1;
    if q == F::one() {
        return Ok(cst::<F>(k as f64) / l1);
    }
    Ok((F::one() - q.powi(k as i32)) / (F::one() - q) / l1)
}

/// Smallest iteration count `K` with `ratio^K <= tol`.
pub fn k_min<F: Scalar>(ratio: F, tol: F) -> Result<usize, GradError> {
    if !(ratio > F::zero() && ratio < F::one()) {
        return Err(GradError::Domain(format!("ratio must be in (0, 1), got {ratio}")));
    }
    if !(tol > F::zero() && tol < F::one()) {
        return Err(GradError::Domain(format!("tolerance must be in (0, 1), got {tol}")));
    }
    let k = (tol.ln() / ratio.ln()).ceil();
    Ok(k.to_f64().expect("finite").max(1.0) as usize)
}

/// Default approximation tolerance for [`k_min`].
pub const K_MIN_DEFAULT_TOL: f64 = 0.05;

/// Default backward iteration count, from `k_min(0.85, 0.05)`.
pub const DEFAULT_ITERATIONS: usize = 19;

/// Convenience wrapper for [`k_min`] at the default tolerance.
pub fn k_min_default<F: Scalar>(ratio: F) -> Result<usize, GradError> {
    k_min(ratio, cst::<F>(K_MIN_DEFAULT_TOL))
}

/// Upper bound `(n K / denom) * ||grad_v||` on the truncated gradient norm;
/// `denom` is the leading eigenvalue, or epsilon after regularization.
pub fn gradient_bound<F: Scalar>(n: usize, k: usize, denom: F, grad_v_norm: F) -> F {
    assert!(denom > F::zero(), "bound denominator must be positive");
    cst::<F>((n * k) as f64) / denom * grad_v_norm
}

/// Backward pass through a whole deflation tape.
///
/// `grad_vs[i]` is the cotangent of the eigenvector extracted at step `i`.
/// Each step applies the truncated power-iteration gradient against its saved
/// deflated matrix; cotangents are propagated through the deflation update
/// `M <- M - M v v^T` (in its re-symmetrized form) via its exact differential.
/// The result is symmetrized, since the true input is constrained symmetric.
pub fn full_backward<F: Scalar>(
    tape: &DeflationTape<F>,
    grad_vs: &[Vec<F>],
    k: usize,
) -> Result<GradientReport<F>, GradError> {
    if grad_vs.len() != tape.rank() {
        return Err(GradError::Shape(format!(
            "expected {} cotangents, got {}",
            tape.rank(),
            grad_vs.len()
        )));
    }
    let raw = deflation_backward(tape, grad_vs, None, k)?;
    let grad = raw.symmetrized();
    let cot_norm = grad_vs
        .iter()
        .map(|g| dot(g, g))
        .fold(F::zero(), |acc, x| acc + x)
        .sqrt();
    let bound = if tape.epsilon() > F::zero() {
        gradient_bound(tape.dim(), k, tape.epsilon(), cot_norm)
    } else {
        F::infinity()
    };
    Ok(GradientReport::new(grad, bound))
}

/// Un-symmetrized deflation-chain backward. `direct[i]`, when present, is an
/// additional cotangent arriving directly on the step-`i` deflated matrix
/// (layers use this for the Rayleigh-quotient eigenvalue path).
pub fn deflation_backward<F: Scalar>(
    tape: &DeflationTape<F>,
    grad_vs: &[Vec<F>],
    direct: Option<&[Matrix<F>]>,
    k: usize,
) -> Result<Matrix<F>, GradError> {
    let rank = tape.rank();
    let n = tape.dim();
    if let Some(d) = direct {
        if d.len() != rank {
            return Err(GradError::Shape("direct cotangent count mismatch".into()));
        }
    }
    // acc holds dL/d(deflated matrix after step i) while walking i backwards.
    let mut acc = Matrix::zeros(n, n);
    for i in (0..rank).rev() {
        let step = &tape.steps[i];
        let m = &step.matrix;
        let v = &step.vector;

        // Cotangent on v_i: the loss term plus the deflation update's own
        // dependence on v_i, -(M S v + S M v) with S the symmetric part of acc.
        let mut t = grad_vs[i].clone();
        let s = acc.symmetrized();
        let sv = s.matvec(v);
        let msv = m.matvec(&sv);
        let mv = m.matvec(v);
        let smv = s.matvec(&mv);
        for (x, (&a, &b)) in t.iter_mut().zip(msv.iter().zip(&smv)) {
            *x -= a + b;
        }

        // Pass acc through the deflation map's matrix slot:
        // A - (A v v^T + v v^T A) / 2.
        let av = acc.matvec(v);
        let atv = acc.transpose().matvec(v);
        let half = cst::<F>(0.5);
        let mut passed = acc;
        for r in 0..n {
            let row = passed.row_mut(r);
            for c in 0..n {
                row[c] -= half * (av[r] * v[c] + v[r] * atv[c]);
            }
        }

        // The eigenvector's own sensitivity to its deflated matrix.
        let pi = pi_gradient_dominant(m, v, &t, k)?;
        passed = passed.add(&pi.grad);
        if let Some(d) = direct {
            passed = passed.add(&d[i]);
        }
        acc = passed;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigen::sym_eigen;
    use crate::spectrum::{generate_matrix, random_unit_vector, SpectrumProfile, SpectrumSpec};
    use crate::symmetric::regularize;

    fn diag41() -> SymmetricMatrix<f64> {
        SymmetricMatrix::diag(&[4.0, 1.0])
    }

    #[test]
    fn power_step_fixed_point() {
        let v = power_iteration_step(&diag41(), &[1.0, 0.0]).unwrap();
        assert_eq!(v, vec![1.0, 0.0]);
    }

    #[test]
    fn power_step_direct_arithmetic() {
        let s = 1.0 / 2.0f64.sqrt();
        let v = power_iteration_step(&diag41(), &[s, s]).unwrap();
        let norm = 17.0f64.sqrt();
        assert!((v[0] - 4.0 / norm).abs() < 1e-15);
        assert!((v[1] - 1.0 / norm).abs() < 1e-15);
    }

    #[test]
    fn power_step_zero_iterate_errors() {
        let m = SymmetricMatrix::diag(&[1.0, 0.0]);
        assert!(matches!(
            power_iteration_step(&m, &[0.0, 1.0]),
            Err(GradError::ZeroIterate)
        ));
    }

    #[test]
    fn power_iteration_converges_to_dominant_eigenvector() {
        let spec = SpectrumSpec::new(6, SpectrumProfile::Geometric { ratio: 0.8 }, 5);
        let m = generate_matrix::<f64>(&spec).unwrap();
        let eig = sym_eigen(&m).unwrap();
        let mut v = random_unit_vector::<f64>(6, 99);
        for _ in 0..200 {
            v = power_iteration_step(&m, &v).unwrap();
        }
        let v1 = eig.vector(0);
        let sign = if dot(&v, &v1) < 0.0 { -1.0 } else { 1.0 };
        for (a, b) in v.iter().zip(&v1) {
            assert!((sign * a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn rayleigh_quotient_examples() {
        assert_eq!(rayleigh_quotient(&diag41(), &[1.0, 0.0]).unwrap(), 4.0);
        let s = 1.0 / 2.0f64.sqrt();
        assert!((rayleigh_quotient(&diag41(), &[s, s]).unwrap() - 2.5).abs() < 1e-15);
        let id = SymmetricMatrix::<f64>::identity(5);
        let v = random_unit_vector::<f64>(5, 1);
        assert!((rayleigh_quotient(&id, &v).unwrap() - 1.0).abs() < 1e-14);
        assert!(matches!(
            rayleigh_quotient(&id, &[0.0; 5]),
            Err(GradError::ZeroVector)
        ));
    }

    #[test]
    fn deflate_removes_exact_eigenvector() {
        let d = deflate(&diag41(), &[1.0, 0.0]);
        assert_eq!(d.get(0, 0), 0.0);
        assert_eq!(d.get(1, 1), 1.0);
        assert_eq!(d.get(0, 1), 0.0);

        let id2 = deflate(&SymmetricMatrix::identity(2), &[1.0, 0.0]);
        assert_eq!(id2.get(0, 0), 0.0);
        assert_eq!(id2.get(1, 1), 1.0);
    }

    #[test]
    fn deflate_drops_top_eigenvalue_to_second() {
        let spec = SpectrumSpec::new(5, SpectrumProfile::Geometric { ratio: 0.6 }, 17);
        let m = generate_matrix::<f64>(&spec).unwrap();
        let eig = sym_eigen(&m).unwrap();
        let d = deflate(&m, &eig.vector(0));
        let eig_d = sym_eigen(&d).unwrap();
        assert!((eig_d.value(0) - eig.value(1)).abs() < 1e-8);
        let v0 = eig.vector(0);
        let residual = norm2(&d.matvec(&v0));
        assert!(residual <= 1e-8 * m.frobenius_norm());
    }

    #[test]
    fn pi_gradient_single_term_hand_value() {
        let report = pi_gradient_dominant(&diag41(), &[1.0, 0.0], &[0.0, 1.0], 1).unwrap();
        assert_eq!(report.grad.get(0, 0), 0.0);
        assert_eq!(report.grad.get(0, 1), 0.0);
        assert_eq!(report.grad.get(1, 1), 0.0);
        assert!((report.grad.get(1, 0) - 0.25).abs() < 1e-15);
        assert!(report.finite);
        // Bound example: n=2, K=1, denom=4, ||grad_v||=1.
        assert!((report.bound - 0.5).abs() < 1e-15);
        assert!(report.frobenius_norm <= report.bound);
    }

    #[test]
    fn pi_gradient_converges_to_analytical() {
        let report = pi_gradient_dominant(&diag41(), &[1.0, 0.0], &[0.0, 1.0], 19).unwrap();
        let expect = 0.25 * (1.0 - 0.25f64.powi(19)) / (1.0 - 0.25);
        assert!((report.grad.get(1, 0) - expect).abs() < 1e-16);
        assert!((report.grad.get(1, 0) - 1.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn pi_gradient_zero_cotangent_is_zero() {
        let spec = SpectrumSpec::new(4, SpectrumProfile::Geometric { ratio: 0.5 }, 2);
        let m = generate_matrix::<f64>(&spec).unwrap();
        let eig = sym_eigen(&m).unwrap();
        let report = pi_gradient_dominant(&m, &eig.vector(0), &[0.0; 4], 19).unwrap();
        assert_eq!(report.frobenius_norm, 0.0);
    }

    #[test]
    fn analytical_gradient_hand_value() {
        let eig = sym_eigen(&diag41()).unwrap();
        let report = ed_gradient_analytical(&eig, &[0.0, 1.0]);
        assert!((report.grad.get(1, 0) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(report.grad.get(0, 0), 0.0);
        assert!(report.finite);

        let zero = ed_gradient_analytical(&eig, &[0.0, 0.0]);
        assert_eq!(zero.frobenius_norm, 0.0);
    }

    #[test]
    fn analytical_gradient_degenerate_spectrum_is_non_finite() {
        let eig = sym_eigen(&SymmetricMatrix::<f64>::identity(2)).unwrap();
        let report = ed_gradient_analytical(&eig, &[0.0, 1.0]);
        assert!(!report.finite);
    }

    #[test]
    fn geometric_coefficient_examples() {
        assert_eq!(geometric_coefficient(1.0, 0.0, 3).unwrap(), 1.0);
        assert!((geometric_coefficient(2.0f64, 1.0, 5).unwrap() - 0.96875).abs() < 1e-15);
        assert_eq!(geometric_coefficient(1.0, 1.0, 19).unwrap(), 19.0);
        assert!(geometric_coefficient(0.0, 0.0, 3).is_err());
        assert!(geometric_coefficient(1.0, 2.0, 3).is_err());
    }

    #[test]
    fn k_min_reference_values() {
        assert_eq!(k_min(0.5, 0.05).unwrap(), 5);
        assert_eq!(k_min(0.85, 0.05).unwrap(), 19);
        assert_eq!(k_min(0.05, 0.05).unwrap(), 1);
        assert!(k_min(1.0, 0.05).is_err());
        assert!(k_min(0.5, 0.0).is_err());
    }

    #[test]
    fn full_backward_rank_one_matches_analytical() {
        let m = diag41();
        let eig = sym_eigen(&m).unwrap();
        let tape = DeflationTape::from_decomposition(&m, &eig, 1, 0.0).unwrap();
        let hybrid = full_backward(&tape, &[vec![0.0, 1.0]], 19).unwrap();
        let analytical = ed_gradient_analytical(&eig, &[0.0, 1.0]);
        let diff = hybrid
            .grad
            .symmetrized()
            .sub(&analytical.grad.symmetrized())
            .frobenius_norm();
        assert!(diff < 1e-8, "diff {diff}");
    }

    #[test]
    fn full_backward_zero_cotangents_zero_gradient() {
        let spec = SpectrumSpec::new(4, SpectrumProfile::Geometric { ratio: 0.5 }, 3);
        let m = generate_matrix::<f64>(&spec).unwrap();
        let eig = sym_eigen(&m).unwrap();
        let tape = DeflationTape::from_decomposition(&m, &eig, 3, 0.0).unwrap();
        let report = full_backward(&tape, &[vec![0.0; 4], vec![0.0; 4], vec![0.0; 4]], 19).unwrap();
        assert_eq!(report.frobenius_norm, 0.0);
    }

    #[test]
    fn tape_invariants_hold() {
        let spec = SpectrumSpec::new(5, SpectrumProfile::Geometric { ratio: 0.6 }, 8);
        let m = regularize(&generate_matrix::<f64>(&spec).unwrap(), 1e-4);
        let eig = sym_eigen(&m).unwrap();
        let tape = DeflationTape::from_decomposition(&m, &eig, 3, 1e-4).unwrap();
        assert_eq!(tape.rank(), 3);
        assert_eq!(
            tape.steps()[0].matrix.as_matrix().data(),
            m.as_matrix().data()
        );
        for step in tape.steps() {
            assert!((norm2(&step.vector) - 1.0).abs() < 1e-10);
            let rq = rayleigh_quotient(&step.matrix, &step.vector).unwrap();
            assert!((rq - step.eigenvalue).abs() < 1e-10);
        }
    }

    #[test]
    fn report_norm_consistent_with_grad() {
        let g = Matrix::from_rows(&[vec![3.0, 0.0], vec![0.0, 4.0]]).unwrap();
        let report: GradientReport<f64> = GradientReport::new(g, f64::INFINITY);
        assert!((report.frobenius_norm - 5.0).abs() < 1e-12);
        assert!(report.finite);
    }
}
