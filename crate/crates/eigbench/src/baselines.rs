//! Baseline gradient methods the stable path is benchmarked against.
//!
//! `svd`: analytical eigendecomposition gradients over the full spectrum, no
//! truncation guard. Explodes when eigenvalues collide; that is the point.
//!
//! `pi`: deflation power iteration from seeded random starts, capped at K
//! iterations per step, with gradients pushed through the recorded iterates
//! and the deflation chain. Faithful reverse-mode of the approximate forward.

use eigengrad::grad::{deflate, rayleigh_quotient, GradError};
use eigengrad::matrix::{dot, norm2, outer, Matrix};
use eigengrad::spectrum::random_unit_vector;
use eigengrad::{EigenDecomposition, Mat64, SymMat64};

/// Analytical matrix cotangent from eigenvector and eigenvalue cotangents:
/// the dense reference with `1/(lambda_j - lambda_i)` coefficients. Only the
/// first `grad_vs.len()` eigenvectors carry cotangents.
pub fn analytical_matrix_cotangent(
    eig: &EigenDecomposition<f64>,
    grad_vs: &[Vec<f64>],
    grad_vals: &[f64],
) -> Mat64 {
    let n = eig.dim();
    let mut out = eigengrad::ed_gradient_analytical_multi(eig, grad_vs).grad;
    for (i, &gl) in grad_vals.iter().enumerate() {
        if gl == 0.0 {
            continue;
        }
        let v = eig.vector(i);
        out = out.add(&outer(&v, &v).scale(gl));
    }
    let _ = n;
    out
}

/// One power-iteration deflation step: the deflated matrix, every iterate
/// (so the backward recursion can replay the updates), the update
/// denominators, and the Rayleigh-quotient eigenvalue of the final iterate.
#[derive(Debug, Clone)]
pub struct PiStep {
    pub matrix: SymMat64,
    pub iterates: Vec<Vec<f64>>,
    pub norms: Vec<f64>,
    pub eigenvalue: f64,
}

impl PiStep {
    pub fn estimate(&self) -> &[f64] {
        self.iterates.last().expect("at least the start vector")
    }
}

/// Runs deflation power iteration with seeded random starts.
///
/// Each step iterates `v <- Mv / ||Mv||` until the update stalls or the cap
/// `k` is reached, estimates the eigenvalue as a Rayleigh quotient, then
/// deflates. Stops early when the estimate falls to `epsilon` or below.
pub fn pi_deflation(
    m: &SymMat64,
    depth: usize,
    k: usize,
    epsilon: f64,
    seed: u64,
) -> Result<Vec<PiStep>, GradError> {
    let n = m.dim();
    let mut deflated = m.clone();
    let mut steps = Vec::with_capacity(depth);
    for i in 0..depth.min(n) {
        let mut v = random_unit_vector::<f64>(n, seed.wrapping_add(i as u64));
        let mut iterates = vec![v.clone()];
        let mut norms = Vec::with_capacity(k);
        for _ in 0..k {
            let mv = deflated.matvec(&v);
            let norm = norm2(&mv);
            if norm == 0.0 {
                return Err(GradError::ZeroIterate);
            }
            let next: Vec<f64> = mv.iter().map(|&x| x / norm).collect();
            let moved = next
                .iter()
                .zip(&v)
                .map(|(&a, &b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            v = next;
            norms.push(norm);
            iterates.push(v.clone());
            if moved < 1e-14 {
                break;
            }
        }
        let eigenvalue = rayleigh_quotient(&deflated, &v)?;
        let next = deflate(&deflated, &v);
        steps.push(PiStep { matrix: deflated, iterates, norms, eigenvalue });
        deflated = next;
        if steps.last().map(|s| s.eigenvalue <= epsilon).unwrap_or(false) {
            break;
        }
    }
    Ok(steps)
}

/// Reverse-mode through one power-iteration run: given the cotangent of the
/// final iterate, returns the matrix cotangent and consumes the start vector
/// as a constant.
pub fn pi_step_backward(step: &PiStep, grad_final: &[f64]) -> Mat64 {
    let n = step.matrix.dim();
    let mut grad_m = Matrix::zeros(n, n);
    let mut gv = grad_final.to_vec();
    for t in (0..step.norms.len()).rev() {
        let v_next = &step.iterates[t + 1];
        let v_prev = &step.iterates[t];
        let denom = step.norms[t];
        // p = (I - v_next v_next^T) gv / denom
        let overlap = dot(v_next, &gv);
        let p: Vec<f64> = gv
            .iter()
            .zip(v_next)
            .map(|(&g, &v)| (g - overlap * v) / denom)
            .collect();
        grad_m = grad_m.add(&outer(&p, v_prev));
        gv = step.matrix.matvec(&p);
    }
    grad_m
}

/// Reverse-mode through the whole deflation chain of power-iteration steps.
///
/// `grad_vs[i]` is the cotangent of step i's final iterate; `direct[i]`, when
/// present, lands straight on step i's deflated matrix (eigenvalue paths).
pub fn pi_chain_backward(
    steps: &[PiStep],
    grad_vs: &[Vec<f64>],
    direct: Option<&[Mat64]>,
) -> Mat64 {
    assert_eq!(steps.len(), grad_vs.len());
    let n = steps[0].matrix.dim();
    let mut acc: Mat64 = Matrix::zeros(n, n);
    for i in (0..steps.len()).rev() {
        let step = &steps[i];
        let v = step.estimate();

        let s = acc.symmetrized();
        let sv = s.matvec(v);
        let msv = step.matrix.matvec(&sv);
        let mv = step.matrix.matvec(v);
        let smv = s.matvec(&mv);
        let mut t = grad_vs[i].clone();
        for (x, (&a, &b)) in t.iter_mut().zip(msv.iter().zip(&smv)) {
            *x -= a + b;
        }

        let av = acc.matvec(v);
        let atv = acc.transpose().matvec(v);
        let mut passed = acc;
        for r in 0..n {
            let row = passed.row_mut(r);
            for c in 0..n {
                row[c] -= 0.5 * (av[r] * v[c] + v[r] * atv[c]);
            }
        }

        passed = passed.add(&pi_step_backward(step, &t));
        if let Some(d) = direct {
            passed = passed.add(&d[i]);
        }
        acc = passed;
    }
    acc
}
