//! ZCA whitening layer.
//!
//! Train-mode forward, per group of `d = c / G` channels: center the block,
//! form the regularized Gram matrix, take its exact eigendecomposition, run
//! the truncated deflation loop, and whiten with
//! `S = V_r diag(lambda_r)^{-1/2} V_r^T` built from the Rayleigh-quotient
//! eigenvalues. Running mean and running subspace are exponential moving
//! averages used verbatim in eval mode. The backward pass routes the loss
//! cotangent through the affine transform, the whitening transform, the
//! deflation chain (truncated power-iteration gradients) and the Gram map,
//! treating the running statistics as constants.

use std::io::{BufRead, Write};

use crate::error::LinalgError;
use crate::grad::deflation_backward;
use crate::io::{read_named_array, write_named_array};
use crate::matrix::{dot, Matrix};
use crate::scalar::{cst, Scalar};

use super::{
    affine, center_rows, centering_backward, eigen_with_retry, group_apply, regularized_gram,
    row_means, truncated_deflation, Batch, GroupTape, LayerError, LayerKind, LayerMode,
    LayerTape, WHITENING_ENERGY_THRESHOLD,
};

/// State of a ZCA whitening layer over `c` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ZcaLayerState<F> {
    pub running_mean: Vec<F>,
    pub running_subspace: Matrix<F>,
    pub gamma: Vec<F>,
    pub beta: Vec<F>,
    pub momentum: F,
    pub epsilon: F,
    pub groups: usize,
}

impl<F: Scalar> ZcaLayerState<F> {
    /// Fresh state: zero mean, identity subspace, unit scale, zero shift,
    /// momentum 0.1, epsilon 1e-4, a single group.
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: vec![F::zero(); channels],
            running_subspace: Matrix::identity(channels),
            gamma: vec![F::one(); channels],
            beta: vec![F::zero(); channels],
            momentum: cst(0.1),
            epsilon: cst(1e-4),
            groups: 1,
        }
    }

    pub fn with_groups(channels: usize, groups: usize) -> Result<Self, LayerError> {
        if groups == 0 || channels % groups != 0 {
            return Err(LayerError::Shape(format!(
                "{groups} groups do not divide {channels} channels"
            )));
        }
        let mut state = Self::new(channels);
        state.groups = groups;
        Ok(state)
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    pub fn validate(&self) -> Result<(), LayerError> {
        let c = self.channels();
        if self.momentum <= F::zero() || self.momentum > F::one() {
            return Err(LayerError::InvalidState(format!(
                "momentum must be in (0, 1], got {}",
                self.momentum
            )));
        }
        if self.epsilon <= F::zero() {
            return Err(LayerError::InvalidState("epsilon must be positive".into()));
        }
        if self.groups == 0 || c % self.groups != 0 {
            return Err(LayerError::InvalidState(format!(
                "{} groups do not divide {c} channels",
                self.groups
            )));
        }
        if self.running_subspace.rows() != c
            || self.running_subspace.cols() != c
            || self.gamma.len() != c
            || self.beta.len() != c
        {
            return Err(LayerError::InvalidState("state arrays disagree on channel count".into()));
        }
        if !self.running_subspace.is_finite() {
            return Err(LayerError::InvalidState("running subspace has non-finite entries".into()));
        }
        Ok(())
    }

    /// Writes the state as named arrays.
    pub fn save<W: Write>(&self, w: &mut W) -> Result<(), LinalgError> {
        let c = self.channels();
        write_named_array(w, "running_mean", &row_vector(&self.running_mean))?;
        write_named_array(w, "running_subspace", &self.running_subspace)?;
        write_named_array(w, "gamma", &row_vector(&self.gamma))?;
        write_named_array(w, "beta", &row_vector(&self.beta))?;
        write_named_array(w, "momentum", &scalar_array(self.momentum))?;
        write_named_array(w, "epsilon", &scalar_array(self.epsilon))?;
        write_named_array(w, "groups", &scalar_array(cst::<F>(self.groups as f64)))?;
        let _ = c;
        Ok(())
    }

    /// Reads state written by [`Self::save`].
    pub fn load<R: BufRead>(r: &mut R) -> Result<Self, LayerError> {
        let mut mean = None;
        let mut subspace = None;
        let mut gamma = None;
        let mut beta = None;
        let mut momentum = None;
        let mut epsilon = None;
        let mut groups = None;
        while let Some((name, array)) = read_named_array::<F, _>(r)? {
            match name.as_str() {
                "running_mean" => mean = Some(array.row(0).to_vec()),
                "running_subspace" => subspace = Some(array),
                "gamma" => gamma = Some(array.row(0).to_vec()),
                "beta" => beta = Some(array.row(0).to_vec()),
                "momentum" => momentum = Some(array.get(0, 0)),
                "epsilon" => epsilon = Some(array.get(0, 0)),
                "groups" => groups = Some(array.get(0, 0).to_usize().unwrap_or(0)),
                other => {
                    return Err(LayerError::InvalidState(format!("unknown array {other:?}")))
                }
            }
        }
        let state = Self {
            running_mean: mean.ok_or_else(|| missing("running_mean"))?,
            running_subspace: subspace.ok_or_else(|| missing("running_subspace"))?,
            gamma: gamma.ok_or_else(|| missing("gamma"))?,
            beta: beta.ok_or_else(|| missing("beta"))?,
            momentum: momentum.ok_or_else(|| missing("momentum"))?,
            epsilon: epsilon.ok_or_else(|| missing("epsilon"))?,
            groups: groups.ok_or_else(|| missing("groups"))?,
        };
        state.validate()?;
        Ok(state)
    }
}

pub(super) fn row_vector<F: Scalar>(v: &[F]) -> Matrix<F> {
    Matrix::from_fn(1, v.len(), |_, j| v[j])
}

pub(super) fn scalar_array<F: Scalar>(x: F) -> Matrix<F> {
    Matrix::from_fn(1, 1, |_, _| x)
}

pub(super) fn missing(name: &str) -> LayerError {
    LayerError::InvalidState(format!("checkpoint is missing array {name:?}"))
}

/// Builds `V_r diag(values)^{-1/2} V_r^T` from the tape steps.
pub(super) fn whitening_transform<F: Scalar>(
    tape: &crate::grad::DeflationTape<F>,
    d: usize,
) -> Matrix<F> {
    let mut s = Matrix::zeros(d, d);
    for step in tape.steps() {
        let w = step.eigenvalue.sqrt().recip();
        for i in 0..d {
            let si = w * step.vector[i];
            let row = s.row_mut(i);
            for (j, &vj) in step.vector.iter().enumerate() {
                row[j] += si * vj;
            }
        }
    }
    s
}

/// ZCA whitening forward pass.
///
/// Train mode returns the tape the backward pass needs and updates the
/// running statistics; eval mode applies the stored statistics and returns no
/// tape. A group whose truncation retains no eigenpair falls back to the
/// identity transform with a logged warning and leaves the running statistics
/// of that group untouched.
pub fn zca_forward<F: Scalar>(
    x: &Batch<F>,
    state: &mut ZcaLayerState<F>,
    mode: LayerMode,
) -> Result<(Batch<F>, Option<LayerTape<F>>), LayerError> {
    state.validate()?;
    let c = state.channels();
    if x.channels() != c {
        return Err(LayerError::Shape(format!(
            "batch has {} channels, layer expects {c}",
            x.channels()
        )));
    }
    let d = c / state.groups;
    let energy = cst::<F>(WHITENING_ENERGY_THRESHOLD);

    match mode {
        LayerMode::Eval => {
            let y0 = group_apply(x, state.groups, |g, block| {
                let mu = &state.running_mean[g * d..(g + 1) * d];
                let centered = center_rows(block, mu);
                let sub = subspace_block(&state.running_subspace, g, d);
                Ok(sub.matmul(&centered))
            })?;
            let y = affine(y0.matrix(), &state.gamma, &state.beta);
            Ok((Batch::new(y)?, None))
        }
        LayerMode::Train => {
            let mut tapes: Vec<GroupTape<F>> = Vec::with_capacity(state.groups);
            let mut updates: Vec<Option<(Vec<F>, Matrix<F>)>> = Vec::with_capacity(state.groups);
            let y0 = group_apply(x, state.groups, |_, block| {
                let mu = row_means(block);
                let centered = center_rows(block, &mu);
                let gram = regularized_gram(&centered, state.epsilon)?;
                let (m, eig) = eigen_with_retry(gram, state.epsilon)?;
                let (transform, deflation, fallback) =
                    match truncated_deflation(&m, &eig, state.epsilon, Some(energy), None) {
                        Ok(tape) => {
                            let s = whitening_transform(&tape, d);
                            (s, tape, false)
                        }
                        Err(LayerError::DegenerateBatch) => {
                            log::warn!(
                                "whitening truncated every eigenpair; using the identity transform for this group"
                            );
                            (Matrix::identity(d), crate::grad::DeflationTape::new(state.epsilon), true)
                        }
                        Err(e) => return Err(e),
                    };
                let pre_affine = transform.matmul(&centered);
                updates.push(if fallback {
                    None
                } else {
                    Some((mu.clone(), transform.clone()))
                });
                tapes.push(GroupTape {
                    rank: deflation.rank(),
                    centered,
                    mean: mu,
                    sigma: None,
                    deflation,
                    transform,
                    pre_affine: pre_affine.clone(),
                    fallback,
                });
                Ok(pre_affine)
            })?;

            for (g, update) in updates.into_iter().enumerate() {
                if let Some((mu, s)) = update {
                    update_running_stats(state, g, d, &mu, &s);
                }
            }

            let y = affine(y0.matrix(), &state.gamma, &state.beta);
            let tape = LayerTape {
                kind: LayerKind::Zca,
                group_dim: d,
                gamma: state.gamma.clone(),
                groups: tapes,
            };
            Ok((Batch::new(y)?, Some(tape)))
        }
    }
}

fn subspace_block<F: Scalar>(subspace: &Matrix<F>, g: usize, d: usize) -> Matrix<F> {
    Matrix::from_fn(d, d, |i, j| subspace.get(g * d + i, g * d + j))
}

fn update_running_stats<F: Scalar>(
    state: &mut ZcaLayerState<F>,
    g: usize,
    d: usize,
    mu: &[F],
    transform: &Matrix<F>,
) {
    let m = state.momentum;
    let keep = F::one() - m;
    for i in 0..d {
        let idx = g * d + i;
        state.running_mean[idx] = m * mu[i] + keep * state.running_mean[idx];
        for j in 0..d {
            let old = state.running_subspace.get(g * d + i, g * d + j);
            state
                .running_subspace
                .set(g * d + i, g * d + j, m * transform.get(i, j) + keep * old);
        }
    }
}

/// ZCA whitening backward pass: gradients of the loss with respect to the
/// input batch and the affine parameters, with running statistics treated as
/// non-differentiable.
pub fn zca_backward<F: Scalar>(
    tape: &LayerTape<F>,
    grad_y: &Matrix<F>,
    k: usize,
) -> Result<(Matrix<F>, Vec<F>, Vec<F>), LayerError> {
    if tape.kind != LayerKind::Zca {
        return Err(LayerError::Shape("tape was not produced by the ZCA forward".into()));
    }
    let d = tape.group_dim;
    let c = d * tape.groups.len();
    let n = tape.groups[0].pre_affine.cols();
    if grad_y.rows() != c || grad_y.cols() != n {
        return Err(LayerError::Shape(format!(
            "cotangent is {}x{}, expected {c}x{n}",
            grad_y.rows(),
            grad_y.cols()
        )));
    }

    let mut grad_beta = vec![F::zero(); c];
    let mut grad_gamma = vec![F::zero(); c];
    let mut grad_x = Matrix::zeros(c, n);

    for (g, group) in tape.groups.iter().enumerate() {
        let gy = grad_y.row_block(g * d, d);
        for i in 0..d {
            let idx = g * d + i;
            let y0_row = group.pre_affine.row(i);
            let gy_row = gy.row(i);
            grad_beta[idx] = gy_row.iter().copied().sum();
            grad_gamma[idx] = dot(gy_row, y0_row);
        }

        // Through the affine scale.
        let g0 = Matrix::from_fn(d, n, |i, j| tape.gamma[g * d + i] * gy.get(i, j));

        let grad_centered = if group.fallback {
            g0
        } else {
            whitening_backward(group, &g0, k)?
        };
        grad_x.set_row_block(g * d, &centering_backward(&grad_centered));
    }

    Ok((grad_x, grad_gamma, grad_beta))
}

/// Backward through `Y0 = S(M(X_c)) X_c` for one group, returning the
/// cotangent on the centered block.
fn whitening_backward<F: Scalar>(
    group: &GroupTape<F>,
    g0: &Matrix<F>,
    k: usize,
) -> Result<Matrix<F>, LayerError> {
    let d = group.transform.rows();
    // Product rule: the direct factor and the transform factor.
    let mut grad_centered = group.transform.matmul(g0);
    let gs = g0.matmul(&group.centered.transpose());

    // S = sum_i lambda_i^{-1/2} v_i v_i^T, lambda_i the Rayleigh quotient on
    // the deflated matrix. Collect cotangents on each eigenvector plus the
    // direct matrix cotangent the eigenvalue path induces.
    let gs_t = gs.transpose();
    let half = cst::<F>(0.5);
    let mut grad_vs = Vec::with_capacity(group.rank);
    let mut direct = Vec::with_capacity(group.rank);
    for step in group.deflation.steps() {
        let v = &step.vector;
        let lambda = step.eigenvalue;
        let inv_sqrt = lambda.sqrt().recip();
        let grad_lambda = -half * inv_sqrt / lambda * quadratic_form(&gs, v);
        let vv = dot(v, v);

        // d(v v^T): (Gs + Gs^T) v, scaled by lambda^{-1/2}.
        let mut gv: Vec<F> = gs
            .matvec(v)
            .iter()
            .zip(gs_t.matvec(v).iter())
            .map(|(&a, &b)| inv_sqrt * (a + b))
            .collect();
        // Rayleigh quotient's own v dependence: 2 (M v - lambda v) / v^T v.
        let mv = step.matrix.matvec(v);
        for (x, (&mvi, &vi)) in gv.iter_mut().zip(mv.iter().zip(v)) {
            *x += grad_lambda * cst::<F>(2.0) * (mvi - lambda * vi) / vv;
        }
        grad_vs.push(gv);

        // Rayleigh quotient's matrix dependence: v v^T / v^T v.
        let mut dm = Matrix::zeros(d, d);
        for i in 0..d {
            let s = grad_lambda * v[i] / vv;
            let row = dm.row_mut(i);
            for (j, &vj) in v.iter().enumerate() {
                row[j] += s * vj;
            }
        }
        direct.push(dm);
    }

    let gm = deflation_backward(&group.deflation, &grad_vs, Some(&direct), k)?;
    // Gram map: d(X X^T + eps I) pushes (Gm + Gm^T) X onto the centered block.
    let gm_sym2 = gm.add(&gm.transpose());
    grad_centered = grad_centered.add(&gm_sym2.matmul(&group.centered));
    Ok(grad_centered)
}

pub(super) fn quadratic_form<F: Scalar>(m: &Matrix<F>, v: &[F]) -> F {
    dot(v, &m.matvec(v))
}
