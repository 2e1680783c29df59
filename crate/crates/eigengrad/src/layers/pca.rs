//! PCA denoising layer: standardize the features, project them onto the top
//! eigenvectors of their covariance, and reconstruct in the original space.
//!
//! The retained rank is either fixed or chosen as the smallest count whose
//! cumulative eigenvalue fraction reaches the energy threshold; both are
//! further capped by the whitening truncation guards. The layer mirrors the
//! ZCA structure: grouped channels, learnable affine, running mean and a
//! running projector used at eval time.

use std::io::{BufRead, Write};

use crate::error::LinalgError;
use crate::grad::deflation_backward;
use crate::io::{read_named_array, write_named_array};
use crate::matrix::{dot, Matrix};
use crate::scalar::{cst, Scalar};

use super::zca::{missing, row_vector, scalar_array};
use super::{
    affine, eigen_with_retry, group_apply, regularized_gram, row_means, truncated_deflation,
    Batch, GroupTape, LayerError, LayerKind, LayerMode, LayerTape,
};

/// How the retained rank is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PcaMode<F> {
    /// Keep exactly this many eigenvectors (at most the group dimension).
    FixedRank(usize),
    /// Keep the smallest rank whose cumulative eigenvalue fraction reaches
    /// the threshold, in (0, 1].
    Energy(F),
}

/// State of a PCA denoising layer over `c` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaLayerState<F> {
    pub mode: PcaMode<F>,
    pub running_mean: Vec<F>,
    /// Running projector, used in place of the batch projector at eval time.
    pub running_subspace: Matrix<F>,
    pub gamma: Vec<F>,
    pub beta: Vec<F>,
    pub momentum: F,
    pub epsilon: F,
    pub groups: usize,
}

impl<F: Scalar> PcaLayerState<F> {
    pub fn fixed(channels: usize, rank: usize) -> Result<Self, LayerError> {
        let state = Self::with_mode(channels, PcaMode::FixedRank(rank));
        state.validate()?;
        Ok(state)
    }

    pub fn energy(channels: usize, threshold: F) -> Result<Self, LayerError> {
        let state = Self::with_mode(channels, PcaMode::Energy(threshold));
        state.validate()?;
        Ok(state)
    }

    fn with_mode(channels: usize, mode: PcaMode<F>) -> Self {
        Self {
            mode,
            running_mean: vec![F::zero(); channels],
            running_subspace: Matrix::identity(channels),
            gamma: vec![F::one(); channels],
            beta: vec![F::zero(); channels],
            momentum: cst(0.1),
            epsilon: cst(1e-4),
            groups: 1,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    pub fn validate(&self) -> Result<(), LayerError> {
        let c = self.channels();
        if self.groups == 0 || c % self.groups != 0 {
            return Err(LayerError::InvalidState(format!(
                "{} groups do not divide {c} channels",
                self.groups
            )));
        }
        match self.mode {
            PcaMode::FixedRank(e) => {
                if e == 0 || e > c / self.groups {
                    return Err(LayerError::InvalidState(format!(
                        "fixed rank {e} outside 1..={} (group dimension)",
                        c / self.groups
                    )));
                }
            }
            PcaMode::Energy(t) => {
                if !(t > F::zero() && t <= F::one()) {
                    return Err(LayerError::InvalidState(format!(
                        "energy threshold must be in (0, 1], got {t}"
                    )));
                }
            }
        }
        if self.momentum <= F::zero() || self.momentum > F::one() {
            return Err(LayerError::InvalidState("momentum must be in (0, 1]".into()));
        }
        if self.epsilon <= F::zero() {
            return Err(LayerError::InvalidState("epsilon must be positive".into()));
        }
        Ok(())
    }

    pub fn save<W: Write>(&self, w: &mut W) -> Result<(), LinalgError> {
        let (kind, value) = match self.mode {
            PcaMode::FixedRank(e) => (F::zero(), cst::<F>(e as f64)),
            PcaMode::Energy(t) => (F::one(), t),
        };
        let mode = Matrix::from_fn(1, 2, |_, j| if j == 0 { kind } else { value });
        write_named_array(w, "mode", &mode)?;
        write_named_array(w, "running_mean", &row_vector(&self.running_mean))?;
        write_named_array(w, "running_subspace", &self.running_subspace)?;
        write_named_array(w, "gamma", &row_vector(&self.gamma))?;
        write_named_array(w, "beta", &row_vector(&self.beta))?;
        write_named_array(w, "momentum", &scalar_array(self.momentum))?;
        write_named_array(w, "epsilon", &scalar_array(self.epsilon))?;
        write_named_array(w, "groups", &scalar_array(cst::<F>(self.groups as f64)))?;
        Ok(())
    }

    pub fn load<R: BufRead>(r: &mut R) -> Result<Self, LayerError> {
        let mut mode = None;
        let mut mean = None;
        let mut subspace = None;
        let mut gamma = None;
        let mut beta = None;
        let mut momentum = None;
        let mut epsilon = None;
        let mut groups = None;
        while let Some((name, array)) = read_named_array::<F, _>(r)? {
            match name.as_str() {
                "mode" => {
                    mode = Some(if array.get(0, 0) == F::zero() {
                        PcaMode::FixedRank(array.get(0, 1).to_usize().unwrap_or(0))
                    } else {
                        PcaMode::Energy(array.get(0, 1))
                    })
                }
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
            mode: mode.ok_or_else(|| missing("mode"))?,
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

/// Per-channel standard deviation about the given means (population form).
fn row_sigmas<F: Scalar>(x: &Matrix<F>, mu: &[F]) -> Vec<F> {
    let inv_n = cst::<F>(1.0 / x.cols() as f64);
    (0..x.rows())
        .map(|i| {
            let mut sum = F::zero();
            for &v in x.row(i) {
                let d = v - mu[i];
                sum += d * d;
            }
            (sum * inv_n).sqrt()
        })
        .collect()
}

fn standardize<F: Scalar>(x: &Matrix<F>, mu: &[F], sigma: &[F], eps: F) -> Matrix<F> {
    Matrix::from_fn(x.rows(), x.cols(), |i, j| {
        (x.get(i, j) - mu[i]) / (sigma[i] + eps)
    })
}

/// Builds the projector `V_r V_r^T` from the tape steps.
fn projector<F: Scalar>(tape: &crate::grad::DeflationTape<F>, d: usize) -> Matrix<F> {
    let mut p = Matrix::zeros(d, d);
    for step in tape.steps() {
        for i in 0..d {
            let si = step.vector[i];
            let row = p.row_mut(i);
            for (j, &vj) in step.vector.iter().enumerate() {
                row[j] += si * vj;
            }
        }
    }
    p
}

/// PCA denoising forward pass.
///
/// Train mode standardizes each group, projects onto the retained
/// eigenvectors, updates the running mean and running projector, and returns
/// the tape. Eval mode centers with the running mean, scales by the batch's
/// deviation about it, and applies the running projector; it mutates nothing
/// and returns no tape.
pub fn pca_forward<F: Scalar>(
    x: &Batch<F>,
    state: &mut PcaLayerState<F>,
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

    match mode {
        LayerMode::Eval => {
            let y0 = group_apply(x, state.groups, |g, block| {
                let mu = &state.running_mean[g * d..(g + 1) * d];
                let sigma = row_sigmas(block, mu);
                let std = standardize(block, mu, &sigma, state.epsilon);
                let proj = Matrix::from_fn(d, d, |i, j| {
                    state.running_subspace.get(g * d + i, g * d + j)
                });
                Ok(proj.matmul(&std))
            })?;
            let y = affine(y0.matrix(), &state.gamma, &state.beta);
            Ok((Batch::new(y)?, None))
        }
        LayerMode::Train => {
            let (energy, max_rank) = match state.mode {
                PcaMode::FixedRank(e) => (None, Some(e)),
                PcaMode::Energy(t) => (Some(t), None),
            };
            let mut tapes: Vec<GroupTape<F>> = Vec::with_capacity(state.groups);
            let mut updates: Vec<Option<(Vec<F>, Matrix<F>)>> = Vec::with_capacity(state.groups);
            let y0 = group_apply(x, state.groups, |_, block| {
                let mu = row_means(block);
                let sigma = row_sigmas(block, &mu);
                let std = standardize(block, &mu, &sigma, state.epsilon);
                let gram = regularized_gram(&std, state.epsilon)?;
                let (m, eig) = eigen_with_retry(gram, state.epsilon)?;
                let (transform, deflation, fallback) =
                    match truncated_deflation(&m, &eig, state.epsilon, energy, max_rank) {
                        Ok(tape) => {
                            let p = projector(&tape, d);
                            (p, tape, false)
                        }
                        Err(LayerError::DegenerateBatch) => {
                            log::warn!(
                                "denoising truncated every eigenpair; using the identity projector for this group"
                            );
                            (Matrix::identity(d), crate::grad::DeflationTape::new(state.epsilon), true)
                        }
                        Err(e) => return Err(e),
                    };
                let pre_affine = transform.matmul(&std);
                updates.push(if fallback {
                    None
                } else {
                    Some((mu.clone(), transform.clone()))
                });
                tapes.push(GroupTape {
                    rank: deflation.rank(),
                    centered: std,
                    mean: mu,
                    sigma: Some(sigma),
                    deflation,
                    transform,
                    pre_affine: pre_affine.clone(),
                    fallback,
                });
                Ok(pre_affine)
            })?;

            let momentum = state.momentum;
            let keep = F::one() - momentum;
            for (g, update) in updates.into_iter().enumerate() {
                if let Some((mu, p)) = update {
                    for i in 0..d {
                        let idx = g * d + i;
                        state.running_mean[idx] =
                            momentum * mu[i] + keep * state.running_mean[idx];
                        for j in 0..d {
                            let old = state.running_subspace.get(g * d + i, g * d + j);
                            state.running_subspace.set(
                                g * d + i,
                                g * d + j,
                                momentum * p.get(i, j) + keep * old,
                            );
                        }
                    }
                }
            }

            let y = affine(y0.matrix(), &state.gamma, &state.beta);
            let tape = LayerTape {
                kind: LayerKind::Pca,
                group_dim: d,
                gamma: state.gamma.clone(),
                groups: tapes,
            };
            Ok((Batch::new(y)?, Some(tape)))
        }
    }
}

/// PCA denoising backward pass: gradients with respect to the input batch and
/// the affine parameters, backpropagating through the projector, the
/// deflation chain and the standardization (mean and deviation included).
pub fn pca_backward<F: Scalar>(
    tape: &LayerTape<F>,
    grad_y: &Matrix<F>,
    k: usize,
) -> Result<(Matrix<F>, Vec<F>, Vec<F>), LayerError> {
    if tape.kind != LayerKind::Pca {
        return Err(LayerError::Shape("tape was not produced by the PCA forward".into()));
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
            grad_beta[idx] = gy.row(i).iter().copied().sum();
            grad_gamma[idx] = dot(gy.row(i), group.pre_affine.row(i));
        }
        let g0 = Matrix::from_fn(d, n, |i, j| tape.gamma[g * d + i] * gy.get(i, j));

        let grad_std = if group.fallback {
            g0
        } else {
            projection_backward(group, &g0, k)?
        };
        grad_x.set_row_block(g * d, &standardize_backward(group, &grad_std));
    }

    Ok((grad_x, grad_gamma, grad_beta))
}

/// Backward through `Y0 = P(M(X_std)) X_std` for one group, returning the
/// cotangent on the standardized block.
fn projection_backward<F: Scalar>(
    group: &GroupTape<F>,
    g0: &Matrix<F>,
    k: usize,
) -> Result<Matrix<F>, LayerError> {
    let mut grad_std = group.transform.matmul(g0);
    let gp = g0.matmul(&group.centered.transpose());
    let gp_t = gp.transpose();
    // P = sum v_i v_i^T: only the eigenvectors carry gradient.
    let grad_vs: Vec<Vec<F>> = group
        .deflation
        .steps()
        .iter()
        .map(|step| {
            gp.matvec(&step.vector)
                .iter()
                .zip(gp_t.matvec(&step.vector).iter())
                .map(|(&a, &b)| a + b)
                .collect()
        })
        .collect();
    let gm = deflation_backward(&group.deflation, &grad_vs, None, k)?;
    let gm_sym2 = gm.add(&gm.transpose());
    grad_std = grad_std.add(&gm_sym2.matmul(&group.centered));
    Ok(grad_std)
}

/// Adjoint of `(x - mean(x)) / (sigma(x) + eps)` applied per channel.
fn standardize_backward<F: Scalar>(group: &GroupTape<F>, grad_std: &Matrix<F>) -> Matrix<F> {
    let sigma = group.sigma.as_ref().expect("PCA tape stores sigma");
    let d = grad_std.rows();
    let n = grad_std.cols();
    let epsilon = group.deflation.epsilon();
    let inv_n = cst::<F>(1.0 / n as f64);
    let mut out = Matrix::zeros(d, n);
    for i in 0..d {
        let s = sigma[i] + epsilon;
        let g = grad_std.row(i);
        let u = group.centered.row(i); // x_std row
        // Centered values recover as u * s.
        let g_dot_centered: F = g.iter().zip(u).map(|(&gi, &ui)| gi * ui * s).sum();
        let sigma_coeff = if sigma[i] > F::zero() {
            g_dot_centered / (s * s * cst::<F>(n as f64) * sigma[i])
        } else {
            F::zero()
        };
        let row = out.row_mut(i);
        for j in 0..n {
            row[j] = g[j] / s - sigma_coeff * u[j] * s;
        }
        // Mean path: subtract the row average.
        let mean: F = row.iter().copied().sum::<F>() * inv_n;
        for v in row.iter_mut() {
            *v -= mean;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{compare, finite_diff_matrix};
    use crate::matrix::outer;
    use crate::spectrum::{generate_matrix, SpectrumProfile, SpectrumSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    /// Batch with a strongly decaying correlation spectrum.
    fn decaying_batch(c: usize, n: usize, seed: u64) -> Batch<f64> {
        let cov = generate_matrix::<f64>(&SpectrumSpec::new(
            c,
            SpectrumProfile::Geometric { ratio: 0.3 },
            seed,
        ))
        .unwrap();
        let eig = crate::eigen::sym_eigen(&cov).unwrap();
        let mut half = Matrix::zeros(c, c);
        for i in 0..c {
            let v = eig.vector(i);
            half = half.add(&outer(&v, &v).scale(eig.value(i).sqrt()));
        }
        Batch::new(half.matmul(&gaussian_matrix(c, n, seed + 1000))).unwrap()
    }

    #[test]
    fn full_threshold_reproduces_standardized_input() {
        let x = decaying_batch(4, 48, 2);
        let mut state = PcaLayerState::energy(4, 1.0).unwrap();
        let (_, tape) = pca_forward(&x, &mut state, LayerMode::Train).unwrap();
        let tape = tape.unwrap();
        assert_eq!(tape.groups[0].rank, 4);
        let y0 = tape.pre_affine();
        let diff = y0.sub(&tape.groups[0].centered).max_abs();
        assert!(diff < 1e-6, "diff {diff}");
    }

    #[test]
    fn fixed_rank_one_projects_onto_the_top_eigendirection() {
        // Rows scaled so the standardized Gram is exactly diagonal with a
        // dominant first channel: the retained eigenvector is e1.
        let u = [
            [1.0, -1.0, -1.0, 1.0],
            [1.0, 1.0, -1.0, -1.0],
        ];
        // Row 0 carries twice the scale, but standardization will equalize;
        // make the first channel dominant after standardization instead by
        // leaving row 1 at a smaller sample spread across more cancellation.
        // Simpler: duplicate structure with exact orthogonality and rely on
        // stable tie ordering, which retains e1 first.
        let x = Matrix::from_fn(2, 4, |i, j| u[i][j] * if i == 0 { 2.0f64 } else { 1.0 });
        let batch = Batch::new(x).unwrap();
        let mut state = PcaLayerState::fixed(2, 1).unwrap();
        let (_, tape) = pca_forward(&batch, &mut state, LayerMode::Train).unwrap();
        let tape = tape.unwrap();
        assert_eq!(tape.groups[0].rank, 1);
        let y0 = tape.pre_affine();
        for j in 0..4 {
            assert!(y0.get(1, j).abs() < 1e-8, "row 1 leaked: {}", y0.get(1, j));
        }
        // Columns lie in span(e1).
        let v = &tape.groups[0].deflation.steps()[0].vector;
        assert!((v[0].abs() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn energy_mode_selects_the_crossing_rank() {
        // Standardized-free check through the machinery is covered in mod
        // tests; here drive the layer end to end and confirm the projector
        // rank matches the threshold crossing of the realized spectrum.
        let x = decaying_batch(4, 64, 5);
        let mut state = PcaLayerState::energy(4, 0.9).unwrap();
        let (_, tape) = pca_forward(&x, &mut state, LayerMode::Train).unwrap();
        let tape = tape.unwrap();
        let group = &tape.groups[0];
        assert!(group.rank >= 1 && group.rank < 4, "rank {}", group.rank);
        // Projector idempotence and column containment.
        let p = &group.transform;
        let pp = p.matmul(p);
        assert!(pp.sub(p).frobenius_norm() < 1e-9);
        let y0 = &group.pre_affine;
        for j in 0..y0.cols() {
            let col: Vec<f64> = (0..4).map(|i| y0.get(i, j)).collect();
            let pc = p.matvec(&col);
            let mut leak = 0.0f64;
            for i in 0..4 {
                leak += (col[i] - pc[i]).powi(2);
            }
            let norm = dot(&col, &col).sqrt();
            assert!(leak.sqrt() <= 1e-8 * norm.max(1e-12));
        }
    }

    #[test]
    fn zero_cotangent_gives_zero_gradients() {
        let x = decaying_batch(4, 32, 7);
        let mut state = PcaLayerState::fixed(4, 2).unwrap();
        let (_, tape) = pca_forward(&x, &mut state, LayerMode::Train).unwrap();
        let (gx, gg, gb) = pca_backward(&tape.unwrap(), &Matrix::zeros(4, 32), 19).unwrap();
        assert_eq!(gx.max_abs(), 0.0);
        assert!(gg.iter().all(|&v| v == 0.0));
        assert!(gb.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_rank_backward_matches_standardization_gradient() {
        // With the projector at full rank its gradient contribution cancels
        // in the converged limit; at a large iteration count what remains is
        // the standardization backward, checked against the closed form.
        let c = 3;
        let n = 24;
        let x = decaying_batch(c, n, 11);
        let gy = gaussian_matrix(c, n, 12).scale(0.1);
        let mut state = PcaLayerState::energy(c, 1.0).unwrap();
        let (_, tape) = pca_forward(&x, &mut state, LayerMode::Train).unwrap();
        let tape = tape.unwrap();
        let (gx, _, _) = pca_backward(&tape, &gy, 200).unwrap();

        // Closed-form oracle: backward of standardization alone.
        let group = &tape.groups[0];
        let oracle = standardize_backward(group, &gy);
        let result = compare(&gx, &oracle).unwrap();
        assert!(
            result.relative_error < 1e-6,
            "relative error {}",
            result.relative_error
        );
    }

    #[test]
    fn backward_matches_finite_differences() {
        // Standardization reshapes the spectrum, so pick the first seed whose
        // realized Gram keeps all consecutive eigenvalue ratios below 0.6;
        // that keeps the iteration-truncation error well under the check
        // tolerance at K = 19.
        let c = 4;
        let n = 32;
        let (x, _) = (2u64..64)
            .map(|seed| (decaying_batch(c, n, seed), seed))
            .find(|(x, _)| {
                let mu = super::super::row_means(x.matrix());
                let sigma = row_sigmas(x.matrix(), &mu);
                let std = standardize(x.matrix(), &mu, &sigma, 1e-4);
                let gram = super::super::regularized_gram(&std, 1e-4).unwrap();
                let eig = crate::eigen::sym_eigen(&gram).unwrap();
                eig.values()
                    .windows(2)
                    .all(|w| w[1] / w[0] <= 0.6)
            })
            .expect("a well-separated batch exists");
        let gy = gaussian_matrix(c, n, 16).scale(0.2);
        let mut state = PcaLayerState::fixed(c, 2).unwrap();
        state.gamma = vec![1.1, 0.9, -0.7, 1.0];
        let (_, tape) = pca_forward(&x, &mut state, LayerMode::Train).unwrap();
        let (gx, _, _) = pca_backward(&tape.unwrap(), &gy, 19).unwrap();

        let state_snapshot = state.clone();
        let fd = finite_diff_matrix(
            |xm| {
                let mut s = state_snapshot.clone();
                let batch = Batch::new(xm.clone()).expect("finite batch");
                let (y, _) = pca_forward(&batch, &mut s, LayerMode::Train).expect("forward");
                y.matrix()
                    .data()
                    .iter()
                    .zip(gy.data())
                    .map(|(&a, &b)| a * b)
                    .sum()
            },
            x.matrix(),
            1e-5,
        )
        .unwrap();
        let result = compare(&gx, &fd).unwrap();
        assert!(
            result.relative_error < 1e-3,
            "relative error {}",
            result.relative_error
        );
    }

    #[test]
    fn eval_mode_is_pure() {
        let x = decaying_batch(4, 64, 19);
        let mut state = PcaLayerState::energy(4, 0.95).unwrap();
        pca_forward(&x, &mut state, LayerMode::Train).unwrap();
        let snapshot = state.clone();
        let (y1, tape) = pca_forward(&x, &mut state, LayerMode::Eval).unwrap();
        assert!(tape.is_none());
        assert_eq!(state, snapshot);
        let (y2, _) = pca_forward(&x, &mut state, LayerMode::Eval).unwrap();
        assert_eq!(y1.matrix().data(), y2.matrix().data());
    }

    #[test]
    fn state_round_trips_through_text() {
        let mut state = PcaLayerState::<f64>::energy(4, 0.95).unwrap();
        state.running_mean = vec![0.25, -0.5, 1.0, 0.0];
        state.beta = vec![0.1, 0.2, 0.3, 0.4];
        let mut buf = Vec::new();
        state.save(&mut buf).unwrap();
        let loaded =
            PcaLayerState::<f64>::load(&mut std::io::BufReader::new(buf.as_slice())).unwrap();
        assert_eq!(loaded, state);

        let fixed = PcaLayerState::<f64>::fixed(6, 3).unwrap();
        let mut buf = Vec::new();
        fixed.save(&mut buf).unwrap();
        let loaded =
            PcaLayerState::<f64>::load(&mut std::io::BufReader::new(buf.as_slice())).unwrap();
        assert_eq!(loaded, fixed);
    }
}
