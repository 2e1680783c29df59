//! Micro-training stability harness: a two-layer perceptron on a seeded
//! Gaussian-mixture classification task, with a normalization layer after the
//! first linear map. Records divergence and accuracy per trial.
//!
//! The harness exists to compare gradient methods under identical training
//! conditions: the stable path uses the library layers; the `svd` and `pi`
//! baselines swap in the analytical backward (no truncation) and the
//! random-start deflation power iteration respectively.

use anyhow::{bail, Result};
use eigengrad::layers::{
    pca_backward, pca_forward, zca_backward, zca_forward, Batch, LayerMode, LayerTape,
    PcaLayerState, ZcaLayerState,
};
use eigengrad::matrix::{dot, outer, Matrix};
use eigengrad::{sym_eigen, EigenDecomposition, Mat64, SymMat64};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::baselines::{analytical_matrix_cotangent, pi_chain_backward, pi_deflation, PiStep};
use crate::records::{LayerChoice, Method, TrainRecord};

pub const INPUT_DIM: usize = 64;
pub const HIDDEN_DIM: usize = 64;
pub const CLASSES: usize = 8;
pub const TRAIN_POINTS: usize = 4096;
pub const EVAL_POINTS: usize = 1024;
pub const BATCH_SIZE: usize = 128;
/// A trial counts as diverged when any step's loss is non-finite or exceeds
/// this threshold.
pub const DIVERGENCE_THRESHOLD: f64 = 1e3;

/// Input distribution for the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataKind {
    /// Full-rank Gaussian mixture.
    Gaussian,
    /// Duplicated features: samples live in an 8-dimensional subspace, so
    /// hidden covariances are rank-deficient. Stresses untruncated methods.
    Degenerate,
}

/// Feature magnitude of the degenerate dataset. Large-scale rank-deficient
/// features push the computed floor eigenvalues of the regularized Gram
/// matrix negative, which is precisely the failure the truncation guard
/// protects against and untruncated whitening does not survive.
pub const DEGENERATE_SCALE: f64 = 2e4;

impl DataKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gaussian" => Some(DataKind::Gaussian),
            "degenerate" => Some(DataKind::Degenerate),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub layer: LayerChoice,
    pub method: Method,
    pub group_size: usize,
    pub trials: usize,
    pub epochs: usize,
    pub lr: f64,
    pub iterations: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub data: DataKind,
    pub pca_rank: Option<usize>,
    pub pca_energy: Option<f64>,
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.group_size == 0 || HIDDEN_DIM % self.group_size != 0 {
            bail!(
                "--group-size must divide the hidden width {HIDDEN_DIM}, got {}",
                self.group_size
            );
        }
        if self.trials == 0 || self.epochs == 0 {
            bail!("--trials and --epochs must be positive");
        }
        if !(self.lr > 0.0) {
            bail!("--lr must be positive");
        }
        if self.pca_rank.is_some() && self.pca_energy.is_some() {
            bail!("--rank and --energy are mutually exclusive");
        }
        if let Some(e) = self.pca_rank {
            if e == 0 || e > self.group_size {
                bail!("--rank must lie in 1..={}", self.group_size);
            }
        }
        if let Some(t) = self.pca_energy {
            if !(t > 0.0 && t <= 1.0) {
                bail!("--energy must lie in (0, 1], got {t}");
            }
        }
        Ok(())
    }
}

fn gaussian_matrix(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> Mat64 {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Seeded classification data: features as columns, one label per column.
struct Dataset {
    features: Mat64,
    labels: Vec<usize>,
}

fn make_dataset(kind: DataKind, points: usize, means_seed: u64, noise_seed: u64) -> Dataset {
    let mut means_rng = ChaCha20Rng::seed_from_u64(means_seed);
    let mut rng = ChaCha20Rng::seed_from_u64(noise_seed);
    let base_dim = match kind {
        DataKind::Gaussian => INPUT_DIM,
        DataKind::Degenerate => INPUT_DIM / 8,
    };
    let means = gaussian_matrix(&mut means_rng, base_dim, CLASSES).scale(1.5);
    let mut features = Matrix::zeros(INPUT_DIM, points);
    let mut labels = Vec::with_capacity(points);
    for p in 0..points {
        let label = p % CLASSES;
        labels.push(label);
        for i in 0..base_dim {
            let value = means.get(i, label) + <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
            match kind {
                DataKind::Gaussian => features.set(i, p, value),
                DataKind::Degenerate => {
                    // Tile the low-dimensional sample across all channels.
                    for copy in 0..(INPUT_DIM / base_dim) {
                        features.set(copy * base_dim + i, p, value * DEGENERATE_SCALE);
                    }
                }
            }
        }
    }
    Dataset { features, labels }
}

// ---------------------------------------------------------------------------
// Normalization layers
// ---------------------------------------------------------------------------

/// Per-channel standardization with running statistics, the batch-norm-like
/// baseline.
struct BnState {
    gamma: Vec<f64>,
    beta: Vec<f64>,
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
    momentum: f64,
    epsilon: f64,
}

struct BnTape {
    y0: Mat64,
    inv_std: Vec<f64>,
    gamma: Vec<f64>,
}

impl BnState {
    fn new(c: usize, epsilon: f64) -> Self {
        Self {
            gamma: vec![1.0; c],
            beta: vec![0.0; c],
            running_mean: vec![0.0; c],
            running_var: vec![1.0; c],
            momentum: 0.1,
            epsilon,
        }
    }

    fn forward(&mut self, x: &Mat64, train: bool) -> (Mat64, Option<BnTape>) {
        let c = x.rows();
        let n = x.cols();
        let inv_n = 1.0 / n as f64;
        if train {
            let mut y0 = Matrix::zeros(c, n);
            let mut inv_std = vec![0.0; c];
            for i in 0..c {
                let mu: f64 = x.row(i).iter().sum::<f64>() * inv_n;
                let var: f64 =
                    x.row(i).iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() * inv_n;
                let s = (var + self.epsilon).sqrt();
                inv_std[i] = 1.0 / s;
                for j in 0..n {
                    y0.set(i, j, (x.get(i, j) - mu) * inv_std[i]);
                }
                self.running_mean[i] = self.momentum * mu + (1.0 - self.momentum) * self.running_mean[i];
                self.running_var[i] = self.momentum * var + (1.0 - self.momentum) * self.running_var[i];
            }
            let y = affine(&y0, &self.gamma, &self.beta);
            (y, Some(BnTape { y0, inv_std, gamma: self.gamma.clone() }))
        } else {
            let mut y = Matrix::zeros(c, n);
            for i in 0..c {
                let s = (self.running_var[i] + self.epsilon).sqrt();
                for j in 0..n {
                    y.set(
                        i,
                        j,
                        self.gamma[i] * (x.get(i, j) - self.running_mean[i]) / s + self.beta[i],
                    );
                }
            }
            (y, None)
        }
    }

    fn backward(&self, tape: &BnTape, gy: &Mat64) -> (Mat64, Vec<f64>, Vec<f64>) {
        let c = gy.rows();
        let n = gy.cols();
        let inv_n = 1.0 / n as f64;
        let mut gx = Matrix::zeros(c, n);
        let mut ggamma = vec![0.0; c];
        let mut gbeta = vec![0.0; c];
        for i in 0..c {
            let gy_row = gy.row(i);
            let y0_row = tape.y0.row(i);
            gbeta[i] = gy_row.iter().sum();
            ggamma[i] = dot(gy_row, y0_row);
            let mean_g0 = tape.gamma[i] * gbeta[i] * inv_n;
            let mean_g0y0 = tape.gamma[i] * ggamma[i] * inv_n;
            for j in 0..n {
                let g0 = tape.gamma[i] * gy_row[j];
                gx.set(i, j, (g0 - mean_g0 - y0_row[j] * mean_g0y0) * tape.inv_std[i]);
            }
        }
        (gx, ggamma, gbeta)
    }
}

fn affine(y0: &Mat64, gamma: &[f64], beta: &[f64]) -> Mat64 {
    Matrix::from_fn(y0.rows(), y0.cols(), |i, j| gamma[i] * y0.get(i, j) + beta[i])
}

/// Whitening/denoising layer driven by one of the baseline gradient methods.
/// The `svd` flavour keeps the full spectrum (no truncation guard) and uses
/// the analytical backward; the `pi` flavour estimates eigenvectors by
/// deflation power iteration and differentiates through the iterates.
struct BaselineState {
    layer: LayerChoice,
    method: Method,
    gamma: Vec<f64>,
    beta: Vec<f64>,
    running_mean: Vec<f64>,
    running_subspace: Mat64,
    momentum: f64,
    epsilon: f64,
    groups: usize,
    k: usize,
    pca_rank: Option<usize>,
    pca_energy: Option<f64>,
    pi_seed: u64,
    pi_counter: u64,
}

struct BaselineGroupTape {
    centered: Mat64,
    sigma: Option<Vec<f64>>,
    eig: Option<EigenDecomposition<f64>>,
    pi_steps: Option<Vec<PiStep>>,
    transform: Mat64,
    pre_affine: Mat64,
    rank: usize,
    epsilon: f64,
}

struct BaselineTape {
    groups: Vec<BaselineGroupTape>,
    gamma: Vec<f64>,
    group_dim: usize,
}

impl BaselineState {
    #[allow(clippy::too_many_arguments)]
    fn new(
        layer: LayerChoice,
        method: Method,
        channels: usize,
        groups: usize,
        epsilon: f64,
        k: usize,
        pca_rank: Option<usize>,
        pca_energy: Option<f64>,
        pi_seed: u64,
    ) -> Self {
        Self {
            layer,
            method,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_subspace: Matrix::identity(channels),
            momentum: 0.1,
            epsilon,
            groups,
            k,
            pca_rank,
            pca_energy,
            pi_seed,
            pi_counter: 0,
        }
    }

    fn forward(&mut self, x: &Mat64, train: bool) -> Result<(Mat64, Option<BaselineTape>)> {
        let c = x.rows();
        let n = x.cols();
        let d = c / self.groups;
        let mut y0 = Matrix::zeros(c, n);
        let mut tapes = Vec::with_capacity(self.groups);
        for g in 0..self.groups {
            let block = x.row_block(g * d, d);
            if !train {
                let mu = &self.running_mean[g * d..(g + 1) * d];
                let centered = match self.layer {
                    LayerChoice::Zca => center(&block, mu),
                    LayerChoice::Pca => {
                        let sigma = sigmas_about(&block, mu);
                        standardize(&block, mu, &sigma, self.epsilon)
                    }
                    _ => unreachable!("baseline layers are zca or pca"),
                };
                let proj = Matrix::from_fn(d, d, |i, j| {
                    self.running_subspace.get(g * d + i, g * d + j)
                });
                y0.set_row_block(g * d, &proj.matmul(&centered));
                continue;
            }

            let mu = means(&block);
            let (centered, sigma) = match self.layer {
                LayerChoice::Zca => (center(&block, &mu), None),
                LayerChoice::Pca => {
                    let sigma = sigmas_about(&block, &mu);
                    (standardize(&block, &mu, &sigma, self.epsilon), Some(sigma))
                }
                _ => unreachable!(),
            };
            let gram = SymMat64::new(centered.matmul(&centered.transpose()))?
                .add_scaled_identity(self.epsilon);

            let tape = match self.method {
                Method::Svd => {
                    let eig = sym_eigen(&gram)?;
                    let (transform, rank) = match self.layer {
                        LayerChoice::Zca => {
                            // Full-spectrum whitening, the untruncated reference.
                            let mut s = Matrix::zeros(d, d);
                            for i in 0..d {
                                // Plain formula; a rounding-negative eigenvalue
                                // turns this into NaN, as it does for any
                                // untruncated implementation.
                                let w = eig.value(i).sqrt().recip();
                                s = s.add(&outer(&eig.vector(i), &eig.vector(i)).scale(w));
                            }
                            (s, d)
                        }
                        LayerChoice::Pca => {
                            let e = self.pca_retained(eig.values());
                            let mut p = Matrix::zeros(d, d);
                            for i in 0..e {
                                p = p.add(&outer(&eig.vector(i), &eig.vector(i)));
                            }
                            (p, e)
                        }
                        _ => unreachable!(),
                    };
                    let pre_affine = transform.matmul(&centered);
                    BaselineGroupTape {
                        centered,
                        sigma,
                        eig: Some(eig),
                        pi_steps: None,
                        transform,
                        pre_affine,
                        rank,
                        epsilon: self.epsilon,
                    }
                }
                Method::Pi => {
                    self.pi_counter += 1;
                    let init = self.pi_seed.wrapping_mul(0x9E37_79B9).wrapping_add(self.pi_counter);
                    let depth = match self.layer {
                        LayerChoice::Zca => d,
                        LayerChoice::Pca => self.pca_rank.unwrap_or(d),
                        _ => unreachable!(),
                    };
                    let mut steps = pi_deflation(&gram, depth, self.k, self.epsilon, init)?;
                    if let (LayerChoice::Pca, Some(threshold)) = (self.layer, self.pca_energy) {
                        // Trace equals the eigenvalue sum; retain estimates
                        // until their share of it crosses the threshold.
                        let total: f64 = (0..d).map(|i| gram.get(i, i)).sum();
                        let mut cum = 0.0;
                        let mut keep = 0;
                        for step in &steps {
                            cum += step.eigenvalue;
                            keep += 1;
                            if cum / total >= threshold {
                                break;
                            }
                        }
                        steps.truncate(keep);
                    }
                    let rank = steps.len();
                    let mut transform = Matrix::zeros(d, d);
                    for step in &steps {
                        let v = step.estimate();
                        let w = match self.layer {
                            LayerChoice::Zca => step.eigenvalue.sqrt().recip(),
                            LayerChoice::Pca => 1.0,
                            _ => unreachable!(),
                        };
                        transform = transform.add(&outer(v, v).scale(w));
                    }
                    let pre_affine = transform.matmul(&centered);
                    BaselineGroupTape {
                        centered,
                        sigma,
                        eig: None,
                        pi_steps: Some(steps),
                        transform,
                        pre_affine,
                        rank,
                        epsilon: self.epsilon,
                    }
                }
                Method::Hybrid => unreachable!("hybrid uses the library layers"),
            };

            y0.set_row_block(g * d, &tape.pre_affine);
            // Running statistics, shared update rule.
            for i in 0..d {
                let idx = g * d + i;
                self.running_mean[idx] =
                    self.momentum * mu[i] + (1.0 - self.momentum) * self.running_mean[idx];
                for j in 0..d {
                    let old = self.running_subspace.get(g * d + i, g * d + j);
                    self.running_subspace.set(
                        g * d + i,
                        g * d + j,
                        self.momentum * tape.transform.get(i, j) + (1.0 - self.momentum) * old,
                    );
                }
            }
            tapes.push(tape);
        }
        let y = affine(&y0, &self.gamma, &self.beta);
        if train {
            Ok((
                y,
                Some(BaselineTape { groups: tapes, gamma: self.gamma.clone(), group_dim: d }),
            ))
        } else {
            Ok((y, None))
        }
    }

    fn pca_retained(&self, values: &[f64]) -> usize {
        if let Some(e) = self.pca_rank {
            return e.min(values.len());
        }
        let threshold = self.pca_energy.unwrap_or(0.95);
        let total: f64 = values.iter().sum();
        let mut cum = 0.0;
        for (i, &l) in values.iter().enumerate() {
            cum += l;
            if cum / total >= threshold {
                return i + 1;
            }
        }
        values.len()
    }

    fn backward(&self, tape: &BaselineTape, gy: &Mat64) -> Result<(Mat64, Vec<f64>, Vec<f64>)> {
        let d = tape.group_dim;
        let c = d * tape.groups.len();
        let n = gy.cols();
        let mut gx = Matrix::zeros(c, n);
        let mut ggamma = vec![0.0; c];
        let mut gbeta = vec![0.0; c];
        for (g, group) in tape.groups.iter().enumerate() {
            let gy_block = gy.row_block(g * d, d);
            for i in 0..d {
                gbeta[g * d + i] = gy_block.row(i).iter().sum();
                ggamma[g * d + i] = dot(gy_block.row(i), group.pre_affine.row(i));
            }
            let g0 = Matrix::from_fn(d, n, |i, j| tape.gamma[g * d + i] * gy_block.get(i, j));

            let mut grad_centered = group.transform.matmul(&g0);
            let gt = g0.matmul(&group.centered.transpose());
            let gt_t = gt.transpose();

            let gm: Mat64 = match (&group.eig, &group.pi_steps) {
                (Some(eig), None) => {
                    let mut grad_vs = Vec::with_capacity(group.rank);
                    let mut grad_vals = Vec::with_capacity(group.rank);
                    for i in 0..group.rank {
                        let v = eig.vector(i);
                        match self.layer {
                            LayerChoice::Zca => {
                                let l = eig.value(i);
                                let inv_sqrt = l.sqrt().recip();
                                let gv: Vec<f64> = gt
                                    .matvec(&v)
                                    .iter()
                                    .zip(gt_t.matvec(&v).iter())
                                    .map(|(&a, &b)| inv_sqrt * (a + b))
                                    .collect();
                                grad_vs.push(gv);
                                grad_vals.push(-0.5 * inv_sqrt / l * dot(&v, &gt.matvec(&v)));
                            }
                            LayerChoice::Pca => {
                                let gv: Vec<f64> = gt
                                    .matvec(&v)
                                    .iter()
                                    .zip(gt_t.matvec(&v).iter())
                                    .map(|(&a, &b)| a + b)
                                    .collect();
                                grad_vs.push(gv);
                                grad_vals.push(0.0);
                            }
                            _ => unreachable!(),
                        }
                    }
                    analytical_matrix_cotangent(eig, &grad_vs, &grad_vals)
                }
                (None, Some(steps)) => {
                    let mut grad_vs = Vec::with_capacity(steps.len());
                    let mut direct = Vec::with_capacity(steps.len());
                    for step in steps {
                        let v = step.estimate();
                        match self.layer {
                            LayerChoice::Zca => {
                                let l = step.eigenvalue;
                                let inv_sqrt = l.sqrt().recip();
                                let grad_l = -0.5 * inv_sqrt / l * dot(v, &gt.matvec(v));
                                let vv = dot(v, v);
                                let mut gv: Vec<f64> = gt
                                    .matvec(v)
                                    .iter()
                                    .zip(gt_t.matvec(v).iter())
                                    .map(|(&a, &b)| inv_sqrt * (a + b))
                                    .collect();
                                let mv = step.matrix.matvec(v);
                                for (x, (&mvi, &vi)) in gv.iter_mut().zip(mv.iter().zip(v)) {
                                    *x += grad_l * 2.0 * (mvi - l * vi) / vv;
                                }
                                grad_vs.push(gv);
                                direct.push(outer(v, v).scale(grad_l / vv));
                            }
                            LayerChoice::Pca => {
                                let gv: Vec<f64> = gt
                                    .matvec(v)
                                    .iter()
                                    .zip(gt_t.matvec(v).iter())
                                    .map(|(&a, &b)| a + b)
                                    .collect();
                                grad_vs.push(gv);
                                direct.push(Matrix::zeros(d, d));
                            }
                            _ => unreachable!(),
                        }
                    }
                    pi_chain_backward(steps, &grad_vs, Some(&direct))
                }
                _ => unreachable!("tape carries exactly one eigen record"),
            };
            let gm2 = gm.add(&gm.transpose());
            grad_centered = grad_centered.add(&gm2.matmul(&group.centered));

            let block = match self.layer {
                LayerChoice::Zca => centering_backward(&grad_centered),
                LayerChoice::Pca => standardize_backward(group, &grad_centered),
                _ => unreachable!(),
            };
            gx.set_row_block(g * d, &block);
        }
        Ok((gx, ggamma, gbeta))
    }
}

fn means(x: &Mat64) -> Vec<f64> {
    let inv_n = 1.0 / x.cols() as f64;
    (0..x.rows()).map(|i| x.row(i).iter().sum::<f64>() * inv_n).collect()
}

fn sigmas_about(x: &Mat64, mu: &[f64]) -> Vec<f64> {
    let inv_n = 1.0 / x.cols() as f64;
    (0..x.rows())
        .map(|i| {
            x.row(i)
                .iter()
                .map(|&v| (v - mu[i]) * (v - mu[i]))
                .sum::<f64>()
                * inv_n
        })
        .map(f64::sqrt)
        .collect()
}

fn center(x: &Mat64, mu: &[f64]) -> Mat64 {
    Matrix::from_fn(x.rows(), x.cols(), |i, j| x.get(i, j) - mu[i])
}

fn standardize(x: &Mat64, mu: &[f64], sigma: &[f64], eps: f64) -> Mat64 {
    Matrix::from_fn(x.rows(), x.cols(), |i, j| (x.get(i, j) - mu[i]) / (sigma[i] + eps))
}

fn centering_backward(g: &Mat64) -> Mat64 {
    let mu = means(g);
    Matrix::from_fn(g.rows(), g.cols(), |i, j| g.get(i, j) - mu[i])
}

/// Adjoint of per-channel standardization, mirroring the library layer's
/// convention (deviation about the batch mean, epsilon added to sigma).
fn standardize_backward(group: &BaselineGroupTape, grad_std: &Mat64) -> Mat64 {
    let sigma = group.sigma.as_ref().expect("pca tape stores sigma");
    let d = grad_std.rows();
    let n = grad_std.cols();
    let inv_n = 1.0 / n as f64;
    let mut out = Matrix::zeros(d, n);
    for i in 0..d {
        let s = sigma[i] + group.epsilon;
        let g = grad_std.row(i);
        let u = group.centered.row(i);
        let g_dot_centered: f64 = g.iter().zip(u).map(|(&gi, &ui)| gi * ui * s).sum();
        let sigma_coeff = if sigma[i] > 0.0 {
            g_dot_centered / (s * s * n as f64 * sigma[i])
        } else {
            0.0
        };
        let row = out.row_mut(i);
        for j in 0..n {
            row[j] = g[j] / s - sigma_coeff * u[j] * s;
        }
        let mean: f64 = row.iter().sum::<f64>() * inv_n;
        for v in row.iter_mut() {
            *v -= mean;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// The model
// ---------------------------------------------------------------------------

enum NormLayer {
    None,
    Bn(BnState),
    ZcaHybrid(ZcaLayerState<f64>),
    PcaHybrid(PcaLayerState<f64>),
    Baseline(BaselineState),
}

enum NormTape {
    None,
    Bn(BnTape),
    Hybrid(LayerTape<f64>),
    Baseline(BaselineTape),
}

impl NormLayer {
    fn build(config: &TrainConfig, trial_seed: u64) -> Result<Self> {
        let groups = HIDDEN_DIM / config.group_size;
        Ok(match (config.layer, config.method) {
            (LayerChoice::None, _) => NormLayer::None,
            (LayerChoice::BnLike, _) => NormLayer::Bn(BnState::new(HIDDEN_DIM, config.epsilon)),
            (LayerChoice::Zca, Method::Hybrid) => {
                let mut state = ZcaLayerState::with_groups(HIDDEN_DIM, groups)?;
                state.epsilon = config.epsilon;
                NormLayer::ZcaHybrid(state)
            }
            (LayerChoice::Pca, Method::Hybrid) => {
                let mut state = match (config.pca_rank, config.pca_energy) {
                    (Some(e), _) => PcaLayerState::fixed(HIDDEN_DIM, e)?,
                    (None, Some(t)) => PcaLayerState::energy(HIDDEN_DIM, t)?,
                    (None, None) => PcaLayerState::energy(HIDDEN_DIM, 0.95)?,
                };
                state.groups = groups;
                state.epsilon = config.epsilon;
                state.validate()?;
                NormLayer::PcaHybrid(state)
            }
            (layer @ (LayerChoice::Zca | LayerChoice::Pca), method) => {
                NormLayer::Baseline(BaselineState::new(
                    layer,
                    method,
                    HIDDEN_DIM,
                    groups,
                    config.epsilon,
                    config.iterations,
                    config.pca_rank,
                    config.pca_energy.or(match layer {
                        LayerChoice::Pca if config.pca_rank.is_none() => Some(0.95),
                        _ => None,
                    }),
                    trial_seed,
                ))
            }
        })
    }

    fn forward(&mut self, x: &Mat64, train: bool, k: usize) -> Result<(Mat64, NormTape)> {
        match self {
            NormLayer::None => Ok((x.clone(), NormTape::None)),
            NormLayer::Bn(state) => {
                let (y, tape) = state.forward(x, train);
                Ok((y, tape.map_or(NormTape::None, NormTape::Bn)))
            }
            NormLayer::ZcaHybrid(state) => {
                let mode = if train { LayerMode::Train } else { LayerMode::Eval };
                let (y, tape) = zca_forward(&Batch::new(x.clone())?, state, mode)?;
                let _ = k;
                Ok((y.into_matrix(), tape.map_or(NormTape::None, NormTape::Hybrid)))
            }
            NormLayer::PcaHybrid(state) => {
                let mode = if train { LayerMode::Train } else { LayerMode::Eval };
                let (y, tape) = pca_forward(&Batch::new(x.clone())?, state, mode)?;
                Ok((y.into_matrix(), tape.map_or(NormTape::None, NormTape::Hybrid)))
            }
            NormLayer::Baseline(state) => {
                let (y, tape) = state.forward(x, train)?;
                Ok((y, tape.map_or(NormTape::None, NormTape::Baseline)))
            }
        }
    }

    fn backward(
        &self,
        tape: &NormTape,
        gy: &Mat64,
        k: usize,
    ) -> Result<(Mat64, Vec<f64>, Vec<f64>)> {
        match (self, tape) {
            (NormLayer::None, _) => Ok((gy.clone(), Vec::new(), Vec::new())),
            (NormLayer::Bn(state), NormTape::Bn(t)) => Ok(state.backward(t, gy)),
            (NormLayer::ZcaHybrid(_), NormTape::Hybrid(t)) => Ok(zca_backward(t, gy, k)?),
            (NormLayer::PcaHybrid(_), NormTape::Hybrid(t)) => Ok(pca_backward(t, gy, k)?),
            (NormLayer::Baseline(state), NormTape::Baseline(t)) => state.backward(t, gy),
            _ => anyhow::bail!("tape does not match the layer"),
        }
    }

    fn sgd(&mut self, ggamma: &[f64], gbeta: &[f64], lr: f64) {
        let (gamma, beta): (&mut Vec<f64>, &mut Vec<f64>) = match self {
            NormLayer::None => return,
            NormLayer::Bn(s) => (&mut s.gamma, &mut s.beta),
            NormLayer::ZcaHybrid(s) => (&mut s.gamma, &mut s.beta),
            NormLayer::PcaHybrid(s) => (&mut s.gamma, &mut s.beta),
            NormLayer::Baseline(s) => (&mut s.gamma, &mut s.beta),
        };
        for (p, &g) in gamma.iter_mut().zip(ggamma) {
            *p -= lr * g;
        }
        for (p, &g) in beta.iter_mut().zip(gbeta) {
            *p -= lr * g;
        }
    }
}

struct Mlp {
    w1: Mat64,
    b1: Vec<f64>,
    w2: Mat64,
    b2: Vec<f64>,
}

impl Mlp {
    fn new(seed: u64, layer: LayerChoice) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let scale1 = 1.0 / (INPUT_DIM as f64).sqrt();
        // Whitening normalizes each hidden channel to unit norm across the
        // batch, so its activations are a factor sqrt(batch) smaller than
        // standardized ones; initialize the head to match.
        let scale2 = match layer {
            LayerChoice::Zca => (BATCH_SIZE as f64 / HIDDEN_DIM as f64).sqrt(),
            _ => 1.0 / (HIDDEN_DIM as f64).sqrt(),
        };
        Self {
            w1: gaussian_matrix(&mut rng, HIDDEN_DIM, INPUT_DIM).scale(scale1),
            b1: vec![0.0; HIDDEN_DIM],
            w2: gaussian_matrix(&mut rng, CLASSES, HIDDEN_DIM).scale(scale2),
            b2: vec![0.0; CLASSES],
        }
    }
}

/// Mean cross-entropy of column logits against labels, with the softmax
/// cotangent for the backward pass.
fn cross_entropy(logits: &Mat64, labels: &[usize]) -> (f64, Mat64) {
    let classes = logits.rows();
    let b = logits.cols();
    let inv_b = 1.0 / b as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(classes, b);
    for j in 0..b {
        let col: Vec<f64> = (0..classes).map(|i| logits.get(i, j)).collect();
        let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = max + col.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
        loss += (log_sum - col[labels[j]]) * inv_b;
        for i in 0..classes {
            let p = (col[i] - log_sum).exp();
            let target = if i == labels[j] { 1.0 } else { 0.0 };
            grad.set(i, j, (p - target) * inv_b);
        }
    }
    (loss, grad)
}

fn add_bias(z: &mut Mat64, b: &[f64]) {
    for i in 0..z.rows() {
        for v in z.row_mut(i) {
            *v += b[i];
        }
    }
}

fn row_sums(m: &Mat64) -> Vec<f64> {
    (0..m.rows()).map(|i| m.row(i).iter().sum()).collect()
}

struct TrialOutcome {
    final_loss: f64,
    diverged: bool,
    accuracy: f64,
}

fn run_trial(config: &TrainConfig, trial: usize) -> TrialOutcome {
    let trial_seed = config
        .seed
        .wrapping_mul(1_000_003)
        .wrapping_add(trial as u64 * 7907);
    let train = make_dataset(config.data, TRAIN_POINTS, trial_seed, trial_seed ^ 0x1EA1);
    let eval = make_dataset(config.data, EVAL_POINTS, trial_seed, trial_seed ^ 0x5EED);
    let mut model = Mlp::new(trial_seed ^ 0xF00D, config.layer);
    let mut layer = match NormLayer::build(config, trial_seed ^ 0x9A9A) {
        Ok(l) => l,
        Err(_) => {
            return TrialOutcome { final_loss: f64::NAN, diverged: true, accuracy: 0.0 }
        }
    };
    let k = config.iterations;
    let lr = config.lr;
    let steps_per_epoch = TRAIN_POINTS / BATCH_SIZE;
    let mut final_loss = f64::NAN;

    for epoch in 0..config.epochs {
        for step in 0..steps_per_epoch {
            let start = step * BATCH_SIZE;
            let x = columns(&train.features, start, BATCH_SIZE);
            let labels = &train.labels[start..start + BATCH_SIZE];
            let _ = epoch;

            // Forward.
            let mut z1 = model.w1.matmul(&x);
            add_bias(&mut z1, &model.b1);
            let (normed, tape) = match layer.forward(&z1, true, k) {
                Ok(v) => v,
                Err(_) => return TrialOutcome { final_loss, diverged: true, accuracy: 0.0 },
            };
            let h = Matrix::from_fn(normed.rows(), normed.cols(), |i, j| {
                normed.get(i, j).max(0.0)
            });
            let mut z2 = model.w2.matmul(&h);
            add_bias(&mut z2, &model.b2);
            let (loss, gz2) = cross_entropy(&z2, labels);
            final_loss = loss;
            if !loss.is_finite() || loss > DIVERGENCE_THRESHOLD {
                return TrialOutcome { final_loss, diverged: true, accuracy: 0.0 };
            }

            // Backward.
            let gw2 = gz2.matmul(&h.transpose());
            let gb2 = row_sums(&gz2);
            let gh = model.w2.transpose().matmul(&gz2);
            let gn = Matrix::from_fn(gh.rows(), gh.cols(), |i, j| {
                if normed.get(i, j) > 0.0 {
                    gh.get(i, j)
                } else {
                    0.0
                }
            });
            let (gz1, ggamma, gbeta) = match layer.backward(&tape, &gn, k) {
                Ok(v) => v,
                Err(_) => return TrialOutcome { final_loss, diverged: true, accuracy: 0.0 },
            };
            let gw1 = gz1.matmul(&x.transpose());
            let gb1 = row_sums(&gz1);

            // Plain SGD.
            model.w1.add_scaled_assign(&gw1, -lr);
            model.w2.add_scaled_assign(&gw2, -lr);
            for (p, g) in model.b1.iter_mut().zip(&gb1) {
                *p -= lr * g;
            }
            for (p, g) in model.b2.iter_mut().zip(&gb2) {
                *p -= lr * g;
            }
            layer.sgd(&ggamma, &gbeta, lr);

            if !model.w1.is_finite() || !model.w2.is_finite() {
                return TrialOutcome { final_loss: f64::NAN, diverged: true, accuracy: 0.0 };
            }
        }
    }

    // Held-out accuracy with the layer in eval mode.
    let mut correct = 0usize;
    let mut evaluated = 0usize;
    let eval_batches = EVAL_POINTS / BATCH_SIZE;
    for step in 0..eval_batches {
        let start = step * BATCH_SIZE;
        let x = columns(&eval.features, start, BATCH_SIZE);
        let labels = &eval.labels[start..start + BATCH_SIZE];
        let mut z1 = model.w1.matmul(&x);
        add_bias(&mut z1, &model.b1);
        let (normed, _) = match layer.forward(&z1, false, k) {
            Ok(v) => v,
            Err(_) => return TrialOutcome { final_loss, diverged: true, accuracy: 0.0 },
        };
        let h = Matrix::from_fn(normed.rows(), normed.cols(), |i, j| normed.get(i, j).max(0.0));
        let mut z2 = model.w2.matmul(&h);
        add_bias(&mut z2, &model.b2);
        for (j, &label) in labels.iter().enumerate() {
            let mut best = 0;
            for i in 1..CLASSES {
                if z2.get(i, j) > z2.get(best, j) {
                    best = i;
                }
            }
            if best == label {
                correct += 1;
            }
            evaluated += 1;
        }
    }
    TrialOutcome {
        final_loss,
        diverged: false,
        accuracy: correct as f64 / evaluated as f64,
    }
}

fn columns(m: &Mat64, start: usize, count: usize) -> Mat64 {
    Matrix::from_fn(m.rows(), count, |i, j| m.get(i, start + j))
}

pub fn run_train_bench(config: &TrainConfig) -> Result<Vec<TrainRecord>> {
    config.validate()?;
    let mut records = Vec::with_capacity(config.trials);
    for trial in 0..config.trials {
        let outcome = run_trial(config, trial);
        records.push(TrainRecord {
            trial_id: trial,
            layer: config.layer,
            method: config.method,
            group_size: config.group_size,
            epochs: config.epochs,
            final_loss: outcome.final_loss,
            diverged: outcome.diverged,
            accuracy: outcome.accuracy,
        });
    }
    records.sort_by_key(|r| r.trial_id);
    Ok(records)
}
