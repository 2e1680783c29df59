//! Spectrum stress benchmark: per trial, build a matrix with a prescribed
//! spectrum, define a fixed eigenvector loss, compute its gradient with each
//! method, and measure explosion and agreement with central finite
//! differences of the exact loss.

use std::time::Instant;

use anyhow::{bail, Result};
use eigengrad::gradcheck::{align_sign, compare, detect_explosion, EXPLOSION_THRESHOLD};
use eigengrad::grad::{full_backward, DeflationTape};
use eigengrad::io::fmt_g;
use eigengrad::matrix::dot;
use eigengrad::spectrum::{generate_matrix, random_unit_vector, SpectrumProfile, SpectrumSpec};
use eigengrad::{regularize, sym_eigen, Mat64};

use crate::baselines::{pi_chain_backward, pi_deflation};
use crate::records::{Method, TrialRecord};

/// How many leading eigenvectors the benchmark loss touches.
const LOSS_DEPTH: usize = 4;

#[derive(Debug, Clone)]
pub struct SpectrumConfig {
    pub dim: usize,
    pub ratios: Vec<f64>,
    pub gap: Option<f64>,
    pub methods: Vec<Method>,
    pub trials: usize,
    pub iterations: usize,
    pub epsilon: f64,
    pub seed: u64,
}

impl SpectrumConfig {
    fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            bail!("--dim must be at least 2, got {}", self.dim);
        }
        if self.trials == 0 {
            bail!("--trials must be positive");
        }
        if self.iterations == 0 {
            bail!("--iters must be positive");
        }
        if !(self.epsilon > 0.0) {
            bail!("--epsilon must be positive, got {}", self.epsilon);
        }
        for &r in &self.ratios {
            if !(r > 0.0 && r <= 1.0) {
                bail!("--ratio values must lie in (0, 1], got {r}");
            }
        }
        if let Some(g) = self.gap {
            if !(g >= 0.0 && g < 1.0) {
                bail!("--gap must lie in [0, 1), got {g}");
            }
        }
        if self.ratios.is_empty() && self.gap.is_none() {
            bail!("provide at least one --ratio or a --gap");
        }
        Ok(())
    }

    /// The spectra this configuration sweeps, with their CSV descriptors.
    fn spectra(&self) -> Vec<(String, SpectrumProfile)> {
        let mut out: Vec<(String, SpectrumProfile)> = self
            .ratios
            .iter()
            .map(|&r| (format!("ratio={}", fmt_g(r, 10)), SpectrumProfile::Geometric { ratio: r }))
            .collect();
        if let Some(g) = self.gap {
            out.push((
                format!("gap={}", fmt_g(g, 10)),
                SpectrumProfile::Clustered { count: 2, gap: g },
            ));
        }
        out
    }
}

pub fn run_spectrum_bench(config: &SpectrumConfig) -> Result<Vec<TrialRecord>> {
    config.validate()?;
    let n = config.dim;
    let k = config.iterations;
    let depth = LOSS_DEPTH.min(n);
    let mut records = Vec::new();
    let mut trial_id = 0;

    for (spec_idx, (descriptor, profile)) in config.spectra().into_iter().enumerate() {
        for trial in 0..config.trials {
            let matrix_seed = config
                .seed
                .wrapping_mul(1_000_003)
                .wrapping_add(spec_idx as u64 * 7919)
                .wrapping_add(trial as u64);
            let spec = SpectrumSpec::new(n, profile.clone(), matrix_seed);
            let m = regularize(&generate_matrix::<f64>(&spec)?, config.epsilon);
            let eig = sym_eigen(&m)?;
            let cotangents: Vec<Vec<f64>> = (0..depth)
                .map(|i| random_unit_vector::<f64>(n, matrix_seed ^ (0xC0 + i as u64)))
                .collect();
            let base_vectors: Vec<Vec<f64>> = (0..depth).map(|i| eig.vector(i)).collect();

            // Reference: central differences of the exact, sign-aligned loss.
            let fd = eigengrad::finite_diff_gradient(
                |pm| {
                    let eig = match sym_eigen(pm) {
                        Ok(e) => e,
                        Err(_) => return f64::NAN,
                    };
                    let mut loss = 0.0;
                    for (i, c) in cotangents.iter().enumerate() {
                        let mut v = eig.vector(i);
                        align_sign(&mut v, &base_vectors[i]);
                        loss += dot(c, &v);
                    }
                    loss
                },
                &m,
                1e-6,
            )
            .ok();

            for &method in &config.methods {
                let start = Instant::now();
                let grad: Mat64 = match method {
                    Method::Svd => {
                        eigengrad::ed_gradient_analytical_multi(&eig, &cotangents).grad
                    }
                    Method::Hybrid => {
                        let tape =
                            DeflationTape::from_decomposition(&m, &eig, depth, config.epsilon)?;
                        full_backward(&tape, &cotangents, k)?.grad
                    }
                    Method::Pi => {
                        let steps =
                            pi_deflation(&m, depth, k, config.epsilon, matrix_seed ^ 0xABCD)?;
                        // The iterates converge to either sign of the true
                        // eigenvector; flip cotangents so the estimated loss
                        // tracks the sign-fixed reference loss.
                        let aligned: Vec<Vec<f64>> = steps
                            .iter()
                            .zip(&cotangents)
                            .zip(&base_vectors)
                            .map(|((step, c), base)| {
                                if dot(step.estimate(), base) < 0.0 {
                                    c.iter().map(|&x| -x).collect()
                                } else {
                                    c.clone()
                                }
                            })
                            .collect();
                        let depth_reached = steps.len();
                        pi_chain_backward(&steps, &aligned[..depth_reached], None)
                    }
                };
                let wall_time_ms = start.elapsed().as_secs_f64() * 1e3;

                let sym = grad.symmetrized();
                let exploded = detect_explosion(&grad, EXPLOSION_THRESHOLD);
                let fd_relative_error = if exploded {
                    f64::INFINITY
                } else {
                    match &fd {
                        Some(reference) => compare(&sym, reference)?.relative_error,
                        None => f64::INFINITY,
                    }
                };
                records.push(TrialRecord {
                    trial_id,
                    method,
                    spectrum: descriptor.clone(),
                    dim: n,
                    k,
                    grad_norm: sym.frobenius_norm(),
                    fd_relative_error,
                    exploded,
                    wall_time_ms,
                });
                trial_id += 1;
            }
        }
    }
    records.sort_by_key(|r| r.trial_id);
    Ok(records)
}


#[cfg(test)]
impl TrialRecord {
    fn to_csv_without_wall_time(&self) -> String {
        let row = self.to_csv();
        row.rsplit_once(',').map(|(head, _)| head.to_string()).unwrap()
    }
}
