//! Seeded generation of symmetric test matrices with prescribed spectra.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::LinalgError;
use crate::matrix::{axpy, dot, norm2, Matrix};
use crate::scalar::{cst, Scalar};
use crate::symmetric::SymmetricMatrix;

/// Eigenvalue profile of a generated matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum SpectrumProfile {
    /// Explicit eigenvalues, one per dimension, all non-negative.
    Explicit(Vec<f64>),
    /// `1, r, r^2, ...` with `r` in `(0, 1]`.
    Geometric { ratio: f64 },
    /// Top `count` eigenvalues spaced by exactly `gap` starting at 1, the
    /// rest decaying by halves below the cluster floor.
    Clustered { count: usize, gap: f64 },
}

/// Description of a synthetic symmetric PSD matrix: its spectrum and the seed
/// of the random orthogonal basis it is rotated with.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSpec {
    pub dim: usize,
    pub profile: SpectrumProfile,
    pub seed: u64,
}

impl SpectrumSpec {
    pub fn new(dim: usize, profile: SpectrumProfile, seed: u64) -> Self {
        Self { dim, profile, seed }
    }

    /// The exact eigenvalues this spec describes, sorted descending.
    pub fn eigenvalues(&self) -> Result<Vec<f64>, LinalgError> {
        let n = self.dim;
        if n == 0 {
            return Err(LinalgError::InvalidSpectrum("dimension must be positive".into()));
        }
        let values = match &self.profile {
            SpectrumProfile::Explicit(v) => {
                if v.len() != n {
                    return Err(LinalgError::InvalidSpectrum(format!(
                        "expected {} eigenvalues, got {}",
                        n,
                        v.len()
                    )));
                }
                if v.iter().any(|&l| l < 0.0 || !l.is_finite()) {
                    return Err(LinalgError::InvalidSpectrum(
                        "eigenvalues must be finite and non-negative".into(),
                    ));
                }
                let mut sorted = v.clone();
                sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
                sorted
            }
            SpectrumProfile::Geometric { ratio } => {
                if !(*ratio > 0.0 && *ratio <= 1.0) {
                    return Err(LinalgError::InvalidSpectrum(format!(
                        "geometric ratio must be in (0, 1], got {ratio}"
                    )));
                }
                (0..n).map(|i| ratio.powi(i as i32)).collect()
            }
            SpectrumProfile::Clustered { count, gap } => {
                if *count == 0 || *count > n {
                    return Err(LinalgError::InvalidSpectrum(format!(
                        "cluster size must be in 1..={n}, got {count}"
                    )));
                }
                if *gap < 0.0 || (*count as f64 - 1.0) * gap >= 1.0 {
                    return Err(LinalgError::InvalidSpectrum(format!(
                        "cluster gap {gap} out of range for cluster size {count}"
                    )));
                }
                let mut values = Vec::with_capacity(n);
                for i in 0..*count {
                    values.push(1.0 - i as f64 * gap);
                }
                let floor = values[*count - 1];
                for j in 0..(n - count) {
                    values.push(floor * 0.5f64.powi(j as i32 + 1));
                }
                values
            }
        };
        Ok(values)
    }
}

/// Builds `Q diag(spec eigenvalues) Q^T` with `Q` a seeded random orthogonal
/// matrix. Reproducible: identical specs yield bitwise-identical matrices.
pub fn generate_matrix<F: Scalar>(spec: &SpectrumSpec) -> Result<SymmetricMatrix<F>, LinalgError> {
    let values = spec.eigenvalues()?;
    let q = random_orthogonal::<F>(spec.dim, spec.seed);
    let n = spec.dim;
    let mut out = Matrix::zeros(n, n);
    for k in 0..n {
        let col = q.column(k);
        let lk = cst::<F>(values[k]);
        for i in 0..n {
            let s = lk * col[i];
            let row = out.row_mut(i);
            for (j, &cj) in col.iter().enumerate() {
                row[j] += s * cj;
            }
        }
    }
    SymmetricMatrix::new(out)
}

/// Seeded random orthogonal matrix via modified Gram-Schmidt on a Gaussian
/// matrix. Samples are drawn as f64 and only then converted, so f32 and f64
/// instantiations see the same underlying stream.
pub fn random_orthogonal<F: Scalar>(n: usize, seed: u64) -> Matrix<F> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut q = Matrix::zeros(n, n);
    for j in 0..n {
        loop {
            let mut col: Vec<F> = (0..n)
                .map(|_| cst::<F>(<StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)))
                .collect();
            for k in 0..j {
                let prev = q.column(k);
                let proj = dot(&col, &prev);
                axpy(&mut col, -proj, &prev);
            }
            let norm = norm2(&col);
            if norm > cst::<F>(1e-8) {
                for x in col.iter_mut() {
                    *x = *x / norm;
                }
                q.set_column(j, &col);
                break;
            }
            // Degenerate draw; take the next sample from the stream.
        }
    }
    q
}

/// Seeded random unit vector.
pub fn random_unit_vector<F: Scalar>(n: usize, seed: u64) -> Vec<F> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    loop {
        let v: Vec<F> = (0..n)
            .map(|_| cst::<F>(<StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)))
            .collect();
        if let Some(u) = crate::matrix::normalized(&v) {
            return u;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigen::sym_eigen;

    #[test]
    fn isotropic_explicit_spectrum_is_identity() {
        let spec = SpectrumSpec::new(2, SpectrumProfile::Explicit(vec![1.0, 1.0]), 7);
        let m = generate_matrix::<f64>(&spec).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((m.get(i, j) - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn geometric_spectrum_recovered_by_eigensolver() {
        let spec = SpectrumSpec::new(4, SpectrumProfile::Geometric { ratio: 0.5 }, 11);
        let m = generate_matrix::<f64>(&spec).unwrap();
        let eig = sym_eigen(&m).unwrap();
        for (got, want) in eig.values().iter().zip([1.0, 0.5, 0.25, 0.125]) {
            assert!((got - want).abs() < 1e-10, "got {got}, want {want}");
        }
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let spec = SpectrumSpec::new(6, SpectrumProfile::Geometric { ratio: 0.8 }, 42);
        let a = generate_matrix::<f64>(&spec).unwrap();
        let b = generate_matrix::<f64>(&spec).unwrap();
        assert_eq!(a.as_matrix().data(), b.as_matrix().data());
    }

    #[test]
    fn orthogonal_factor_is_orthogonal() {
        let q = random_orthogonal::<f64>(8, 3);
        let qt = q.transpose();
        let prod = qt.matmul(&q);
        let defect = prod.sub(&Matrix::identity(8)).frobenius_norm();
        assert!(defect < 1e-12, "defect {defect}");
    }

    #[test]
    fn clustered_profile_validates_inputs() {
        let bad = SpectrumSpec::new(3, SpectrumProfile::Clustered { count: 5, gap: 0.0 }, 0);
        assert!(bad.eigenvalues().is_err());
        let good = SpectrumSpec::new(4, SpectrumProfile::Clustered { count: 2, gap: 1e-8 }, 0);
        let values = good.eigenvalues().unwrap();
        assert_eq!(values[0], 1.0);
        assert_eq!(values[1], 1.0 - 1e-8);
        assert!(values[2] < values[1]);
    }
}
