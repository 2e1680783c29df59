//! Property tests for the linear-algebra core and the geometric-series
//! identity behind the truncated gradients.

use eigengrad::eigen::orthonormality_defect;
use eigengrad::grad::geometric_coefficient;
use eigengrad::io::{read_matrix, write_matrix};
use eigengrad::spectrum::{generate_matrix, SpectrumProfile, SpectrumSpec};
use eigengrad::symmetric::regularize;
use eigengrad::{sym_eigen, SymMat64};
use proptest::prelude::*;

fn recovery_defects(m: &SymMat64) -> (f64, f64) {
    let eig = sym_eigen(m).unwrap();
    let recon = eig.reconstruct();
    let recon_err = recon.sub(m.as_matrix()).frobenius_norm();
    (recon_err, orthonormality_defect(&eig))
}

#[test]
fn reconstruction_and_orthonormality_up_to_dim_128() {
    for (dim, seed) in [(2usize, 1u64), (5, 2), (16, 3), (64, 4), (128, 5)] {
        let spec = SpectrumSpec::new(dim, SpectrumProfile::Geometric { ratio: 0.9 }, seed);
        let m = generate_matrix::<f64>(&spec).unwrap();
        let (recon_err, ortho) = recovery_defects(&m);
        let scale = m.frobenius_norm().max(1.0);
        assert!(recon_err <= 1e-8 * scale, "dim {dim}: reconstruction {recon_err}");
        assert!(ortho <= 1e-9, "dim {dim}: orthonormality {ortho}");
    }
}

#[test]
fn psd_preservation_after_regularization() {
    for seed in 0..8u64 {
        let spec = SpectrumSpec::new(6, SpectrumProfile::Geometric { ratio: 0.4 }, seed);
        let m = generate_matrix::<f64>(&spec).unwrap();
        let eps = 1e-4;
        let eig = sym_eigen(&regularize(&m, eps)).unwrap();
        for &l in eig.values() {
            assert!(l >= eps - 1e-10, "eigenvalue {l} below {eps}");
        }
    }
}

#[test]
fn regularize_shifts_the_smallest_eigenvalue() {
    let spec = SpectrumSpec::new(5, SpectrumProfile::Geometric { ratio: 0.3 }, 77);
    let m = generate_matrix::<f64>(&spec).unwrap();
    let eps = 1e-4;
    let before = sym_eigen(&m).unwrap();
    let after = sym_eigen(&regularize(&m, eps)).unwrap();
    let min_before = before.values().last().copied().unwrap();
    let min_after = after.values().last().copied().unwrap();
    assert!(min_after >= min_before + eps - 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn eigenvalues_sorted_and_vectors_sign_fixed(
        dim in 2usize..10,
        ratio in 0.2f64..0.95,
        seed in 0u64..1_000,
    ) {
        let spec = SpectrumSpec::new(dim, SpectrumProfile::Geometric { ratio }, seed);
        let m = generate_matrix::<f64>(&spec).unwrap();
        let eig = sym_eigen(&m).unwrap();
        for w in eig.values().windows(2) {
            prop_assert!(w[0] >= w[1]);
        }
        for i in 0..dim {
            let v = eig.vector(i);
            let mut best = 0;
            for (j, &x) in v.iter().enumerate() {
                if x.abs() > v[best].abs() {
                    best = j;
                }
            }
            prop_assert!(v[best] >= 0.0, "column {i} sign convention broken");
        }
    }

    #[test]
    fn geometric_sum_identity(
        l1 in 1e-3f64..1e3,
        q in 0.0f64..1.0,
        k in 1usize..50,
    ) {
        // The truncated coefficient times the eigengap misses 1 by exactly
        // the decay factor q^K.
        let li = q * l1;
        let coeff = geometric_coefficient(l1, li, k).unwrap();
        let defect = (coeff * (l1 - li) - 1.0).abs();
        prop_assert!((defect - q.powi(k as i32)).abs() <= 1e-12);
    }

    #[test]
    fn equal_eigenvalue_coefficient_is_k_over_lambda(
        l1 in 1e-3f64..1e3,
        k in 1usize..50,
    ) {
        let coeff = geometric_coefficient(l1, l1, k).unwrap();
        prop_assert!((coeff - k as f64 / l1).abs() <= 1e-12 * (k as f64 / l1));
    }

    #[test]
    fn matrix_text_round_trip(
        dim in 1usize..6,
        seed in 0u64..500,
    ) {
        let spec = SpectrumSpec::new(dim, SpectrumProfile::Geometric { ratio: 0.7 }, seed);
        let m = generate_matrix::<f64>(&spec).unwrap();
        let mut buf = Vec::new();
        write_matrix(&mut buf, &m).unwrap();
        let back: SymMat64 = read_matrix(&mut std::io::BufReader::new(buf.as_slice())).unwrap();
        prop_assert_eq!(back.as_matrix().data(), m.as_matrix().data());
    }
}
