//! Randomized structural properties of the spline and precision plumbing.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use sop_core::{assemble_precision, diff_matrix, eval_basis, make_knots, RandomBlock};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn basis_rows_sum_to_one(
        nseg in 3usize..25,
        degree in 0usize..4,
        points in prop::collection::vec(0.0f64..1.0, 1..40),
    ) {
        let kv = make_knots(0.0, 1.0, nseg, degree).unwrap();
        let basis = eval_basis(&points, &kv).unwrap();
        for i in 0..points.len() {
            let s: f64 = basis.values().row(i).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-10, "row {i} sums to {s}");
        }
    }

    #[test]
    fn higher_differences_compose_from_first_differences(
        d in 4usize..20,
        q in 1usize..4,
    ) {
        prop_assume!(q < d);
        let dq = diff_matrix(q, d).unwrap();
        let mut composed = DMatrix::<f64>::identity(d, d);
        let mut size = d;
        for _ in 0..q {
            let d1 = diff_matrix(1, size).unwrap().values().clone();
            composed = d1 * composed;
            size -= 1;
        }
        let diff = (dq.values() - &composed).abs().max();
        prop_assert!(diff < 1e-12, "difference factorization off by {diff}");
    }

    #[test]
    fn low_degree_polynomials_are_annihilated(
        d in 5usize..20,
        q in 1usize..4,
        coeffs in prop::collection::vec(-2.0f64..2.0, 3),
    ) {
        prop_assume!(q < d);
        let dq = diff_matrix(q, d).unwrap();
        // polynomial sequence of degree q - 1 in the index
        let seq = DVector::from_fn(d, |i, _| {
            (0..q).map(|e| coeffs[e % 3] * (i as f64).powi(e as i32)).sum::<f64>()
        });
        let image = dq.values() * seq;
        let max = image.abs().max();
        prop_assert!(max < 1e-8, "degree {} sequence leaves residual {max}", q - 1);
    }

    #[test]
    fn assembled_precision_inverts_its_covariance(
        q in 2usize..10,
        scales in prop::collection::vec(0.05f64..20.0, 2),
        diag_seed in prop::collection::vec(0.01f64..1.0, 20),
    ) {
        let atoms: Vec<DMatrix<f64>> = (0..2)
            .map(|l| {
                DMatrix::from_fn(q, q, |i, j| {
                    if i == j { diag_seed[(l * q + i) % diag_seed.len()] } else { 0.0 }
                })
            })
            .collect();
        let block = RandomBlock::new(
            DMatrix::identity(q.max(2), q),
            atoms,
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let bp = assemble_precision(&block, 0, &scales).unwrap();
        let identity_residual = (&bp.g * &bp.g_inv - DMatrix::identity(q, q)).abs().max();
        prop_assert!(identity_residual < 1e-8, "G G^-1 off identity by {identity_residual}");
    }
}
