use approx::assert_relative_eq;
use eitproj_core::projection::{build_projection, frobenius_discrepancy, principal_angles, signal_bundle};
use eitproj_core::sensitivity::{JacobianBlock, JacobianKind};
use eitproj_core::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn block(kind: JacobianKind, matrix: DMatrix<f64>) -> JacobianBlock {
    JacobianBlock { kind, linearization: "test".into(), electrodes: matrix.nrows(), patterns: 1, matrix }
}

fn matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    // deterministic well-spread entries
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    DMatrix::from_fn(rows, cols, |_, _| {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projector_algebra(rows in 4usize..40, frac in 0.05f64..0.9, seed in any::<u64>(), scale in -6i32..6) {
        let cols = ((rows as f64 * frac) as usize).clamp(1, rows - 1);
        let mut j = matrix(rows, cols, seed);
        // wildly different column scales must not matter
        for (c, mut col) in j.column_iter_mut().enumerate() {
            col *= 10f64.powi(scale * (c as i32 % 3));
        }
        let b = block(JacobianKind::Zeta, j.clone());
        let p = build_projection(&[&b]).unwrap();
        let pm = p.matrix();
        let n = pm.norm();
        prop_assert!((pm * pm - pm).norm() <= 1e-10 * n);
        prop_assert!((pm - pm.transpose()).norm() <= 1e-10 * n);
        prop_assert!((pm * &j).norm() <= 1e-10 * j.norm());
        prop_assert!((pm.trace() - (rows - cols) as f64).abs() < 1e-9);
        prop_assert_eq!(p.rank(), rows - cols);
        prop_assert_eq!(p.deficiency(), cols);
        let v = DVector::from_fn(rows, |i, _| (i as f64).sin());
        prop_assert!((p.apply(&v) - pm * &v).norm() <= 1e-12 * v.norm());
    }

    #[test]
    fn angles_of_rotated_lines(theta in 0.0f64..1.5, n in 3usize..12) {
        // lines span{e0} and span{cos θ e0 + sin θ e1}; their complements meet at the same angle
        let mut a = DMatrix::zeros(n, 1);
        a[(0, 0)] = 1.0;
        let mut b = DMatrix::zeros(n, 1);
        b[(0, 0)] = theta.cos();
        b[(1, 0)] = theta.sin();
        let pa = build_projection(&[&block(JacobianKind::Zeta, a)]).unwrap();
        let pb = build_projection(&[&block(JacobianKind::Zeta, b)]).unwrap();
        let angles = principal_angles(&pa, &pb).unwrap();
        prop_assert_eq!(angles.degrees.len(), n - 1);
        prop_assert!((angles.max() - theta.to_degrees()).abs() < 1e-9);
        prop_assert!(!angles.dims_differ());
        let same = principal_angles(&pa, &pa).unwrap();
        prop_assert!(same.max() < 1e-6);
    }
}

#[test]
fn angles_between_ranges_of_different_dimension() {
    // range(P_a) = span{e2, e3}, range(P_b) = span{e3}: every angle of the smaller range is zero
    let mut a = DMatrix::zeros(4, 2);
    a[(0, 0)] = 1.0;
    a[(1, 1)] = 1.0;
    let mut b = DMatrix::zeros(4, 3);
    b[(0, 0)] = 1.0;
    b[(1, 1)] = 1.0;
    b[(2, 2)] = 1.0;
    let pa = build_projection(&[&block(JacobianKind::Zeta, a)]).unwrap();
    let pb = build_projection(&[&block(JacobianKind::Zeta, b)]).unwrap();
    let angles = principal_angles(&pa, &pb).unwrap();
    assert!(angles.dims_differ());
    assert_eq!(angles.degrees.len(), 1);
    assert!(angles.max() < 1e-6);
}

#[test]
fn degenerate_blocks_are_rejected() {
    let j = matrix(10, 3, 1);
    let mut dup = j.clone();
    dup.set_column(2, &j.column(0));
    assert!(matches!(build_projection(&[&block(JacobianKind::Zeta, dup)]), Err(Error::Numeric(_))));
    let mut zero = j.clone();
    zero.column_mut(1).fill(0.0);
    assert!(matches!(build_projection(&[&block(JacobianKind::Zeta, zero)]), Err(Error::Numeric(_))));
    assert!(build_projection(&[&block(JacobianKind::Zeta, matrix(4, 4, 2))]).is_err());
    let short = block(JacobianKind::Phi, matrix(9, 1, 3));
    assert!(matches!(build_projection(&[&block(JacobianKind::Zeta, j), &short]), Err(Error::Contract(_))));
}

#[test]
fn combined_projector_records_sources() {
    let z = block(JacobianKind::Zeta, matrix(20, 4, 4));
    let p = block(JacobianKind::Phi, matrix(20, 4, 5));
    let op = build_projection(&[&z, &p]).unwrap();
    assert_eq!(op.sources(), &[JacobianKind::Zeta, JacobianKind::Phi]);
    assert_eq!(op.rank(), 12);
    assert_eq!(op.linearization(), "test");
    assert!(op.condition() >= 1.0);
}

#[test]
fn signal_bundle_and_discrepancy() {
    let j = block(JacobianKind::Zeta, matrix(12, 3, 6));
    let p = build_projection(&[&j]).unwrap();
    let u0 = DVector::from_fn(12, |i, _| i as f64);
    let dz = &j.matrix * DVector::from_vec(vec![1.0, -2.0, 0.5]);
    let ds = DVector::from_fn(12, |i, _| ((i * 7) % 5) as f64 - 2.0);
    let b = signal_bundle(&u0, &(&u0 + &ds), &(&u0 + &dz), &(&u0 + &ds + &dz), &[("zeta", &p)]).unwrap();
    let rows = b.norms();
    assert_eq!(rows[0].label, "none");
    assert_relative_eq!(rows[0].sigma, ds.norm(), max_relative = 1e-14);
    assert!(rows[1].zeta < 1e-12 * dz.norm());
    assert_relative_eq!(rows[1].combined, rows[1].sigma, max_relative = 1e-10);

    let a = matrix(5, 5, 7);
    assert_relative_eq!(frobenius_discrepancy(&(&a * 1.1), &a).unwrap(), 0.1, max_relative = 1e-12);
    assert!(frobenius_discrepancy(&a, &DMatrix::zeros(5, 5)).is_err());
}
