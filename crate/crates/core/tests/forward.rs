use std::sync::OnceLock;

use approx::assert_relative_eq;
use eitproj_core::forward::{
    assemble, make_patterns, mean_free_basis, simulate, ConductivityField, ContactState, CurrentPatternSet,
    PatternKind,
};
use eitproj_core::mesh::{generate_cylinder_tank, ElectrodeLayout, Mesh, TankSpec};
use eitproj_core::sensitivity::Sensitivity;
use eitproj_core::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn small_tank() -> &'static (Mesh, ElectrodeLayout) {
    static TANK: OnceLock<(Mesh, ElectrodeLayout)> = OnceLock::new();
    TANK.get_or_init(|| generate_cylinder_tank(&TankSpec::single_ring(0.03, 0.015, 8, 0.006, 0)).unwrap())
}

fn reference() -> (ConductivityField, ContactState) {
    let (mesh, _) = small_tank();
    (ConductivityField::constant(mesh.n_nodes(), 0.0491).unwrap(), ContactState::uniform(8, 500.0, 0.006).unwrap())
}

#[test]
fn contact_profile_matches_closed_form() {
    let c = ContactState::uniform(8, 500.0, 0.006).unwrap();
    let (big_r, tau) = (0.006f64, 0.4f64);
    for k in 0..=60 {
        let r = big_r * k as f64 / 60.0;
        let expected = if r < big_r { (tau - tau * big_r * big_r / (big_r * big_r - r * r)).exp() } else { 0.0 };
        assert_relative_eq!(c.shape(r), expected, max_relative = 1e-14);
    }
    assert_eq!(c.shape(0.0), 1.0);
    assert_eq!(c.shape(big_r), 0.0);
    assert_eq!(c.shape(2.0 * big_r), 0.0);
    // derivative against a central difference
    for r in [0.001, 0.003, 0.005] {
        let h = 1e-8;
        let fd = (c.shape(r + h) - c.shape(r - h)) / (2.0 * h);
        assert_relative_eq!(c.shape_derivative(r), fd, max_relative = 1e-6);
    }
}

#[test]
fn pattern_sets_have_expected_shape() {
    let adj = make_patterns(PatternKind::Adjacent, 16).unwrap();
    assert_eq!(adj.len(), 8);
    let c = adj.currents();
    assert_eq!(c[(0, 0)], 1e-3);
    assert_eq!(c[(2, 0)], -1e-3);
    assert_eq!(c[(14, 7)], 1e-3);
    assert_eq!(c[(0, 7)], -1e-3);
    assert!(!adj.spans_mean_free());

    let fourier = make_patterns(PatternKind::Fourier, 16).unwrap();
    assert_eq!(fourier.len(), 15);
    assert!(fourier.spans_mean_free());

    let opp = make_patterns(PatternKind::Opposite, 16).unwrap();
    assert_eq!(opp.len(), 4);
    assert_eq!(opp.currents()[(2, 1)], 1e-3);
    assert_eq!(opp.currents()[(10, 1)], -1e-3);
    assert!(make_patterns(PatternKind::Opposite, 10).is_err());

    for set in [adj, fourier] {
        for col in set.currents().column_iter() {
            assert!(col.sum().abs() < 1e-15);
        }
    }
}

#[test]
fn mean_free_basis_is_orthonormal() {
    for m in [2, 5, 16, 32] {
        let q = mean_free_basis(m);
        assert_eq!(q.shape(), (m, m - 1));
        let qtq = q.transpose() * &q;
        assert_relative_eq!((qtq - DMatrix::identity(m - 1, m - 1)).amax(), 0.0, epsilon = 1e-14);
        assert!(q.row_sum().amax() < 1e-14);
    }
}

#[test]
fn mismatched_inputs_are_contract_errors() {
    let (mesh, layout) = small_tank();
    let (sigma, contact) = reference();
    let short = ConductivityField::constant(mesh.n_nodes() - 1, 0.0491).unwrap();
    assert!(matches!(assemble(mesh, layout, &short, &contact), Err(Error::Contract(_))));
    let wrong_radius = ContactState::uniform(8, 500.0, 0.004).unwrap();
    assert!(matches!(assemble(mesh, layout, &sigma, &wrong_radius), Err(Error::Contract(_))));
    let sys = assemble(mesh, layout, &sigma, &contact).unwrap();
    assert!(matches!(sys.solve(&make_patterns(PatternKind::Fourier, 16).unwrap()), Err(Error::Contract(_))));
    assert!(ConductivityField::constant(4, -1.0).is_err());
}

#[test]
fn nonpositive_contact_is_rejected() {
    let (_, contact) = reference();
    let mut peaks = contact.peaks().to_vec();
    peaks[3] = 0.0;
    assert!(matches!(contact.with_peaks(peaks), Err(Error::Validation(_))));
}

#[test]
fn patterns_map_linearly() {
    let (mesh, layout) = small_tank();
    let (sigma, contact) = reference();
    let sys = assemble(mesh, layout, &sigma, &contact).unwrap();
    let canonical = sys.solve(&CurrentPatternSet::canonical(8).unwrap()).unwrap();
    let fourier = make_patterns(PatternKind::Fourier, 8).unwrap();
    let direct = sys.solve(&fourier).unwrap();
    // U(I) = R I with R from any spanning set: express Fourier currents in the canonical basis.
    let basis = CurrentPatternSet::canonical(8).unwrap();
    let coeffs = basis.currents().clone().pseudo_inverse(1e-12).unwrap() * fourier.currents();
    let composed = &canonical.electrode_potentials * coeffs;
    assert_relative_eq!((composed - &direct.electrode_potentials).amax(), 0.0, epsilon = 1e-12 * direct.electrode_potentials.amax());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn homogeneity_and_gauge(c in 0.1f64..10.0, seed in 0u64..1000) {
        let (mesh, layout) = small_tank();
        let (sigma, contact) = reference();
        let pats = make_patterns(PatternKind::Fourier, 8).unwrap();
        let peaks: Vec<f64> = (0..8).map(|m| 100.0 + ((seed * 31 + m * 17) % 900) as f64).collect();
        let contact = contact.with_peaks(peaks).unwrap();
        let sys = assemble(mesh, layout, &sigma, &contact).unwrap();
        let sol = sys.solve(&pats).unwrap();
        let u = sol.measurements();
        prop_assert!(sol.electrode_potentials.row_sum().amax() <= 1e-12 * u.norm());

        let scaled = simulate(mesh, layout, &sigma.scaled(c).unwrap(), &contact.scaled(c).unwrap(), &pats).unwrap();
        prop_assert!((scaled * c - &u).norm() <= 1e-10 * u.norm());

        let sens = Sensitivity::new(&sys, &sol).unwrap();
        let euler = &sens.sigma().matrix * DVector::from_column_slice(sigma.values())
            + &sens.zeta().matrix * DVector::from_column_slice(contact.peaks())
            + &u;
        prop_assert!(euler.norm() <= 1e-8 * u.norm());
    }
}
