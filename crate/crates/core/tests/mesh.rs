use approx::assert_relative_eq;
use eitproj_core::forward::{make_patterns, simulate, ConductivityField, ContactState, PatternKind};
use eitproj_core::mesh::{
    generate_box_mesh, generate_cylinder_tank, load_mesh, read_mesh_document, save_mesh, write_mesh_document,
    MeshDocument, TankSpec,
};
use eitproj_core::Error;
use proptest::prelude::*;
use std::f64::consts::PI;

fn small_spec() -> TankSpec {
    TankSpec::single_ring(0.03, 0.015, 8, 0.006, 0)
}

#[test]
fn json_round_trip_is_bit_exact() {
    let (mesh, layout) = generate_cylinder_tank(&small_spec()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mesh.json");
    save_mesh(&path, &mesh, &layout).unwrap();
    let (m2, l2) = load_mesh(&path).unwrap();

    assert_eq!(mesh.tets(), m2.tets());
    assert_eq!(mesh.regions(), m2.regions());
    for (a, b) in mesh.nodes().iter().zip(m2.nodes()) {
        for k in 0..3 {
            assert_eq!(a[k].to_bits(), b[k].to_bits());
        }
    }
    assert_eq!(mesh.content_hash(), m2.content_hash());
    assert_eq!(layout.len(), l2.len());
    for (a, b) in layout.electrodes().iter().zip(l2.electrodes()) {
        assert_eq!(a.faces, b.faces);
        assert_eq!(a.center, b.center);
        assert_eq!(a.axis, b.axis);
    }
    assert_eq!(write_mesh_document(&mesh, &layout), write_mesh_document(&m2, &l2));

    let pats = make_patterns(PatternKind::Fourier, 8).unwrap();
    let sigma = ConductivityField::constant(mesh.n_nodes(), 0.0491).unwrap();
    let contact = ContactState::uniform(8, 500.0, 0.006).unwrap();
    let u1 = simulate(&mesh, &layout, &sigma, &contact, &pats).unwrap();
    let u2 = simulate(&m2, &l2, &sigma, &contact, &pats).unwrap();
    assert_eq!(u1, u2);
}

#[test]
fn optional_axis_and_origin_are_rebuilt() {
    let (mesh, layout) = generate_cylinder_tank(&small_spec()).unwrap();
    let mut doc = MeshDocument::from_parts(&mesh, &layout);
    for e in &mut doc.electrodes {
        e.axis = None;
    }
    doc.origin = None;
    let (_, l2) = doc.into_parts().unwrap();
    for (a, b) in layout.electrodes().iter().zip(l2.electrodes()) {
        // faceted patch normal against the exact cylinder normal
        assert!(a.axis.dot(&b.axis) > 0.999);
    }
    assert_relative_eq!((l2.origin() - layout.origin()).norm(), 0.0, epsilon = 1e-12);
}

#[test]
fn malformed_documents_are_rejected() {
    let (mesh, layout) = generate_cylinder_tank(&small_spec()).unwrap();
    let mut doc = MeshDocument::from_parts(&mesh, &layout);
    doc.electrodes[0].faces.push(usize::MAX);
    assert!(matches!(doc.into_parts(), Err(Error::Validation(_))));

    let mut doc = MeshDocument::from_parts(&mesh, &layout);
    doc.tets[0][0] = mesh.n_nodes();
    assert!(doc.into_parts().is_err());

    assert!(matches!(read_mesh_document("{\"nodes\": 3}"), Err(Error::Parse(_))));
}

#[test]
fn tank_geometry_matches_cylinder() {
    let spec = TankSpec::single_ring(0.115, 0.043, 16, 0.005, 1);
    let (mesh, layout) = generate_cylinder_tank(&spec).unwrap();
    assert_eq!(mesh.n_nodes(), 15015);
    let exact = PI * 0.115f64.powi(2) * 0.043;
    assert_relative_eq!(mesh.volume(), exact, max_relative = 5e-3);
    let (lo, hi) = mesh.bounding_box();
    assert_relative_eq!(lo.z, 0.0);
    assert_relative_eq!(hi.z, 0.043);
    let disk = PI * 0.005f64.powi(2);
    for (m, e) in layout.electrodes().iter().enumerate() {
        let phi = 2.0 * PI * m as f64 / 16.0;
        assert_relative_eq!(e.center.x, 0.115 * phi.cos(), epsilon = 1e-12);
        assert_relative_eq!(e.center.y, 0.115 * phi.sin(), epsilon = 1e-12);
        assert_relative_eq!(e.center.z, 0.0215, epsilon = 1e-12);
        let area = e.patch_area(&mesh);
        assert!((area / disk - 1.0).abs() < 0.1, "electrode {m} patch area ratio {}", area / disk);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn box_mesh_measures(a in 0.01f64..2.0, b in 0.01f64..2.0, c in 0.01f64..2.0,
                         nx in 1usize..5, ny in 1usize..5, nz in 1usize..5) {
        let mesh = generate_box_mesh([a, b, c], [nx, ny, nz]).unwrap();
        prop_assert_eq!(mesh.n_nodes(), (nx + 1) * (ny + 1) * (nz + 1));
        let vol = a * b * c;
        prop_assert!((mesh.volume() / vol - 1.0).abs() < 1e-12);
        let nodal: f64 = mesh.nodal_volumes().iter().sum();
        prop_assert!((nodal / vol - 1.0).abs() < 1e-12);
        let area = 2.0 * (a * b + b * c + c * a);
        prop_assert!((mesh.boundary_area() / area - 1.0).abs() < 1e-12);
        // gradients of a linear field are exact on every element
        let g = [0.3, -1.2, 2.5];
        let f: Vec<f64> = mesh.nodes().iter().map(|x| g[0] * x.x + g[1] * x.y + g[2] * x.z).collect();
        for t in 0..mesh.n_tets() {
            let d = mesh.gradient(t, &f);
            for k in 0..3 {
                prop_assert!((d[k] - g[k]).abs() < 1e-9 * (1.0 + g[k].abs()));
            }
        }
    }
}
