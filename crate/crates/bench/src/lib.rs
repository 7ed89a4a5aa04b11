//! Shared fixtures for the criterion benches.

use eitproj_core::forward::{make_patterns, ConductivityField, ContactState, CurrentPatternSet, PatternKind};
use eitproj_core::mesh::{generate_cylinder_tank, ElectrodeLayout, Mesh, TankSpec};

pub struct Fixture {
    pub mesh: Mesh,
    pub layout: ElectrodeLayout,
    pub sigma: ConductivityField,
    pub contact: ContactState,
    pub patterns: CurrentPatternSet,
}

/// A 16-electrode tank, 3 cm radius, at the given refinement level.
pub fn tank(level: u32) -> Fixture {
    let (mesh, layout) = generate_cylinder_tank(&TankSpec::single_ring(0.03, 0.015, 16, 0.004, level)).unwrap();
    let sigma = ConductivityField::constant(mesh.n_nodes(), 0.2).unwrap();
    let contact = ContactState::uniform(16, 500.0, 0.004).unwrap();
    let patterns = make_patterns(PatternKind::Fourier, 16).unwrap();
    Fixture { mesh, layout, sigma, contact, patterns }
}
