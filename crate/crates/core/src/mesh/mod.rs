//! Tetrahedral meshes, disk electrode layouts and phantom generation.

mod electrode;
mod io;
mod tank;

use std::collections::HashMap;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub use electrode::{
    face_quadrature_points, local_polar, Electrode, ElectrodeGeometry, ElectrodeLayout, FaceQuadrature,
    MoveDirection, QuadPoint,
    FACE_QUADRATURE_POINTS,
};
pub use io::{load_mesh, read_mesh_document, save_mesh, write_mesh_document, ElectrodeRecord, MeshDocument};
pub use tank::{generate_box_mesh, generate_cylinder_tank, ElectrodeRingSpec, TankSpec, DEFAULT_NODE_BUDGET};

pub type Vec3 = Vector3<f64>;

/// Smallest admissible tetrahedron volume in m³.
pub const MIN_TET_VOLUME: f64 = 1e-18;

/// A boundary triangle together with its owning tetrahedron.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryFace {
    pub nodes: [usize; 3],
    /// Outward unit normal.
    pub normal: Vec3,
    pub area: f64,
    pub tet: usize,
}

impl BoundaryFace {
    pub fn barycenter(&self, mesh: &Mesh) -> Vec3 {
        let [a, b, c] = self.nodes;
        (mesh.nodes[a] + mesh.nodes[b] + mesh.nodes[c]) / 3.0
    }
}

/// Constant per-element geometry of a P1 tetrahedron.
#[derive(Debug, Clone)]
pub struct TetGeometry {
    pub volume: f64,
    /// Gradients of the four barycentric (hat) functions.
    pub grads: [Vec3; 4],
}

/// Tetrahedral finite element mesh. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Mesh {
    nodes: Vec<Vec3>,
    tets: Vec<[usize; 4]>,
    regions: Vec<i32>,
    boundary_faces: Vec<BoundaryFace>,
    geometry: Vec<TetGeometry>,
}

fn sorted3(f: [usize; 3]) -> [usize; 3] {
    let mut s = f;
    s.sort_unstable();
    s
}

const TET_FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]];

impl Mesh {
    /// Builds and validates a mesh. Negatively oriented tetrahedra are
    /// reoriented. With `boundary_faces = None` the exterior faces are
    /// extracted from the element connectivity.
    pub fn new(
        nodes: Vec<Vec3>,
        mut tets: Vec<[usize; 4]>,
        regions: Vec<i32>,
        boundary_faces: Option<Vec<[usize; 3]>>,
    ) -> Result<Self> {
        if regions.len() != tets.len() {
            return Err(Error::Validation(format!(
                "{} region labels for {} tetrahedra",
                regions.len(),
                tets.len()
            )));
        }
        if tets.is_empty() {
            return Err(Error::Validation("mesh has no tetrahedra".into()));
        }
        let n = nodes.len();
        let mut geometry = Vec::with_capacity(tets.len());
        for (t, tet) in tets.iter_mut().enumerate() {
            if let Some(&bad) = tet.iter().find(|&&i| i >= n) {
                return Err(Error::Validation(format!(
                    "tetrahedron {t} references node {bad} but the mesh has {n} nodes"
                )));
            }
            let mut g = tet_geometry(&nodes, tet);
            if g.volume < 0.0 {
                tet.swap(2, 3);
                g = tet_geometry(&nodes, tet);
            }
            if !(g.volume > MIN_TET_VOLUME) {
                return Err(Error::Validation(format!(
                    "tetrahedron {t} is degenerate (volume {:e} m³)",
                    g.volume
                )));
            }
            geometry.push(g);
        }

        // face -> (count, owner tet, local face)
        let mut faces: HashMap<[usize; 3], (u32, usize, usize)> = HashMap::with_capacity(tets.len() * 2);
        for (t, tet) in tets.iter().enumerate() {
            for (lf, lfv) in TET_FACES.iter().enumerate() {
                let key = sorted3([tet[lfv[0]], tet[lfv[1]], tet[lfv[2]]]);
                let e = faces.entry(key).or_insert((0, t, lf));
                e.0 += 1;
            }
        }
        if let Some((key, _)) = faces.iter().find(|(_, v)| v.0 > 2) {
            return Err(Error::Validation(format!(
                "face {key:?} is shared by more than two tetrahedra"
            )));
        }

        let oriented = |t: usize, lf: usize| -> BoundaryFace {
            let tet = &tets[t];
            let lfv = TET_FACES[lf];
            let f = [tet[lfv[0]], tet[lfv[1]], tet[lfv[2]]];
            let (a, b, c) = (nodes[f[0]], nodes[f[1]], nodes[f[2]]);
            let cross = (b - a).cross(&(c - a));
            let area = 0.5 * cross.norm();
            let mut normal = cross / cross.norm();
            let opposite = nodes[tet[lf]];
            let mut f = f;
            if normal.dot(&(opposite - a)) > 0.0 {
                normal = -normal;
                f.swap(1, 2);
            }
            BoundaryFace { nodes: f, normal, area, tet: t }
        };

        let boundary = match boundary_faces {
            None => {
                let mut exterior: Vec<(usize, usize)> = faces
                    .values()
                    .filter(|v| v.0 == 1)
                    .map(|v| (v.1, v.2))
                    .collect();
                exterior.sort_unstable();
                exterior.into_iter().map(|(t, lf)| oriented(t, lf)).collect()
            }
            Some(list) => {
                let mut seen = HashMap::with_capacity(list.len());
                let mut out = Vec::with_capacity(list.len());
                for (i, f) in list.iter().enumerate() {
                    if let Some(&bad) = f.iter().find(|&&v| v >= n) {
                        return Err(Error::Validation(format!(
                            "boundary face {i} references node {bad} but the mesh has {n} nodes"
                        )));
                    }
                    let key = sorted3(*f);
                    if let Some(prev) = seen.insert(key, i) {
                        return Err(Error::Validation(format!(
                            "boundary faces {prev} and {i} coincide"
                        )));
                    }
                    match faces.get(&key) {
                        Some(&(1, t, lf)) => out.push(oriented(t, lf)),
                        Some(_) => {
                            return Err(Error::Validation(format!(
                                "boundary face {i} is shared by two tetrahedra"
                            )))
                        }
                        None => {
                            return Err(Error::Validation(format!(
                                "boundary face {i} is not a face of any tetrahedron"
                            )))
                        }
                    }
                }
                out
            }
        };

        for (i, f) in boundary.iter().enumerate() {
            if !(f.area > 0.0) || !f.normal.iter().all(|v| v.is_finite()) {
                return Err(Error::Validation(format!("boundary face {i} is degenerate")));
            }
        }

        Ok(Self { nodes, tets, regions, boundary_faces: boundary, geometry })
    }

    pub fn nodes(&self) -> &[Vec3] {
        &self.nodes
    }
    pub fn tets(&self) -> &[[usize; 4]] {
        &self.tets
    }
    pub fn regions(&self) -> &[i32] {
        &self.regions
    }
    pub fn boundary_faces(&self) -> &[BoundaryFace] {
        &self.boundary_faces
    }
    pub fn geometry(&self) -> &[TetGeometry] {
        &self.geometry
    }
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }
    pub fn n_tets(&self) -> usize {
        self.tets.len()
    }

    pub fn volume(&self) -> f64 {
        self.geometry.iter().map(|g| g.volume).sum()
    }

    pub fn boundary_area(&self) -> f64 {
        self.boundary_faces.iter().map(|f| f.area).sum()
    }

    pub fn centroid(&self) -> Vec3 {
        let mut c = Vec3::zeros();
        for (tet, g) in self.tets.iter().zip(&self.geometry) {
            let x = tet.iter().map(|&i| self.nodes[i]).sum::<Vec3>() / 4.0;
            c += x * g.volume;
        }
        c / self.volume()
    }

    /// Lumped nodal volumes (a quarter of every adjacent tetrahedron).
    pub fn nodal_volumes(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.nodes.len()];
        for (tet, g) in self.tets.iter().zip(&self.geometry) {
            for &i in tet {
                v[i] += 0.25 * g.volume;
            }
        }
        v
    }

    /// Constant gradient of a nodal P1 field on tetrahedron `t`.
    pub fn gradient(&self, t: usize, field: &[f64]) -> Vec3 {
        let tet = &self.tets[t];
        let g = &self.geometry[t];
        (0..4).map(|a| g.grads[a] * field[tet[a]]).sum()
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for x in &self.nodes {
            lo = lo.inf(x);
            hi = hi.sup(x);
        }
        (lo, hi)
    }

    /// A stable content hash of the node and element arrays.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for x in &self.nodes {
            for v in x.iter() {
                h.update(v.to_le_bytes());
            }
        }
        for t in &self.tets {
            for &i in t {
                h.update((i as u64).to_le_bytes());
            }
        }
        hex_string(&h.finalize())
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn tet_geometry(nodes: &[Vec3], tet: &[usize; 4]) -> TetGeometry {
    let x0 = nodes[tet[0]];
    let d = Matrix3::from_columns(&[nodes[tet[1]] - x0, nodes[tet[2]] - x0, nodes[tet[3]] - x0]);
    let det = d.determinant();
    let volume = det / 6.0;
    let grads = match d.try_inverse() {
        Some(inv) => {
            let g1 = inv.row(0).transpose();
            let g2 = inv.row(1).transpose();
            let g3 = inv.row(2).transpose();
            [-(g1 + g2 + g3), g1, g2, g3]
        }
        None => [Vec3::zeros(); 4],
    };
    TetGeometry { volume, grads }
}
