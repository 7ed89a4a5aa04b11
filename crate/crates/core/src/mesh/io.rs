use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ElectrodeGeometry, ElectrodeLayout, Mesh, Vec3};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeRecord {
    pub center: [f64; 3],
    pub radius: f64,
    pub faces: Vec<usize>,
    /// Outward unit normal at the center. Defaults to the area-weighted mean
    /// normal of the faces.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<[f64; 3]>,
}

/// On-disk mesh document. Indices are zero-based; lengths in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshDocument {
    pub nodes: Vec<[f64; 3]>,
    pub tets: Vec<[usize; 4]>,
    pub boundary_faces: Vec<[usize; 3]>,
    pub regions: Vec<i32>,
    pub electrodes: Vec<ElectrodeRecord>,
    /// Center used for the electrode angles. Defaults to the middle of the
    /// bounding box footprint at its lowest height.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<[f64; 3]>,
}

fn arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

impl MeshDocument {
    pub fn from_parts(mesh: &Mesh, layout: &ElectrodeLayout) -> Self {
        Self {
            nodes: mesh.nodes().iter().map(arr).collect(),
            tets: mesh.tets().to_vec(),
            boundary_faces: mesh.boundary_faces().iter().map(|f| f.nodes).collect(),
            regions: mesh.regions().to_vec(),
            electrodes: layout
                .electrodes()
                .iter()
                .map(|e| ElectrodeRecord {
                    center: arr(&e.center),
                    radius: e.radius,
                    faces: e.faces.clone(),
                    axis: Some(arr(&e.axis)),
                })
                .collect(),
            origin: Some(arr(&layout.origin())),
        }
    }

    /// Validates the document and builds the mesh and layout.
    pub fn into_parts(self) -> Result<(Mesh, ElectrodeLayout)> {
        let nodes = self.nodes.iter().map(|p| Vec3::from(*p)).collect();
        let mesh = Mesh::new(nodes, self.tets, self.regions, Some(self.boundary_faces))?;
        let nf = mesh.boundary_faces().len();
        let mut geoms = Vec::with_capacity(self.electrodes.len());
        let mut faces = Vec::with_capacity(self.electrodes.len());
        for (m, e) in self.electrodes.into_iter().enumerate() {
            if let Some(&bad) = e.faces.iter().find(|&&f| f >= nf) {
                return Err(Error::Validation(format!(
                    "electrode {m} references boundary face {bad} but there are {nf}"
                )));
            }
            let axis = match e.axis {
                Some(a) => Vec3::from(a),
                None => e.faces.iter().fold(Vec3::zeros(), |acc, &f| {
                    let bf = &mesh.boundary_faces()[f];
                    acc + bf.normal * bf.area
                }),
            };
            if !(axis.norm() > 0.0) {
                return Err(Error::Validation(format!("electrode {m} has no faces or a zero axis")));
            }
            geoms.push(ElectrodeGeometry { center: Vec3::from(e.center), axis: axis.normalize(), radius: e.radius });
            faces.push(Some(e.faces));
        }
        let origin = self.origin.map(Vec3::from).unwrap_or_else(|| {
            let (lo, hi) = mesh.bounding_box();
            Vec3::new(0.5 * (lo.x + hi.x), 0.5 * (lo.y + hi.y), lo.z)
        });
        let layout = ElectrodeLayout::new(&mesh, &geoms, faces, origin)?;
        Ok((mesh, layout))
    }
}

pub fn read_mesh_document(text: &str) -> Result<(Mesh, ElectrodeLayout)> {
    let doc: MeshDocument = serde_json::from_str(text).map_err(|e| Error::Parse(format!("mesh document: {e}")))?;
    doc.into_parts()
}

pub fn write_mesh_document(mesh: &Mesh, layout: &ElectrodeLayout) -> String {
    serde_json::to_string(&MeshDocument::from_parts(mesh, layout)).expect("mesh document serializes")
}

pub fn load_mesh(path: impl AsRef<Path>) -> Result<(Mesh, ElectrodeLayout)> {
    read_mesh_document(&fs::read_to_string(path)?)
}

pub fn save_mesh(path: impl AsRef<Path>, mesh: &Mesh, layout: &ElectrodeLayout) -> Result<()> {
    fs::write(path, write_mesh_document(mesh, layout))?;
    Ok(())
}
