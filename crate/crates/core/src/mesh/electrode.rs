use std::f64::consts::PI;

use nalgebra::Rotation3;

use super::{Mesh, Vec3};
use crate::error::{Error, Result};

/// Sub-triangles per edge used by the contact quadrature.
const SUBDIVISIONS: usize = 7;

/// Quadrature points per boundary face: centroid rule on a uniform
/// 7×7 subdivision.
pub const FACE_QUADRATURE_POINTS: usize = SUBDIVISIONS * SUBDIVISIONS;

/// Barycentric coordinates of the contact quadrature points on a reference
/// triangle. All points carry the weight `area / 49`.
pub fn face_quadrature_points() -> Vec<[f64; 3]> {
    let n = SUBDIVISIONS as f64;
    let mut pts = Vec::with_capacity(FACE_QUADRATURE_POINTS);
    for i in 0..SUBDIVISIONS {
        for j in 0..SUBDIVISIONS - i {
            // upward sub-triangle
            let (a, b) = ((i as f64 + 1.0 / 3.0) / n, (j as f64 + 1.0 / 3.0) / n);
            pts.push([1.0 - a - b, a, b]);
            if i + j + 1 < SUBDIVISIONS {
                let (a, b) = ((i as f64 + 2.0 / 3.0) / n, (j as f64 + 2.0 / 3.0) / n);
                pts.push([1.0 - a - b, a, b]);
            }
        }
    }
    pts
}

#[derive(Debug, Clone)]
pub struct QuadPoint {
    pub bary: [f64; 3],
    pub x: Vec3,
    pub weight: f64,
}

/// Quadrature data of one boundary face carrying contact.
#[derive(Debug, Clone)]
pub struct FaceQuadrature {
    pub face: usize,
    pub nodes: [usize; 3],
    pub normal: Vec3,
    pub points: Vec<QuadPoint>,
}

/// Direction of an electrode displacement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MoveDirection {
    Polar,
    Azimuth,
}

/// A disk electrode: the part of the boundary inside a circular cylinder of
/// radius `radius` whose axis is the surface normal at `center`.
#[derive(Debug, Clone)]
pub struct Electrode {
    pub center: Vec3,
    /// Outward unit normal at the center (the defining cylinder's axis).
    pub axis: Vec3,
    pub radius: f64,
    /// Polar angle of the center seen from the layout origin.
    pub polar: f64,
    /// Azimuthal angle of the center seen from the layout origin, in [0, 2π).
    pub azimuth: f64,
    /// Boundary faces whose barycenter lies inside the defining cylinder.
    pub faces: Vec<usize>,
    /// Derivatives of the boundary parametrization w.r.t. the polar and
    /// azimuthal angle at the center; `None` where the boundary is not
    /// star-shaped around the layout origin.
    tangents: Option<[Vec3; 2]>,
    frame: [Vec3; 2],
    quadrature: Vec<FaceQuadrature>,
}

impl Electrode {
    /// Distance to the axis and signed axial offset of a point.
    pub fn cylinder_coordinates(&self, x: &Vec3) -> (f64, f64) {
        let d = x - self.center;
        let axial = d.dot(&self.axis);
        ((d - self.axis * axial).norm(), axial)
    }

    pub fn contains(&self, x: &Vec3) -> bool {
        let (r, axial) = self.cylinder_coordinates(x);
        r < self.radius && axial.abs() <= self.radius
    }

    /// `(r, ψ)` of a point without domain checks.
    pub fn polar_coordinates(&self, x: &Vec3) -> (f64, f64) {
        let d = x - self.center;
        let t = d - self.axis * d.dot(&self.axis);
        let psi = t.dot(&self.frame[1]).atan2(t.dot(&self.frame[0]));
        (t.norm(), psi.rem_euclid(2.0 * PI))
    }

    /// Gradient of the distance to the axis (zero on the axis).
    pub fn radial_direction(&self, x: &Vec3) -> Vec3 {
        let d = x - self.center;
        let t = d - self.axis * d.dot(&self.axis);
        let r = t.norm();
        if r > 0.0 {
            t / r
        } else {
            Vec3::zeros()
        }
    }

    /// Faces carrying contact quadrature: every boundary face with at least
    /// one quadrature point inside the disk.
    pub fn quadrature(&self) -> &[FaceQuadrature] {
        &self.quadrature
    }

    pub fn support_faces(&self) -> impl Iterator<Item = usize> + '_ {
        self.quadrature.iter().map(|q| q.face)
    }

    pub fn center_tangent(&self, dir: MoveDirection) -> Result<Vec3> {
        let [tp, ta] = self.tangents.ok_or_else(|| {
            Error::Domain("electrode angles are undefined: boundary is not star-shaped around the origin".into())
        })?;
        Ok(match dir {
            MoveDirection::Polar => tp,
            MoveDirection::Azimuth => ta,
        })
    }

    /// The movement field at a point with surface normal `normal`: the
    /// center tangent projected to the local tangent plane with its length
    /// kept constant.
    pub fn tangent_at(&self, dir: MoveDirection, normal: &Vec3) -> Result<Vec3> {
        let t = self.center_tangent(dir)?;
        let len = t.norm();
        let tau = t - normal * t.dot(normal);
        let n = tau.norm();
        Ok(if n > 0.0 { tau * (len / n) } else { Vec3::zeros() })
    }

    pub fn patch_area(&self, mesh: &Mesh) -> f64 {
        self.faces.iter().map(|&f| mesh.boundary_faces()[f].area).sum()
    }
}

/// Electrode geometry without mesh-derived data.
#[derive(Debug, Clone)]
pub struct ElectrodeGeometry {
    pub center: Vec3,
    pub axis: Vec3,
    pub radius: f64,
}

/// The set of electrodes attached to a mesh. Immutable after construction.
#[derive(Debug, Clone)]
pub struct ElectrodeLayout {
    electrodes: Vec<Electrode>,
    origin: Vec3,
}

fn angles_of(v: &Vec3) -> (f64, f64) {
    let s = v.norm();
    let polar = (v.z / s).clamp(-1.0, 1.0).acos();
    let azimuth = v.y.atan2(v.x).rem_euclid(2.0 * PI);
    (polar, azimuth)
}

/// Derivatives of the star-shaped boundary parametrization
/// `x(θ, φ) = s(θ, φ)·e_r(θ, φ)` around `origin`, evaluated at `center` with
/// surface normal `normal`.
fn parametrization_tangents(center: &Vec3, normal: &Vec3, origin: &Vec3) -> Result<(Vec3, Vec3)> {
    let v = center - origin;
    let s = v.norm();
    if s == 0.0 {
        return Err(Error::Validation("electrode center coincides with the layout origin".into()));
    }
    let (theta, phi) = angles_of(&v);
    let e_r = v / s;
    let e_theta = Vec3::new(theta.cos() * phi.cos(), theta.cos() * phi.sin(), -theta.sin());
    let e_phi = Vec3::new(-phi.sin(), phi.cos(), 0.0);
    let rn = e_r.dot(normal);
    if rn.abs() < 1e-8 {
        return Err(Error::Validation(
            "boundary is not star-shaped around the layout origin at an electrode center".into(),
        ));
    }
    let t_theta = (e_theta - e_r * (e_theta.dot(normal) / rn)) * s;
    let t_phi = (e_phi - e_r * (e_phi.dot(normal) / rn)) * (s * theta.sin());
    Ok((t_theta, t_phi))
}

fn build_quadrature(mesh: &Mesh, face: usize) -> FaceQuadrature {
    let bf = &mesh.boundary_faces()[face];
    let xs = bf.nodes.map(|i| mesh.nodes()[i]);
    let weight = bf.area / FACE_QUADRATURE_POINTS as f64;
    let points = face_quadrature_points()
        .into_iter()
        .map(|b| QuadPoint { bary: b, x: xs[0] * b[0] + xs[1] * b[1] + xs[2] * b[2], weight })
        .collect();
    FaceQuadrature { face, nodes: bf.nodes, normal: bf.normal, points }
}

fn electrode_from_geometry(
    mesh: &Mesh,
    geom: &ElectrodeGeometry,
    faces: Option<Vec<usize>>,
    origin: &Vec3,
) -> Result<Electrode> {
    if !(geom.radius > 0.0) {
        return Err(Error::Validation(format!("electrode radius {} must be positive", geom.radius)));
    }
    let axis = geom.axis.normalize();
    let (polar, azimuth) = angles_of(&(geom.center - origin));
    let tangents = parametrization_tangents(&geom.center, &axis, origin).ok().map(|(a, b)| [a, b]);
    let e1 = if let Some(t) = tangents.map(|t| t[1]).filter(|t| t.norm() > 0.0) {
        (t - axis * t.dot(&axis)).normalize()
    } else {
        let trial = if axis.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        (trial - axis * trial.dot(&axis)).normalize()
    };
    let e2 = axis.cross(&e1);
    let mut el = Electrode {
        center: geom.center,
        axis,
        radius: geom.radius,
        polar,
        azimuth,
        faces: Vec::new(),
        tangents,
        frame: [e1, e2],
        quadrature: Vec::new(),
    };

    el.faces = match faces {
        Some(f) => f,
        None => mesh
            .boundary_faces()
            .iter()
            .enumerate()
            .filter(|(_, bf)| el.contains(&bf.barycenter(mesh)))
            .map(|(i, _)| i)
            .collect(),
    };
    if el.faces.is_empty() {
        return Err(Error::Validation(format!(
            "electrode at {:?} covers no boundary face",
            geom.center.as_slice()
        )));
    }

    let reach = 2.0 * geom.radius;
    let mut support = Vec::new();
    for (i, bf) in mesh.boundary_faces().iter().enumerate() {
        let listed = el.faces.contains(&i);
        let xs = bf.nodes.map(|k| mesh.nodes()[k]);
        let diam = (xs[0] - xs[1]).norm().max((xs[1] - xs[2]).norm()).max((xs[0] - xs[2]).norm());
        if !listed && (bf.barycenter(mesh) - geom.center).norm() > reach + diam {
            continue;
        }
        let q = build_quadrature(mesh, i);
        if listed || q.points.iter().any(|p| el.contains(&p.x)) {
            support.push(q);
        }
    }
    el.quadrature = support;
    Ok(el)
}

impl ElectrodeLayout {
    /// Builds a layout from electrode geometries. `faces[m] = None` selects
    /// the patch by the barycenter rule.
    pub fn new(
        mesh: &Mesh,
        geometries: &[ElectrodeGeometry],
        faces: Vec<Option<Vec<usize>>>,
        origin: Vec3,
    ) -> Result<Self> {
        if geometries.len() < 2 {
            return Err(Error::Validation(format!(
                "at least two electrodes are required, got {}",
                geometries.len()
            )));
        }
        assert_eq!(geometries.len(), faces.len());
        let nf = mesh.boundary_faces().len();
        let mut owner = vec![usize::MAX; nf];
        let mut electrodes = Vec::with_capacity(geometries.len());
        for (m, (g, f)) in geometries.iter().zip(faces).enumerate() {
            if let Some(list) = &f {
                if let Some(&bad) = list.iter().find(|&&i| i >= nf) {
                    return Err(Error::Validation(format!(
                        "electrode {m} references boundary face {bad} but there are {nf}"
                    )));
                }
            }
            let el = electrode_from_geometry(mesh, g, f, &origin)
                .map_err(|e| Error::Validation(format!("electrode {m}: {e}")))?;
            for &face in &el.faces {
                if owner[face] != usize::MAX {
                    return Err(Error::Validation(format!(
                        "boundary face {face} belongs to electrodes {} and {m}",
                        owner[face]
                    )));
                }
                owner[face] = m;
            }
            electrodes.push(el);
        }
        Ok(Self { electrodes, origin })
    }

    /// Builds a layout with the axis of each electrode taken as the
    /// area-weighted mean normal of its faces.
    pub fn from_faces(
        mesh: &Mesh,
        centers: &[Vec3],
        radii: &[f64],
        faces: Vec<Vec<usize>>,
        origin: Option<Vec3>,
    ) -> Result<Self> {
        let nf = mesh.boundary_faces().len();
        let mut geoms = Vec::with_capacity(centers.len());
        for (m, (c, f)) in centers.iter().zip(&faces).enumerate() {
            let mut n = Vec3::zeros();
            for &i in f {
                if i >= nf {
                    return Err(Error::Validation(format!(
                        "electrode {m} references boundary face {i} but there are {nf}"
                    )));
                }
                let bf = &mesh.boundary_faces()[i];
                n += bf.normal * bf.area;
            }
            if n.norm() == 0.0 {
                return Err(Error::Validation(format!("electrode {m} has no faces")));
            }
            geoms.push(ElectrodeGeometry { center: *c, axis: n.normalize(), radius: radii[m] });
        }
        let origin = origin.unwrap_or_else(|| {
            let (lo, hi) = mesh.bounding_box();
            Vec3::new(0.5 * (lo.x + hi.x), 0.5 * (lo.y + hi.y), lo.z)
        });
        Self::new(mesh, &geoms, faces.into_iter().map(Some).collect(), origin)
    }

    pub fn len(&self) -> usize {
        self.electrodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.electrodes.is_empty()
    }
    pub fn electrodes(&self) -> &[Electrode] {
        &self.electrodes
    }
    pub fn electrode(&self, m: usize) -> &Electrode {
        &self.electrodes[m]
    }
    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn geometries(&self) -> Vec<ElectrodeGeometry> {
        self.electrodes
            .iter()
            .map(|e| ElectrodeGeometry { center: e.center, axis: e.axis, radius: e.radius })
            .collect()
    }

    /// Total area of all electrode patches.
    pub fn patch_area(&self, mesh: &Mesh) -> f64 {
        self.electrodes.iter().map(|e| e.patch_area(mesh)).sum()
    }

    /// Copy of the layout with electrode `m` displaced by `delta` radians in
    /// the given angle. Azimuthal moves rotate the electrode about the
    /// vertical line through the origin; polar moves translate it along the
    /// polar tangent (exact for boundaries that are straight in that
    /// direction, such as a cylinder wall). Patch membership and contact
    /// support are recomputed on the unchanged mesh.
    pub fn moved(&self, mesh: &Mesh, m: usize, dir: MoveDirection, delta: f64) -> Result<Self> {
        let e = self
            .electrodes
            .get(m)
            .ok_or_else(|| Error::Contract(format!("electrode index {m} out of range")))?;
        let geom = match dir {
            MoveDirection::Azimuth => {
                let rot = Rotation3::from_axis_angle(&Vec3::z_axis(), delta);
                ElectrodeGeometry {
                    center: self.origin + rot * (e.center - self.origin),
                    axis: rot * e.axis,
                    radius: e.radius,
                }
            }
            MoveDirection::Polar => ElectrodeGeometry {
                center: e.center + e.center_tangent(MoveDirection::Polar)? * delta,
                axis: e.axis,
                radius: e.radius,
            },
        };
        let moved = electrode_from_geometry(mesh, &geom, None, &self.origin)?;
        let mut electrodes = self.electrodes.clone();
        electrodes[m] = moved;
        Ok(Self { electrodes, origin: self.origin })
    }
}

/// Local polar coordinates `(r, ψ)` of a boundary point on electrode `m`.
pub fn local_polar(layout: &ElectrodeLayout, m: usize, x: &Vec3) -> Result<(f64, f64)> {
    let e = layout
        .electrodes
        .get(m)
        .ok_or_else(|| Error::Domain(format!("electrode index {m} out of range")))?;
    if !e.contains(x) {
        return Err(Error::Domain(format!("point {:?} is outside electrode {m}", x.as_slice())));
    }
    Ok(e.polar_coordinates(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrature_points_cover_reference_triangle() {
        let pts = face_quadrature_points();
        assert_eq!(pts.len(), 49);
        for p in &pts {
            assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
        // integrates linear functions exactly: mean of each coordinate is 1/3
        for k in 0..3 {
            let mean = pts.iter().map(|p| p[k]).sum::<f64>() / 49.0;
            assert!((mean - 1.0 / 3.0).abs() < 1e-15);
        }
        // the triangle centroid is one of the points
        assert!(pts.iter().any(|p| p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15)));
    }

    #[test]
    fn cylinder_tangents_match_analytic_derivatives() {
        let rho = 0.1;
        let (theta, phi) = (1.2_f64, 0.7_f64);
        let c = Vec3::new(rho * phi.cos(), rho * phi.sin(), rho / theta.tan());
        let n = Vec3::new(phi.cos(), phi.sin(), 0.0);
        let (tt, tp) = parametrization_tangents(&c, &n, &Vec3::zeros()).unwrap();
        let expect_t = Vec3::new(0.0, 0.0, -rho / theta.sin().powi(2));
        let expect_p = Vec3::new(-rho * phi.sin(), rho * phi.cos(), 0.0);
        assert!((tt - expect_t).norm() < 1e-12);
        assert!((tp - expect_p).norm() < 1e-12);
    }
}
