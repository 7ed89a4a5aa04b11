use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{ElectrodeGeometry, ElectrodeLayout, Mesh, Vec3};
use crate::error::{Error, Result};

pub const DEFAULT_NODE_BUDGET: usize = 200_000;

/// Mesh size growth per meter of distance away from an electrode, as a
/// fraction of that distance.
const GRADING: f64 = 0.3;
/// Coarsest element size relative to the finest one.
const COARSE_RATIO: f64 = 8.0;

/// One horizontal ring of equally spaced electrodes on the lateral wall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeRingSpec {
    pub count: usize,
    /// Height of the electrode centers above the tank bottom (m).
    pub height: f64,
    /// Azimuth of the first electrode (rad).
    #[serde(default)]
    pub angle_offset: f64,
}

/// Cylindrical water tank with disk electrodes on the lateral wall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TankSpec {
    pub radius: f64,
    pub height: f64,
    pub electrode_radius: f64,
    pub rings: Vec<ElectrodeRingSpec>,
    #[serde(default)]
    pub refinement_level: u32,
    #[serde(default = "default_budget")]
    pub node_budget: usize,
    /// Tetrahedra whose centroid lies within this distance of the tank axis
    /// get region label 1, all others 0.
    #[serde(default)]
    pub inner_region_radius: Option<f64>,
}

fn default_budget() -> usize {
    DEFAULT_NODE_BUDGET
}

impl TankSpec {
    /// One ring of `count` electrodes at half the water height.
    pub fn single_ring(radius: f64, height: f64, count: usize, electrode_radius: f64, level: u32) -> Self {
        Self {
            radius,
            height,
            electrode_radius,
            rings: vec![ElectrodeRingSpec { count, height: 0.5 * height, angle_offset: 0.0 }],
            refinement_level: level,
            node_budget: DEFAULT_NODE_BUDGET,
            inner_region_radius: None,
        }
    }

    /// Finest element size, reached on the electrodes.
    pub fn fine_size(&self) -> f64 {
        self.electrode_radius / (1.5 * 1.5_f64.powi(self.refinement_level as i32))
    }

    fn electrode_centers(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for ring in &self.rings {
            for k in 0..ring.count {
                let phi = (ring.angle_offset + 2.0 * PI * k as f64 / ring.count as f64).rem_euclid(2.0 * PI);
                out.push((phi, ring.height));
            }
        }
        out
    }

    fn validate(&self) -> Result<()> {
        let positive = [("radius", self.radius), ("height", self.height), ("electrode_radius", self.electrode_radius)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("tank {name} must be positive, got {v}")));
            }
        }
        let r = self.electrode_radius;
        let centers = self.electrode_centers();
        if centers.len() < 2 {
            return Err(Error::Config(format!("at least two electrodes are required, got {}", centers.len())));
        }
        for (m, &(_, z)) in centers.iter().enumerate() {
            if z - r <= 0.0 || z + r >= self.height {
                return Err(Error::Config(format!(
                    "electrode {m} at height {z} does not fit between 0 and {}",
                    self.height
                )));
            }
        }
        let pos = |(phi, z): (f64, f64)| Vec3::new(self.radius * phi.cos(), self.radius * phi.sin(), z);
        for a in 0..centers.len() {
            for b in a + 1..centers.len() {
                let d = (pos(centers[a]) - pos(centers[b])).norm();
                // patches need at least one fine element between them
                if d <= 2.0 * r + self.fine_size() {
                    return Err(Error::Config(format!("electrodes {a} and {b} overlap (center distance {d:.3e} m)")));
                }
            }
        }
        if 2.0 * r >= self.radius {
            return Err(Error::Config("electrode radius too large for the tank".into()));
        }
        Ok(())
    }
}

/// Points on `[a, b]` (both included) whose spacing follows the size
/// function `h`.
fn graded_points(a: f64, b: f64, h: &dyn Fn(f64) -> f64) -> Vec<f64> {
    const SAMPLES: usize = 512;
    let dx = (b - a) / SAMPLES as f64;
    let mut cum = vec![0.0; SAMPLES + 1];
    for i in 0..SAMPLES {
        let x0 = a + dx * i as f64;
        cum[i + 1] = cum[i] + 0.5 * dx * (1.0 / h(x0) + 1.0 / h(x0 + dx));
    }
    let total = cum[SAMPLES];
    let n = total.round().max(1.0) as usize;
    let mut out = Vec::with_capacity(n + 1);
    out.push(a);
    let mut seg = 0;
    for k in 1..n {
        let target = total * k as f64 / n as f64;
        while cum[seg + 1] < target {
            seg += 1;
        }
        let t = (target - cum[seg]) / (cum[seg + 1] - cum[seg]);
        out.push(a + dx * (seg as f64 + t));
    }
    out.push(b);
    out
}

/// Points on `[a, b]` that form a uniform lattice of spacing `h_fine`
/// within `reach` of every anchor and follow the size function elsewhere.
/// Anchors themselves are always included.
fn anchored_points(a: f64, b: f64, anchors: &[f64], h_fine: f64, reach: f64, h: &dyn Fn(f64) -> f64) -> Vec<f64> {
    let k_max = (reach / h_fine).ceil() as i64;
    let mut fixed = vec![a, b];
    for &c in anchors {
        for k in -k_max..=k_max {
            let x = c + k as f64 * h_fine;
            if k == 0 || (x > a + 0.5 * h_fine && x < b - 0.5 * h_fine) {
                fixed.push(x);
            }
        }
    }
    fixed.sort_by(f64::total_cmp);
    let mut kept: Vec<f64> = Vec::with_capacity(fixed.len());
    for x in fixed {
        match kept.last() {
            Some(&last) if x - last < 0.5 * h_fine => {
                // anchors and interval ends win over lattice points
                if anchors.contains(&x) || x == b {
                    *kept.last_mut().unwrap() = x;
                }
            }
            _ => kept.push(x),
        }
    }
    let mut out = vec![kept[0]];
    for w in kept.windows(2) {
        let seg = graded_points(w[0], w[1], h);
        out.extend_from_slice(&seg[1..]);
    }
    out
}

/// Graded points on a closed interval of angles passing through every
/// breakpoint; returns sorted angles in `[0, 2π)`.
fn graded_circle(breaks: &[f64], h: &dyn Fn(f64) -> f64, min_points: usize) -> Vec<f64> {
    let mut b: Vec<f64> = breaks.to_vec();
    b.sort_by(f64::total_cmp);
    b.dedup();
    if b.is_empty() {
        b.push(0.0);
    }
    let mut out = Vec::new();
    for i in 0..b.len() {
        let start = b[i];
        let end = if i + 1 < b.len() { b[i + 1] } else { b[0] + 2.0 * PI };
        let seg = graded_points(start, end, h);
        out.extend_from_slice(&seg[..seg.len() - 1]);
    }
    if out.len() < min_points {
        let n = min_points;
        out = (0..n).map(|k| b[0] + 2.0 * PI * k as f64 / n as f64).collect();
    }
    let mut out: Vec<f64> = out.into_iter().map(|a| a.rem_euclid(2.0 * PI)).collect();
    out.sort_by(f64::total_cmp);
    out
}

/// Triangulates the annulus between two concentric point rings by a merge
/// sweep over the angles. Returns triangles of global indices.
fn stitch_rings(inner: &[(usize, f64)], outer: &[(usize, f64)], tris: &mut Vec<[usize; 3]>) {
    let (na, nb) = (inner.len(), outer.len());
    let angle_gap = |a: f64, b: f64| {
        let d = (a - b).rem_euclid(2.0 * PI);
        d.min(2.0 * PI - d)
    };
    let j0 = (0..nb)
        .min_by(|&x, &y| angle_gap(outer[x].1, inner[0].1).total_cmp(&angle_gap(outer[y].1, inner[0].1)))
        .unwrap_or(0);
    // unwrap angles so both sequences increase from the starting pair
    let base = inner[0].1;
    let unwrap = |a: f64| {
        let mut d = a - base;
        while d < -PI {
            d += 2.0 * PI;
        }
        while d >= PI {
            d -= 2.0 * PI;
        }
        d
    };
    let a_ang = |i: usize| -> f64 {
        if i == na {
            2.0 * PI
        } else {
            (inner[i].1 - base).rem_euclid(2.0 * PI)
        }
    };
    let b0 = unwrap(outer[j0].1);
    let b_ang = |j: usize| -> f64 {
        let k = (j0 + j) % nb;
        let mut d = (outer[k].1 - outer[j0].1).rem_euclid(2.0 * PI);
        if j == nb {
            d = 2.0 * PI;
        }
        b0 + d
    };
    let (mut i, mut j) = (0, 0);
    while i < na || j < nb {
        let advance_inner = if i == na {
            false
        } else if j == nb {
            true
        } else {
            // pick the diagonal closer in angle
            a_ang(i + 1) <= b_ang(j + 1)
        };
        let ai = inner[i % na].0;
        let bj = outer[(j0 + j) % nb].0;
        if advance_inner {
            tris.push([ai, bj, inner[(i + 1) % na].0]);
            i += 1;
        } else {
            tris.push([ai, bj, outer[(j0 + j + 1) % nb].0]);
            j += 1;
        }
    }
}

struct DiskMesh {
    points: Vec<(f64, f64)>,
    triangles: Vec<[usize; 3]>,
}

fn disk_triangulation(spec: &TankSpec, size: &dyn Fn(f64, f64) -> f64, electrode_angles: &[f64]) -> DiskMesh {
    let rt = spec.radius;
    let h_fine = spec.fine_size();
    let h_max = COARSE_RATIO * h_fine;
    let r = spec.electrode_radius;
    // radial size: finest anywhere on the ring of electrodes
    let h_radial = |rho: f64| (h_fine + GRADING * ((rt - rho) - r).max(0.0)).min(h_max);
    let radii = graded_points(0.0, rt, &h_radial);

    let mut points = vec![(0.0, 0.0)];
    let mut rings: Vec<Vec<(usize, f64)>> = Vec::new();
    for (k, &rho) in radii.iter().enumerate().skip(1) {
        let is_outer = k == radii.len() - 1;
        let h_arc = |phi: f64| size(rho * phi.cos(), rho * phi.sin()) / rho;
        let angles = if is_outer {
            let start = electrode_angles[0];
            let mut anchors = electrode_angles.to_vec();
            anchors.push(start + 2.0 * PI);
            let pts = anchored_points(start, start + 2.0 * PI, &anchors, h_fine / rho, (r + h_fine) / rho, &h_arc);
            let mut a: Vec<f64> = pts[..pts.len() - 1].iter().map(|x| x.rem_euclid(2.0 * PI)).collect();
            a.sort_by(f64::total_cmp);
            a
        } else {
            let breaks: &[f64] = if rt - rho < 2.0 * r { electrode_angles } else { &[] };
            graded_circle(breaks, &h_arc, if k == 1 { 6 } else { 8 })
        };
        let ring: Vec<(usize, f64)> = angles
            .iter()
            .map(|&a| {
                points.push((rho * a.cos(), rho * a.sin()));
                (points.len() - 1, a)
            })
            .collect();
        rings.push(ring);
    }

    let mut triangles = Vec::new();
    let first = &rings[0];
    for i in 0..first.len() {
        triangles.push([0, first[i].0, first[(i + 1) % first.len()].0]);
    }
    for w in rings.windows(2) {
        stitch_rings(&w[0], &w[1], &mut triangles);
    }
    DiskMesh { points, triangles }
}

/// Generates a tetrahedral mesh of the water cylinder `{x²+y² ≤ radius²,
/// 0 ≤ z ≤ height}` refined toward the electrodes, together with the
/// electrode layout. The construction is deterministic.
pub fn generate_cylinder_tank(spec: &TankSpec) -> Result<(Mesh, ElectrodeLayout)> {
    spec.validate()?;
    let rt = spec.radius;
    let r = spec.electrode_radius;
    let h_fine = spec.fine_size();
    let h_max = COARSE_RATIO * h_fine;
    let centers = spec.electrode_centers();
    let centers_xy: Vec<(f64, f64)> = centers.iter().map(|&(phi, _)| (rt * phi.cos(), rt * phi.sin())).collect();

    let size_xy = |x: f64, y: f64| {
        let d = centers_xy
            .iter()
            .map(|&(cx, cy)| ((x - cx).powi(2) + (y - cy).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min);
        (h_fine + GRADING * (d - r).max(0.0)).min(h_max)
    };
    let mut angles: Vec<f64> = centers.iter().map(|c| c.0).collect();
    angles.sort_by(f64::total_cmp);
    angles.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    let disk = disk_triangulation(spec, &size_xy, &angles);

    let ring_heights: Vec<f64> = spec.rings.iter().map(|r| r.height).collect();
    let h_z = |z: f64| {
        let d = ring_heights.iter().map(|&zr| (z - zr).abs()).fold(f64::INFINITY, f64::min);
        (h_fine + GRADING * (d - r).max(0.0)).min(h_max)
    };
    let layers = anchored_points(0.0, spec.height, &ring_heights, h_fine, r + h_fine, &h_z);

    let n2 = disk.points.len();
    let n_nodes = n2 * layers.len();
    if n_nodes > spec.node_budget {
        return Err(Error::Resource(format!(
            "refinement level {} needs {n_nodes} nodes, budget is {}",
            spec.refinement_level, spec.node_budget
        )));
    }

    let mut nodes = Vec::with_capacity(n_nodes);
    for &z in &layers {
        for &(x, y) in &disk.points {
            nodes.push(Vec3::new(x, y, z));
        }
    }
    let mut tets = Vec::with_capacity(3 * disk.triangles.len() * (layers.len() - 1));
    for k in 0..layers.len() - 1 {
        let (lo, hi) = (k * n2, (k + 1) * n2);
        for tri in &disk.triangles {
            let mut v = *tri;
            v.sort_unstable();
            let [a, b, c] = v;
            // consistent diagonals: each lateral quad is split from its
            // lower-index bottom vertex to its higher-index top vertex
            tets.push([lo + a, lo + b, lo + c, hi + c]);
            tets.push([lo + a, lo + b, hi + b, hi + c]);
            tets.push([lo + a, hi + a, hi + b, hi + c]);
        }
    }
    let regions = tets
        .iter()
        .map(|t| match spec.inner_region_radius {
            Some(ri) => {
                let c = t.iter().fold(Vec3::zeros(), |s, &i| s + nodes[i]) / 4.0;
                i32::from(c.x.hypot(c.y) < ri)
            }
            None => 0,
        })
        .collect();
    let mesh = Mesh::new(nodes, tets, regions, None)?;

    let geoms: Vec<ElectrodeGeometry> = centers
        .iter()
        .map(|&(phi, z)| ElectrodeGeometry {
            center: Vec3::new(rt * phi.cos(), rt * phi.sin(), z),
            axis: Vec3::new(phi.cos(), phi.sin(), 0.0),
            radius: r,
        })
        .collect();
    let n_el = geoms.len();
    let layout = ElectrodeLayout::new(&mesh, &geoms, vec![None; n_el], Vec3::zeros())
        .map_err(|e| Error::Config(format!("electrode layout: {e}")))?;
    Ok((mesh, layout))
}

/// Uniform box mesh `[0, size.x] × [0, size.y] × [0, size.z]` with six
/// tetrahedra per cell (Kuhn subdivision). Intended for small test problems.
pub fn generate_box_mesh(size: [f64; 3], divisions: [usize; 3]) -> Result<Mesh> {
    let [nx, ny, nz] = divisions;
    if nx == 0 || ny == 0 || nz == 0 || size.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Config("box mesh needs positive size and divisions".into()));
    }
    let idx = |i: usize, j: usize, k: usize| (k * (ny + 1) + j) * (nx + 1) + i;
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                nodes.push(Vec3::new(
                    size[0] * i as f64 / nx as f64,
                    size[1] * j as f64 / ny as f64,
                    size[2] * k as f64 / nz as f64,
                ));
            }
        }
    }
    const PATHS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut tets = Vec::with_capacity(6 * nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                for path in PATHS {
                    let mut c = [i, j, k];
                    let mut t = [idx(i, j, k); 4];
                    for (s, &axis) in path.iter().enumerate() {
                        c[axis] += 1;
                        t[s + 1] = idx(c[0], c[1], c[2]);
                    }
                    tets.push(t);
                }
            }
        }
    }
    let n = tets.len();
    Mesh::new(nodes, tets, vec![0; n], None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graded_points_hit_endpoints_and_follow_size() {
        let p = graded_points(0.0, 1.0, &|_| 0.1);
        assert_eq!(p.len(), 11);
        assert_eq!(p[0], 0.0);
        assert_eq!(*p.last().unwrap(), 1.0);
        assert!((p[3] - 0.3).abs() < 1e-12);
        let q = graded_points(0.0, 1.0, &|x| 0.01 + 0.3 * x);
        assert!(q[1] - q[0] < q[q.len() - 1] - q[q.len() - 2]);
    }

    #[test]
    fn circle_contains_breakpoints() {
        let br = [0.3, 2.0, 5.5];
        let a = graded_circle(&br, &|_| 0.2, 3);
        for b in br {
            assert!(a.iter().any(|&x| (x - b).abs() < 1e-14));
        }
        assert!(a.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn rejects_overlapping_electrodes() {
        let spec = TankSpec::single_ring(0.02, 0.043, 16, 0.005, 0);
        assert!(matches!(generate_cylinder_tank(&spec), Err(Error::Config(_))));
        let tall = TankSpec::single_ring(0.115, 0.008, 16, 0.005, 0);
        assert!(matches!(generate_cylinder_tank(&tall), Err(Error::Config(_))));
    }

    #[test]
    fn box_mesh_volume_and_faces() {
        let m = generate_box_mesh([1.0, 2.0, 0.5], [2, 3, 2]).unwrap();
        assert_eq!(m.n_tets(), 6 * 12);
        assert!((m.volume() - 1.0).abs() < 1e-14);
        assert_eq!(m.boundary_faces().len(), 2 * 2 * (6 + 4 + 6));
        assert!((m.boundary_area() - 2.0 * (2.0 + 0.5 + 1.0)).abs() < 1e-13);
    }

    #[test]
    fn node_budget_is_enforced() {
        let mut spec = TankSpec::single_ring(0.115, 0.043, 16, 0.005, 1);
        spec.node_budget = 100;
        assert!(matches!(generate_cylinder_tank(&spec), Err(Error::Resource(_))));
    }
}
