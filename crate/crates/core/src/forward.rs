//! Finite element solver for the smoothened complete electrode model.
//!
//! Unknowns are the nodal interior potential `u` and the coefficients of the
//! electrode potentials `U` in an orthonormal basis of the mean-free
//! subspace, so the system is symmetric positive definite and every solved
//! `U` sums to zero by construction.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linsolve::{Ldlt, SymmetricBuilder};
use crate::mesh::{ElectrodeLayout, FaceQuadrature, Mesh};

/// Default steepness of the contact profile.
pub const DEFAULT_TAU: f64 = 0.4;
/// Current amplitude of generated patterns (A).
pub const PATTERN_AMPLITUDE: f64 = 1e-3;

/// Nodal conductivity coefficients (S/m) in the piecewise linear basis.
#[derive(Debug, Clone, PartialEq)]
pub struct ConductivityField {
    values: Vec<f64>,
}

impl ConductivityField {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((j, v)) = values.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::Validation(format!("conductivity at node {j} must be positive, got {v}")));
        }
        Ok(Self { values })
    }

    pub fn constant(n: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.values.iter().map(|v| v * c).collect())
    }
}

/// Peak contact conductivities (S/m²) with the shared profile parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactState {
    peaks: Vec<f64>,
    radius: f64,
    tau: f64,
}

impl ContactState {
    pub fn new(peaks: Vec<f64>, radius: f64, tau: f64) -> Result<Self> {
        if let Some((m, v)) = peaks.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::Validation(format!("contact peak of electrode {m} must be positive, got {v}")));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Validation(format!("profile steepness must be positive, got {tau}")));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::Validation(format!("electrode radius must be positive, got {radius}")));
        }
        Ok(Self { peaks, radius, tau })
    }

    pub fn uniform(m: usize, peak: f64, radius: f64) -> Result<Self> {
        Self::new(vec![peak; m], radius, DEFAULT_TAU)
    }

    pub fn peaks(&self) -> &[f64] {
        &self.peaks
    }
    pub fn radius(&self) -> f64 {
        self.radius
    }
    pub fn tau(&self) -> f64 {
        self.tau
    }
    pub fn len(&self) -> usize {
        self.peaks.len()
    }
    pub fn is_empty(&self) -> bool {
        self.peaks.is_empty()
    }

    pub fn with_peaks(&self, peaks: Vec<f64>) -> Result<Self> {
        Self::new(peaks, self.radius, self.tau)
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        self.with_peaks(self.peaks.iter().map(|v| v * c).collect())
    }

    /// Unit-peak profile `exp(τ − τR²/(R²−r²))`, zero for `r ≥ R`.
    pub fn shape(&self, r: f64) -> f64 {
        shape(r, self.radius, self.tau)
    }

    /// Radial derivative of [`Self::shape`].
    pub fn shape_derivative(&self, r: f64) -> f64 {
        let s = self.shape(r);
        if s == 0.0 {
            return 0.0;
        }
        let d = self.radius * self.radius - r * r;
        s * (-2.0 * self.tau * self.radius * self.radius * r / (d * d))
    }
}

fn shape(r: f64, radius: f64, tau: f64) -> f64 {
    if r >= radius {
        return 0.0;
    }
    let r2 = radius * radius;
    (tau - tau * r2 / (r2 - r * r)).exp()
}

/// Contact conductivity of electrode `m` at distance `r` from its axis.
pub fn contact_profile(contact: &ContactState, m: usize, r: f64) -> f64 {
    contact.peaks[m] * contact.shape(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternKind {
    Adjacent,
    Opposite,
    Fourier,
    Custom,
}

impl std::str::FromStr for PatternKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adjacent" => Ok(Self::Adjacent),
            "opposite" => Ok(Self::Opposite),
            "fourier" => Ok(Self::Fourier),
            "custom" => Ok(Self::Custom),
            _ => Err(Error::Config(format!("unknown pattern kind `{s}`"))),
        }
    }
}

/// Current patterns as the columns of an `M × N` matrix (A).
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentPatternSet {
    kind: PatternKind,
    currents: DMatrix<f64>,
}

impl CurrentPatternSet {
    pub fn custom(currents: DMatrix<f64>) -> Result<Self> {
        Self::with_kind(PatternKind::Custom, currents)
    }

    fn with_kind(kind: PatternKind, currents: DMatrix<f64>) -> Result<Self> {
        if currents.nrows() < 2 || currents.ncols() == 0 {
            return Err(Error::Config("pattern set needs at least two electrodes and one pattern".into()));
        }
        for (n, col) in currents.column_iter().enumerate() {
            let scale = col.amax();
            if col.sum().abs() > 1e-14 * scale.max(f64::MIN_POSITIVE) {
                return Err(Error::Validation(format!("current pattern {n} is not mean-free")));
            }
        }
        Ok(Self { kind, currents })
    }

    pub fn kind(&self) -> PatternKind {
        self.kind
    }
    pub fn currents(&self) -> &DMatrix<f64> {
        &self.currents
    }
    pub fn electrodes(&self) -> usize {
        self.currents.nrows()
    }
    pub fn len(&self) -> usize {
        self.currents.ncols()
    }
    pub fn is_empty(&self) -> bool {
        self.currents.ncols() == 0
    }

    /// Whether the patterns span the whole mean-free subspace.
    pub fn spans_mean_free(&self) -> bool {
        let m = self.electrodes();
        if self.len() < m - 1 {
            return false;
        }
        let sv = self.currents.clone().svd(false, false).singular_values;
        let tol = sv.max() * 1e-10;
        sv.iter().filter(|&&s| s > tol).count() == m - 1
    }

    /// Canonical mean-free basis `e_k − e_M`, `k = 1..M−1`, at the pattern
    /// amplitude.
    pub fn canonical(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::Config(format!("need at least two electrodes, got {m}")));
        }
        let mut c = DMatrix::zeros(m, m - 1);
        for k in 0..m - 1 {
            c[(k, k)] = PATTERN_AMPLITUDE;
            c[(m - 1, k)] = -PATTERN_AMPLITUDE;
        }
        Self::with_kind(PatternKind::Custom, c)
    }
}

/// Standard current patterns for `m` electrodes numbered consecutively
/// around a ring.
pub fn make_patterns(kind: PatternKind, m: usize) -> Result<CurrentPatternSet> {
    let a = PATTERN_AMPLITUDE;
    let currents = match kind {
        PatternKind::Adjacent => {
            if m < 4 || m % 2 != 0 {
                return Err(Error::Config(format!("adjacent patterns need an even electrode count ≥ 4, got {m}")));
            }
            let mut c = DMatrix::zeros(m, m / 2);
            for p in 0..m / 2 {
                c[(2 * p, p)] = a;
                c[((2 * p + 2) % m, p)] = -a;
            }
            c
        }
        PatternKind::Opposite => {
            if m < 4 || m % 4 != 0 {
                return Err(Error::Config(format!("opposite patterns need an electrode count divisible by 4, got {m}")));
            }
            let mut c = DMatrix::zeros(m, m / 4);
            for p in 0..m / 4 {
                c[(2 * p, p)] = a;
                c[(2 * p + m / 2, p)] = -a;
            }
            c
        }
        PatternKind::Fourier => {
            if m < 2 || m % 2 != 0 {
                return Err(Error::Config(format!("Fourier patterns need an even electrode count, got {m}")));
            }
            let mut c = DMatrix::zeros(m, m - 1);
            for e in 0..m {
                for k in 1..=m / 2 {
                    c[(e, k - 1)] = a * (2.0 * PI * (e * k) as f64 / m as f64).cos();
                }
                for l in 1..m / 2 {
                    c[(e, m / 2 + l - 1)] = a * (2.0 * PI * (e * l) as f64 / m as f64).sin();
                }
            }
            // remove rounding residue from the trigonometric sums
            for mut col in c.column_iter_mut() {
                let mean = col.mean();
                col.add_scalar_mut(-mean);
            }
            c
        }
        PatternKind::Custom => {
            return Err(Error::Config("custom patterns must be given explicitly".into()));
        }
    };
    CurrentPatternSet::with_kind(kind, currents)
}

/// Orthonormal basis of the mean-free subspace of ℝ^M, obtained by
/// Gram–Schmidt on `e_k − e_M`.
pub fn mean_free_basis(m: usize) -> DMatrix<f64> {
    let mut q = DMatrix::<f64>::zeros(m, m - 1);
    for k in 0..m - 1 {
        let mut v = DVector::zeros(m);
        v[k] = 1.0;
        v[m - 1] = -1.0;
        for _ in 0..2 {
            for j in 0..k {
                let c = q.column(j).dot(&v);
                v -= q.column(j) * c;
            }
        }
        let nv = v.norm();
        q.column_mut(k).copy_from(&(v / nv));
    }
    q
}

/// Contact quadrature of one electrode: per support face, the point values
/// of the unit-peak profile.
#[derive(Debug, Clone)]
pub(crate) struct ElectrodeContact {
    pub faces: Vec<(FaceQuadrature, Vec<f64>)>,
}

pub(crate) fn electrode_contacts(layout: &ElectrodeLayout, contact: &ContactState) -> Vec<ElectrodeContact> {
    layout
        .electrodes()
        .iter()
        .map(|e| ElectrodeContact {
            faces: e
                .quadrature()
                .iter()
                .map(|fq| {
                    let vals = fq
                        .points
                        .iter()
                        .map(|p| if e.contains(&p.x) { contact.shape(e.cylinder_coordinates(&p.x).0) } else { 0.0 })
                        .collect();
                    (fq.clone(), vals)
                })
                .collect(),
        })
        .collect()
}

/// Assembled and factorized system for one `(σ, ζ)` pair.
#[derive(Debug)]
pub struct ForwardSystem<'a> {
    mesh: &'a Mesh,
    layout: &'a ElectrodeLayout,
    sigma: ConductivityField,
    contact: ContactState,
    basis: DMatrix<f64>,
    contacts: Vec<ElectrodeContact>,
    ldlt: Ldlt,
    id: String,
}

fn linearization_id(mesh: &Mesh, layout: &ElectrodeLayout, sigma: &ConductivityField, contact: &ContactState) -> String {
    let mut h = Sha256::new();
    h.update(mesh.content_hash().as_bytes());
    for e in layout.electrodes() {
        for v in e.center.iter().chain(e.axis.iter()) {
            h.update(v.to_le_bytes());
        }
        h.update(e.radius.to_le_bytes());
    }
    for v in sigma.values() {
        h.update(v.to_le_bytes());
    }
    for v in contact.peaks() {
        h.update(v.to_le_bytes());
    }
    h.update(contact.radius().to_le_bytes());
    h.update(contact.tau().to_le_bytes());
    crate::mesh::hex_string(&h.finalize())
}

/// Assembles the Galerkin matrix of the model bilinear form and factorizes
/// it.
pub fn assemble<'a>(
    mesh: &'a Mesh,
    layout: &'a ElectrodeLayout,
    sigma: &ConductivityField,
    contact: &ContactState,
) -> Result<ForwardSystem<'a>> {
    let n = mesh.n_nodes();
    let m = layout.len();
    if sigma.len() != n {
        return Err(Error::Contract(format!("conductivity has {} values for {n} nodes", sigma.len())));
    }
    if contact.len() != m {
        return Err(Error::Contract(format!("contact state has {} peaks for {m} electrodes", contact.len())));
    }
    for (k, e) in layout.electrodes().iter().enumerate() {
        if (e.radius - contact.radius()).abs() > 1e-12 * e.radius {
            return Err(Error::Contract(format!(
                "electrode {k} radius {} differs from the contact profile radius {}",
                e.radius,
                contact.radius()
            )));
        }
    }
    let basis = mean_free_basis(m);
    let contacts = electrode_contacts(layout, contact);
    let dim = n + m - 1;
    let mut b = SymmetricBuilder::with_capacity(dim, 10 * mesh.n_tets());

    let s = sigma.values();
    for (t, tet) in mesh.tets().iter().enumerate() {
        let g = &mesh.geometry()[t];
        let st = 0.25 * (s[tet[0]] + s[tet[1]] + s[tet[2]] + s[tet[3]]) * g.volume;
        for a in 0..4 {
            for c in 0..=a {
                b.add(tet[a], tet[c], st * g.grads[a].dot(&g.grads[c]));
            }
        }
    }

    let mut electrode_block = DMatrix::<f64>::zeros(m - 1, m - 1);
    for (e, ec) in contacts.iter().enumerate() {
        let peak = contact.peaks()[e];
        let q = basis.row(e);
        let mut total = 0.0;
        for (fq, vals) in &ec.faces {
            let mut sm = [[0.0; 3]; 3];
            let mut sv = [0.0; 3];
            for (p, &z) in fq.points.iter().zip(vals) {
                if z == 0.0 {
                    continue;
                }
                let wz = p.weight * peak * z;
                for i in 0..3 {
                    sv[i] += wz * p.bary[i];
                    for j in 0..3 {
                        sm[i][j] += wz * p.bary[i] * p.bary[j];
                    }
                }
                total += wz;
            }
            for i in 0..3 {
                for j in 0..=i {
                    if sm[i][j] != 0.0 {
                        b.add(fq.nodes[i], fq.nodes[j], sm[i][j]);
                    }
                }
                if sv[i] != 0.0 {
                    for k in 0..m - 1 {
                        b.add(n + k, fq.nodes[i], -sv[i] * q[k]);
                    }
                }
            }
        }
        if !(total > 1e-12 * peak * PI * contact.radius().powi(2)) {
            return Err(Error::Assembly { electrode: e });
        }
        electrode_block += q.transpose() * q * total;
    }
    for k in 0..m - 1 {
        for l in 0..=k {
            b.add(n + k, n + l, electrode_block[(k, l)]);
        }
    }
    let ldlt = Ldlt::new(b.build()?)?;
    let id = linearization_id(mesh, layout, sigma, contact);
    Ok(ForwardSystem { mesh, layout, sigma: sigma.clone(), contact: contact.clone(), basis, contacts, ldlt, id })
}

/// Interior and electrode potentials for every pattern of a set.
#[derive(Debug, Clone)]
pub struct ForwardSolution {
    /// Nodal potentials, one column per pattern.
    pub u: DMatrix<f64>,
    /// Electrode potentials (mean-free), one column per pattern.
    pub electrode_potentials: DMatrix<f64>,
    pub patterns: CurrentPatternSet,
    linearization: String,
}

impl ForwardSolution {
    /// Stacked pattern-major measurement vector.
    pub fn measurements(&self) -> DVector<f64> {
        DVector::from_column_slice(self.electrode_potentials.as_slice())
    }

    /// Identifier of the `(mesh, layout, σ, ζ)` the solution belongs to.
    pub fn linearization(&self) -> &str {
        &self.linearization
    }
}

impl<'a> ForwardSystem<'a> {
    pub fn mesh(&self) -> &'a Mesh {
        self.mesh
    }
    pub fn layout(&self) -> &'a ElectrodeLayout {
        self.layout
    }
    pub fn sigma(&self) -> &ConductivityField {
        &self.sigma
    }
    pub fn contact(&self) -> &ContactState {
        &self.contact
    }
    pub fn linearization(&self) -> &str {
        &self.id
    }
    pub(crate) fn contacts(&self) -> &[ElectrodeContact] {
        &self.contacts
    }
    /// Orthonormal mean-free basis used for the electrode unknowns.
    pub fn electrode_basis(&self) -> &DMatrix<f64> {
        &self.basis
    }
    pub fn dim(&self) -> usize {
        self.ldlt.dim()
    }
    pub fn matrix(&self) -> &crate::linsolve::SymmetricMatrix {
        self.ldlt.matrix()
    }

    /// Right-hand sides `[0; Qᵀ I]` for a pattern set.
    pub fn load_vectors(&self, patterns: &CurrentPatternSet) -> Result<DMatrix<f64>> {
        let m = self.layout.len();
        if patterns.electrodes() != m {
            return Err(Error::Contract(format!(
                "patterns are defined for {} electrodes, layout has {m}",
                patterns.electrodes()
            )));
        }
        let n = self.mesh.n_nodes();
        let mut rhs = DMatrix::zeros(n + m - 1, patterns.len());
        let proj = self.basis.transpose() * patterns.currents();
        rhs.rows_mut(n, m - 1).copy_from(&proj);
        Ok(rhs)
    }

    /// Full solution vectors `[u; α]`, one column per right-hand side.
    pub fn solve_raw(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = rhs.clone();
        self.ldlt.solve_columns(&mut x);
        x
    }

    pub fn solve(&self, patterns: &CurrentPatternSet) -> Result<ForwardSolution> {
        let rhs = self.load_vectors(patterns)?;
        let x = self.solve_raw(&rhs);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("forward solve produced non-finite values".into()));
        }
        let n = self.mesh.n_nodes();
        let m = self.layout.len();
        let a = self.matrix();
        for j in 0..x.ncols() {
            let ax = a.mul_vec(x.column(j).as_slice());
            let rn: f64 = ax.iter().zip(rhs.column(j).iter()).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            let bn = rhs.column(j).norm();
            if rn > 1e-8 * bn.max(f64::MIN_POSITIVE) && bn > 0.0 {
                return Err(Error::Numeric(format!("forward solve residual {:.3e} for pattern {j}", rn / bn)));
            }
        }
        let u = x.rows(0, n).into_owned();
        let electrode_potentials = &self.basis * x.rows(n, m - 1);
        Ok(ForwardSolution { u, electrode_potentials, patterns: patterns.clone(), linearization: self.id.clone() })
    }
}

/// Convenience: assemble, solve and stack the measurements.
pub fn simulate(
    mesh: &Mesh,
    layout: &ElectrodeLayout,
    sigma: &ConductivityField,
    contact: &ContactState,
    patterns: &CurrentPatternSet,
) -> Result<DVector<f64>> {
    Ok(assemble(mesh, layout, sigma, contact)?.solve(patterns)?.measurements())
}

/// Writes measurements as CSV `pattern,electrode,voltage`, zero-based,
/// pattern-major.
pub fn write_measurements_csv(mut out: impl Write, data: &DVector<f64>, m: usize) -> Result<()> {
    if m == 0 || data.len() % m != 0 {
        return Err(Error::Contract(format!("measurement length {} is not a multiple of {m}", data.len())));
    }
    writeln!(out, "pattern,electrode,voltage")?;
    for (i, v) in data.iter().enumerate() {
        writeln!(out, "{},{},{:e}", i / m, i % m, v)?;
    }
    Ok(())
}

/// Reads a measurement CSV written by [`write_measurements_csv`]; returns
/// the stacked vector and the electrode count.
pub fn read_measurements_csv(input: impl BufRead) -> Result<(DVector<f64>, usize)> {
    let mut rows = Vec::new();
    for (ln, line) in input.lines().enumerate() {
        let line = line?;
        if ln == 0 {
            if line.trim() != "pattern,electrode,voltage" {
                return Err(Error::Parse(format!("unexpected measurement header `{line}`")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Parse(format!("malformed measurement row {}: `{line}`", ln + 1));
        if f.len() != 3 {
            return Err(bad());
        }
        let p: usize = f[0].trim().parse().map_err(|_| bad())?;
        let e: usize = f[1].trim().parse().map_err(|_| bad())?;
        let v: f64 = f[2].trim().parse().map_err(|_| bad())?;
        rows.push((p, e, v));
    }
    let m = rows.iter().map(|r| r.1).max().map_or(0, |x| x + 1);
    let np = rows.iter().map(|r| r.0).max().map_or(0, |x| x + 1);
    if m == 0 || rows.len() != m * np {
        return Err(Error::Parse("measurement table is incomplete".into()));
    }
    let mut data = DVector::from_element(m * np, f64::NAN);
    for (p, e, v) in rows {
        data[p * m + e] = v;
    }
    if data.iter().any(|v| v.is_nan()) {
        return Err(Error::Parse("measurement table has duplicate rows".into()));
    }
    Ok((data, m))
}
