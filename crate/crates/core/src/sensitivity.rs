//! Jacobians of the stacked electrode potentials with respect to nodal
//! conductivities, contact peaks and electrode angles.
//!
//! Every derivative is sampled against auxiliary solutions: for a parameter
//! direction with bilinear-form derivative `B'`, `Ĩ·D U(I) = −B'((u,U),(ũ,Ũ))`,
//! and the full derivative is recovered from the samples of a set `Ĩ`
//! spanning the mean-free subspace.

use std::io::Write;

use nalgebra::{DMatrix, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{CurrentPatternSet, ForwardSolution, ForwardSystem};
use crate::mesh::MoveDirection;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JacobianKind {
    Sigma,
    Zeta,
    Theta,
    Phi,
    /// Horizontal concatenation of other blocks.
    Combined,
}

/// Dense `MN × p` derivative matrix of the measurement vector.
#[derive(Debug, Clone)]
pub struct JacobianBlock {
    pub kind: JacobianKind,
    pub matrix: DMatrix<f64>,
    /// Identifier of the linearization point.
    pub linearization: String,
    pub electrodes: usize,
    pub patterns: usize,
}

/// Sidecar description written next to an exported Jacobian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobianDescriptor {
    pub kind: JacobianKind,
    pub linearization: String,
    #[serde(rename = "M")]
    pub electrodes: usize,
    #[serde(rename = "N")]
    pub patterns: usize,
    pub p: usize,
}

impl JacobianBlock {
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }
    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    /// Concatenates blocks sharing a linearization point.
    pub fn hstack(blocks: &[&JacobianBlock]) -> Result<JacobianBlock> {
        let first = blocks.first().ok_or_else(|| Error::Contract("no Jacobian blocks given".into()))?;
        let rows = first.rows();
        for b in blocks {
            if b.rows() != rows {
                return Err(Error::Contract(format!("Jacobian row counts differ: {} vs {rows}", b.rows())));
            }
            if b.linearization != first.linearization {
                return Err(Error::Contract("Jacobian blocks have different linearization points".into()));
            }
        }
        let cols: usize = blocks.iter().map(|b| b.cols()).sum();
        let mut matrix = DMatrix::zeros(rows, cols);
        let mut c0 = 0;
        for b in blocks {
            matrix.columns_mut(c0, b.cols()).copy_from(&b.matrix);
            c0 += b.cols();
        }
        let kind = if blocks.len() == 1 { first.kind } else { JacobianKind::Combined };
        Ok(JacobianBlock {
            kind,
            matrix,
            linearization: first.linearization.clone(),
            electrodes: first.electrodes,
            patterns: first.patterns,
        })
    }

    pub fn descriptor(&self) -> JacobianDescriptor {
        JacobianDescriptor {
            kind: self.kind,
            linearization: self.linearization.clone(),
            electrodes: self.electrodes,
            patterns: self.patterns,
            p: self.cols(),
        }
    }

    /// Writes the matrix as headerless CSV, one row per measurement.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        for i in 0..self.rows() {
            let row: Vec<String> = self.matrix.row(i).iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Solutions and sampling weights shared by all Jacobian blocks at one
/// linearization point.
#[derive(Debug)]
pub struct Sensitivity<'s, 'a> {
    system: &'s ForwardSystem<'a>,
    solution: &'s ForwardSolution,
    aux: ForwardSolution,
    /// Maps samples `Ĩᵀ dU` back to `dU`: the pseudo-inverse of `Ĩᵀ`.
    weights: DMatrix<f64>,
}

impl<'s, 'a> Sensitivity<'s, 'a> {
    /// Uses the measurement patterns as auxiliary basis when they span the
    /// mean-free subspace and the canonical basis `e_k − e_M` otherwise.
    pub fn new(system: &'s ForwardSystem<'a>, solution: &'s ForwardSolution) -> Result<Self> {
        let aux = if solution.patterns.spans_mean_free() {
            solution.patterns.clone()
        } else {
            CurrentPatternSet::canonical(system.layout().len())?
        };
        Self::with_aux_basis(system, solution, &aux)
    }

    pub fn with_aux_basis(
        system: &'s ForwardSystem<'a>,
        solution: &'s ForwardSolution,
        aux_basis: &CurrentPatternSet,
    ) -> Result<Self> {
        if solution.linearization() != system.linearization() {
            return Err(Error::Contract("forward solution was computed at a different linearization point".into()));
        }
        if !aux_basis.spans_mean_free() {
            return Err(Error::Contract("auxiliary patterns do not span the mean-free subspace".into()));
        }
        let aux = if aux_basis == &solution.patterns { solution.clone() } else { system.solve(aux_basis)? };
        let weights = aux_basis
            .currents()
            .transpose()
            .pseudo_inverse(1e-12 * aux_basis.currents().amax())
            .map_err(|e| Error::Numeric(e.to_string()))?;
        Ok(Self { system, solution, aux, weights })
    }

    fn block(&self, kind: JacobianKind, matrix: DMatrix<f64>) -> JacobianBlock {
        JacobianBlock {
            kind,
            matrix,
            linearization: self.system.linearization().to_string(),
            electrodes: self.system.layout().len(),
            patterns: self.solution.patterns.len(),
        }
    }

    /// Writes `dU_n = −W s_n` into one column of the Jacobian, where
    /// `samples[(n, k)] = B'(x_n, x̃_k)`.
    fn expand(&self, samples: &DMatrix<f64>, column: &mut [f64]) {
        let m = self.weights.nrows();
        for n in 0..samples.nrows() {
            let du = -(&self.weights * samples.row(n).transpose());
            column[n * m..(n + 1) * m].copy_from_slice(du.as_slice());
        }
    }

    /// Derivatives with respect to the nodal conductivities.
    pub fn sigma(&self) -> JacobianBlock {
        let mesh = self.system.mesh();
        let n_nodes = mesh.n_nodes();
        let (np, nk) = (self.solution.u.ncols(), self.aux.u.ncols());
        let mut node_tets = vec![Vec::new(); n_nodes];
        for (t, tet) in mesh.tets().iter().enumerate() {
            for &v in tet {
                node_tets[v].push(t);
            }
        }
        let grads = |u: &DMatrix<f64>, t: usize| -> DMatrix<f64> {
            let tet = mesh.tets()[t];
            let g = &mesh.geometry()[t].grads;
            DMatrix::from_fn(3, u.ncols(), |d, c| (0..4).map(|a| g[a][d] * u[(tet[a], c)]).sum())
        };
        let rows = self.weights.nrows() * np;
        let mut j = DMatrix::zeros(rows, n_nodes);
        j.as_mut_slice().par_chunks_mut(rows).enumerate().for_each(|(node, col)| {
            let mut s = DMatrix::zeros(np, nk);
            for &t in &node_tets[node] {
                let vol = mesh.geometry()[t].volume;
                let gu = grads(&self.solution.u, t);
                let ga = grads(&self.aux.u, t);
                s += gu.transpose() * ga * (0.25 * vol);
            }
            self.expand(&s, col);
        });
        self.block(JacobianKind::Sigma, j)
    }

    /// Samples of `∫ c(x) (U−u)(Ũ−ũ) dS` over electrode `m` for per-point
    /// coefficients `c`.
    fn boundary_samples(&self, m: usize, coef: impl Fn(usize, usize, &Vector3<f64>) -> f64) -> DMatrix<f64> {
        let (np, nk) = (self.solution.u.ncols(), self.aux.u.ncols());
        let mut s = DMatrix::zeros(np, nk);
        let ec = &self.system.contacts()[m];
        let mut du = vec![0.0; np];
        let mut da = vec![0.0; nk];
        for (f, (fq, _)) in ec.faces.iter().enumerate() {
            for (q, p) in fq.points.iter().enumerate() {
                let c = coef(f, q, &fq.normal);
                if c == 0.0 {
                    continue;
                }
                for (n, d) in du.iter_mut().enumerate() {
                    let u: f64 = (0..3).map(|i| p.bary[i] * self.solution.u[(fq.nodes[i], n)]).sum();
                    *d = self.solution.electrode_potentials[(m, n)] - u;
                }
                for (k, d) in da.iter_mut().enumerate() {
                    let u: f64 = (0..3).map(|i| p.bary[i] * self.aux.u[(fq.nodes[i], k)]).sum();
                    *d = self.aux.electrode_potentials[(m, k)] - u;
                }
                let wc = p.weight * c;
                for n in 0..np {
                    for k in 0..nk {
                        s[(n, k)] += wc * du[n] * da[k];
                    }
                }
            }
        }
        s
    }

    /// Derivatives with respect to the peak contact conductivities.
    pub fn zeta(&self) -> JacobianBlock {
        let m_count = self.system.layout().len();
        let rows = m_count * self.solution.u.ncols();
        let mut j = DMatrix::zeros(rows, m_count);
        j.as_mut_slice().par_chunks_mut(rows).enumerate().for_each(|(m, col)| {
            let ec = &self.system.contacts()[m];
            let s = self.boundary_samples(m, |f, q, _| ec.faces[f].1[q]);
            self.expand(&s, col);
        });
        self.block(JacobianKind::Zeta, j)
    }

    /// Derivatives with respect to the polar or azimuthal angle of every
    /// electrode center.
    pub fn position(&self, dir: MoveDirection) -> Result<JacobianBlock> {
        let layout = self.system.layout();
        let contact = self.system.contact();
        let m_count = layout.len();
        for (m, e) in layout.electrodes().iter().enumerate() {
            e.center_tangent(dir).map_err(|err| Error::Contract(format!("electrode {m}: {err}")))?;
        }
        let rows = m_count * self.solution.u.ncols();
        let mut j = DMatrix::zeros(rows, m_count);
        j.as_mut_slice().par_chunks_mut(rows).enumerate().for_each(|(m, col)| {
            let e = layout.electrode(m);
            let ec = &self.system.contacts()[m];
            let peak = contact.peaks()[m];
            let s = self.boundary_samples(m, |f, q, normal| {
                if ec.faces[f].1[q] == 0.0 {
                    return 0.0;
                }
                let x = &ec.faces[f].0.points[q].x;
                let r = e.cylinder_coordinates(x).0;
                let grad = e.radial_direction(x) * (peak * contact.shape_derivative(r));
                let h = e.tangent_at(dir, normal).expect("tangents checked above");
                // moving the electrode along h changes ζ by −h·∇ζ
                -h.dot(&grad)
            });
            self.expand(&s, col);
        });
        let kind = match dir {
            MoveDirection::Polar => JacobianKind::Theta,
            MoveDirection::Azimuth => JacobianKind::Phi,
        };
        Ok(self.block(kind, j))
    }
}

pub fn jacobian_sigma(system: &ForwardSystem<'_>, solution: &ForwardSolution) -> Result<JacobianBlock> {
    Ok(Sensitivity::new(system, solution)?.sigma())
}

pub fn jacobian_zeta(system: &ForwardSystem<'_>, solution: &ForwardSolution) -> Result<JacobianBlock> {
    Ok(Sensitivity::new(system, solution)?.zeta())
}

pub fn jacobian_position(
    system: &ForwardSystem<'_>,
    solution: &ForwardSolution,
    dir: MoveDirection,
) -> Result<JacobianBlock> {
    Sensitivity::new(system, solution)?.position(dir)
}
