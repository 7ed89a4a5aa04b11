//! Smoothed total variation prior: the functional
//! `Ψ(w) = Σ_T |T| √(|∇w|² + T²) + ε/2 ‖w‖²` and its lagged-diffusivity
//! matrix `Θ(w)`, which satisfies `Θ(w) w = ∇Ψ(w)`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linsolve::{Ldlt, SymmetricBuilder, SymmetricMatrix};
use crate::mesh::Mesh;

pub const DEFAULT_SMOOTHING: f64 = 1e-6;
pub const DEFAULT_GAMMA_ONE_STEP: f64 = 1e-2;
pub const DEFAULT_GAMMA_LAGGED: f64 = 1e2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum EpsilonMode {
    /// Second smallest eigenvalue of `K/T`.
    Heuristic,
    Fixed(f64),
}

/// Θ assembly data for one mesh.
#[derive(Debug, Clone)]
pub struct Regularizer<'a> {
    mesh: &'a Mesh,
    smoothing: f64,
    epsilon: f64,
    /// `|T| ∇φ_a·∇φ_b` for the lower triangle of each element, row-major.
    local: Vec<[f64; 10]>,
}

const LOWER: [(usize, usize); 10] = [(0, 0), (1, 0), (1, 1), (2, 0), (2, 1), (2, 2), (3, 0), (3, 1), (3, 2), (3, 3)];

fn local_stiffness(mesh: &Mesh) -> Vec<[f64; 10]> {
    mesh.geometry()
        .iter()
        .map(|g| LOWER.map(|(a, b)| g.volume * g.grads[a].dot(&g.grads[b])))
        .collect()
}

fn weighted_stiffness(mesh: &Mesh, local: &[[f64; 10]], weight: impl Fn(usize) -> f64, shift: f64) -> Result<SymmetricMatrix> {
    let n = mesh.n_nodes();
    let mut b = SymmetricBuilder::with_capacity(n, 10 * mesh.n_tets() + n);
    for (t, tet) in mesh.tets().iter().enumerate() {
        let c = weight(t);
        for (k, &(a, bb)) in LOWER.iter().enumerate() {
            b.add(tet[a], tet[bb], c * local[t][k]);
        }
    }
    if shift != 0.0 {
        for i in 0..n {
            b.add(i, i, shift);
        }
    }
    b.build()
}

impl<'a> Regularizer<'a> {
    pub fn new(mesh: &'a Mesh, smoothing: f64, epsilon: EpsilonMode) -> Result<Self> {
        if !(smoothing > 0.0 && smoothing.is_finite()) {
            return Err(Error::Config(format!("smoothing parameter must be positive, got {smoothing}")));
        }
        let local = local_stiffness(mesh);
        let epsilon = match epsilon {
            EpsilonMode::Fixed(e) => {
                if !(e > 0.0 && e.is_finite()) {
                    return Err(Error::Config(format!("epsilon must be positive, got {e}")));
                }
                e
            }
            EpsilonMode::Heuristic => {
                let k = weighted_stiffness(mesh, &local, |_| 1.0 / smoothing, 0.0)?;
                epsilon_from_stiffness(&k)
            }
        };
        Ok(Self { mesh, smoothing, epsilon, local })
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn mesh(&self) -> &'a Mesh {
        self.mesh
    }

    fn gradient_norms(&self, w: &[f64]) -> Vec<f64> {
        (0..self.mesh.n_tets()).map(|t| self.mesh.gradient(t, w).norm()).collect()
    }

    /// `Θ(w)`: stiffness weighted by `1/√(|∇w|²+T²)` per element plus `εI`.
    pub fn theta(&self, w: &[f64]) -> Result<SymmetricMatrix> {
        self.check_len(w)?;
        let t2 = self.smoothing * self.smoothing;
        let g = self.gradient_norms(w);
        weighted_stiffness(self.mesh, &self.local, |t| 1.0 / (g[t] * g[t] + t2).sqrt(), self.epsilon)
    }

    /// `Θ(0) = K/T + εI`.
    pub fn theta_zero(&self) -> Result<SymmetricMatrix> {
        let inv = 1.0 / self.smoothing;
        weighted_stiffness(self.mesh, &self.local, |_| inv, self.epsilon)
    }

    pub fn psi(&self, w: &[f64]) -> Result<f64> {
        self.check_len(w)?;
        let t2 = self.smoothing * self.smoothing;
        let tv: f64 = (0..self.mesh.n_tets())
            .map(|t| {
                let g = self.mesh.gradient(t, w).norm_squared();
                self.mesh.geometry()[t].volume * (g + t2).sqrt()
            })
            .sum();
        Ok(tv + 0.5 * self.epsilon * w.iter().map(|v| v * v).sum::<f64>())
    }

    fn check_len(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.mesh.n_nodes() {
            return Err(Error::Contract(format!("field has {} values for {} nodes", w.len(), self.mesh.n_nodes())));
        }
        Ok(())
    }
}

pub fn theta_matrix(reg: &Regularizer<'_>, w: &[f64]) -> Result<SymmetricMatrix> {
    reg.theta(w)
}

pub fn psi_value(reg: &Regularizer<'_>, w: &[f64]) -> Result<f64> {
    reg.psi(w)
}

/// Second smallest eigenvalue of `K/T` for the unweighted stiffness `K`.
pub fn epsilon_heuristic(mesh: &Mesh, smoothing: f64) -> Result<f64> {
    Ok(Regularizer::new(mesh, smoothing, EpsilonMode::Heuristic)?.epsilon())
}

fn epsilon_from_stiffness(k: &SymmetricMatrix) -> f64 {
    match second_eigenvalue(k) {
        Ok(v) => v,
        Err(e) => {
            let fallback = 1e-8 * k.diagonal().iter().cloned().fold(0.0, f64::max);
            log::warn!("eigenvalue iteration failed ({e}); using epsilon = {fallback:e}");
            fallback
        }
    }
}

/// Smallest eigenvalue of a positive semidefinite matrix on the orthogonal
/// complement of the constant vector: block inverse iteration with a small
/// shift, deflation of constants and Rayleigh–Ritz extraction.
pub fn second_eigenvalue(k: &SymmetricMatrix) -> Result<f64> {
    const BLOCK: usize = 8;
    const MAX_ITER: usize = 300;
    let n = k.dim();
    if n < 2 {
        return Err(Error::Numeric("matrix too small for a second eigenvalue".into()));
    }
    if n <= BLOCK + 2 {
        let eig = SymmetricEigen::new(k.to_dense());
        let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        return Ok(ev[1]);
    }
    let dmax = k.diagonal().iter().cloned().fold(0.0, f64::max);
    let shift = 1e-10 * dmax;
    let mut sb = SymmetricBuilder::with_capacity(n, k.nnz_lower() + n);
    for (i, j, v) in k.lower_entries() {
        sb.add(i, j, v);
    }
    for i in 0..n {
        sb.add(i, i, shift);
    }
    let mut solver = Ldlt::new(sb.build()?)?;
    solver.set_refinement_steps(0);

    let deflate = |v: &mut DMatrix<f64>| {
        for mut col in v.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
    };
    // deterministic start vectors
    let mut v = DMatrix::from_fn(n, BLOCK, |i, j| ((i * (j + 3) + 7 * j) as f64 * 0.6180339887).sin());
    let mut last = f64::INFINITY;
    for it in 0..MAX_ITER {
        deflate(&mut v);
        let q = v.clone().qr().q();
        let mut kq = DMatrix::zeros(n, BLOCK);
        for j in 0..BLOCK {
            kq.column_mut(j).copy_from_slice(&k.mul_vec(q.column(j).as_slice()));
        }
        let h = q.transpose() * &kq;
        let h = (&h + h.transpose()) * 0.5;
        let eig = SymmetricEigen::new(h);
        let lambda = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if !lambda.is_finite() {
            return Err(Error::Numeric("non-finite Ritz value".into()));
        }
        if it > 2 && (lambda - last).abs() <= 1e-13 * lambda.abs() {
            if !(lambda > 0.0) {
                return Err(Error::Numeric(format!("second eigenvalue is not positive: {lambda:e}")));
            }
            return Ok(lambda);
        }
        last = lambda;
        // rotate to Ritz vectors and apply the inverse
        v = &q * eig.eigenvectors;
        solver.solve_columns(&mut v);
    }
    Err(Error::Numeric("eigenvalue iteration did not converge".into()))
}
