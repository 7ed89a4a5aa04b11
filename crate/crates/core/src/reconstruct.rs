//! Linearized reconstruction of a conductivity perturbation `w` from
//! difference data `y ≈ J_σ w`, with a smoothness (one-step) or total
//! variation (lagged diffusivity) prior and optional data projection.
//!
//! With whitening `B = C P` (or `B = C`), `A = B J_σ` and `b = B y`, each
//! step solves `(AᵀA + γΘ) w = Aᵀb` through the Woodbury form
//! `w = Θ⁻¹Aᵀ(γI + AΘ⁻¹Aᵀ)⁻¹ b`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linsolve::{Ldlt, SymmetricMatrix};
use crate::projection::ProjectionOperator;
use crate::regularization::Regularizer;
use crate::sampling::NoiseModel;
use crate::sensitivity::{JacobianBlock, JacobianKind};

/// Whitened linear model.
#[derive(Debug, Clone)]
pub struct LinearizedProblem {
    a: DMatrix<f64>,
    b: DVector<f64>,
    noise: NoiseModel,
    projection: Option<Vec<JacobianKind>>,
}

impl LinearizedProblem {
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }
    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }
    pub fn unknowns(&self) -> usize {
        self.a.ncols()
    }

    /// Label of the projection in use, e.g. `zeta+phi`, or `none`.
    pub fn projection_label(&self) -> String {
        projection_label(self.projection.as_deref())
    }
}

pub fn projection_label(kinds: Option<&[JacobianKind]>) -> String {
    match kinds {
        None => "none".into(),
        Some(k) => k
            .iter()
            .map(|k| match k {
                JacobianKind::Sigma => "sigma",
                JacobianKind::Zeta => "zeta",
                JacobianKind::Theta => "theta",
                JacobianKind::Phi => "phi",
                JacobianKind::Combined => "combined",
            })
            .collect::<Vec<_>>()
            .join("+"),
    }
}

/// Whitens `y ≈ J_σ w` with `B = P/s` (projection given) or `B = I/s`.
pub fn build_problem(
    j_sigma: &JacobianBlock,
    y: &DVector<f64>,
    noise: &NoiseModel,
    projection: Option<&ProjectionOperator>,
) -> Result<LinearizedProblem> {
    if j_sigma.kind != JacobianKind::Sigma {
        return Err(Error::Contract(format!("expected a conductivity Jacobian, got {:?}", j_sigma.kind)));
    }
    if j_sigma.rows() != y.len() {
        return Err(Error::Contract(format!("Jacobian has {} rows for {} data", j_sigma.rows(), y.len())));
    }
    if !(noise.std > 0.0 && noise.std.is_finite()) {
        return Err(Error::Numeric(format!("noise covariance is not positive definite (std {})", noise.std)));
    }
    let inv = 1.0 / noise.std;
    let (a, b) = match projection {
        Some(p) => {
            if p.dim() != y.len() {
                return Err(Error::Contract(format!("projector dimension {} for {} data", p.dim(), y.len())));
            }
            (p.apply_matrix(&j_sigma.matrix) * inv, p.apply(y) * inv)
        }
        None => (&j_sigma.matrix * inv, y * inv),
    };
    Ok(LinearizedProblem { a, b, noise: *noise, projection: projection.map(|p| p.sources().to_vec()) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionMeta {
    pub algorithm: String,
    pub gamma: f64,
    pub smoothing: f64,
    pub epsilon: f64,
    pub projection: String,
    pub noise_std: f64,
    pub mesh_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Set when an iteration failed; the history ends at the last good
    /// iterate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    /// Final nodal perturbation (S/m).
    pub w: Vec<f64>,
    /// Iterates starting from `w⁽⁰⁾ = 0`.
    pub history: Vec<Vec<f64>>,
    /// Objective value of every iterate.
    pub objective: Vec<f64>,
    pub meta: ReconstructionMeta,
}

impl ReconstructionResult {
    /// Writes `node,value` CSV.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "node,value")?;
        for (i, v) in self.w.iter().enumerate() {
            writeln!(out, "{i},{v:e}")?;
        }
        Ok(())
    }

    /// Metadata sidecar including the objective history.
    pub fn metadata_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(&self.meta).expect("metadata serializes");
        v["objective_history"] = serde_json::json!(self.objective);
        v["iterations"] = serde_json::json!(self.history.len() - 1);
        v
    }
}

/// Solver for one whitened problem and prior.
#[derive(Debug)]
pub struct Reconstructor<'p, 'r, 'm> {
    problem: &'p LinearizedProblem,
    prior: &'r Regularizer<'m>,
    gamma: f64,
}

impl<'p, 'r, 'm> Reconstructor<'p, 'r, 'm> {
    pub fn new(problem: &'p LinearizedProblem, prior: &'r Regularizer<'m>, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be positive, got {gamma}")));
        }
        if problem.unknowns() != prior.mesh().n_nodes() {
            return Err(Error::Contract(format!(
                "problem has {} unknowns, prior mesh has {} nodes",
                problem.unknowns(),
                prior.mesh().n_nodes()
            )));
        }
        Ok(Self { problem, prior, gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `½‖b − Aw‖² + γΨ(w)`.
    pub fn objective(&self, w: &[f64]) -> Result<f64> {
        let wv = DVector::from_column_slice(w);
        let r = self.problem.b() - self.problem.a() * wv;
        Ok(0.5 * r.norm_squared() + self.gamma * self.prior.psi(w)?)
    }

    /// Minimizer of `½‖b − Aw‖² + γ/2 wᵀΘw` via the Woodbury identity.
    pub fn solve_woodbury(&self, theta: SymmetricMatrix) -> Result<Vec<f64>> {
        let a = self.problem.a();
        let mut z = a.transpose();
        Ldlt::new(theta)?.solve_columns(&mut z);
        let mut s = a * &z;
        let s_sym = (&s + s.transpose()) * 0.5;
        s = s_sym;
        for i in 0..s.nrows() {
            s[(i, i)] += self.gamma;
        }
        let chol = s
            .cholesky()
            .ok_or_else(|| Error::Numeric("Woodbury system γI + AΘ⁻¹Aᵀ is not positive definite".into()))?;
        let v = chol.solve(self.problem.b());
        let w = z * v;
        finite(w.as_slice())?;
        Ok(w.as_slice().to_vec())
    }

    /// Same minimizer from the dense normal equations `(AᵀA + γΘ) w = Aᵀb`.
    /// Forms an `n × n` matrix; meant for small problems.
    pub fn solve_direct(&self, theta: &SymmetricMatrix) -> Result<Vec<f64>> {
        let a = self.problem.a();
        let mut m = a.transpose() * a;
        m += theta.to_dense() * self.gamma;
        let rhs = a.transpose() * self.problem.b();
        let chol = m.cholesky().ok_or_else(|| Error::Numeric("normal equations are not positive definite".into()))?;
        let w = chol.solve(&rhs);
        finite(w.as_slice())?;
        Ok(w.as_slice().to_vec())
    }

    fn meta(&self, algorithm: &str) -> ReconstructionMeta {
        ReconstructionMeta {
            algorithm: algorithm.into(),
            gamma: self.gamma,
            smoothing: self.prior.smoothing(),
            epsilon: self.prior.epsilon(),
            projection: self.problem.projection_label(),
            noise_std: self.problem.noise().std,
            mesh_hash: self.prior.mesh().content_hash(),
            seed: None,
            error: None,
        }
    }

    /// Single solve with the smoothness prior `Θ(0)`.
    pub fn one_step(&self) -> Result<ReconstructionResult> {
        let n = self.problem.unknowns();
        let zero = vec![0.0; n];
        let w = self.solve_woodbury(self.prior.theta_zero()?)?;
        let objective = vec![self.objective(&zero)?, self.objective(&w)?];
        Ok(ReconstructionResult { w: w.clone(), history: vec![zero, w], objective, meta: self.meta("one_step") })
    }

    /// Lagged diffusivity iteration from `w⁽⁰⁾ = 0`.
    pub fn lagged_diffusivity(&self, n_iter: usize) -> Result<ReconstructionResult> {
        self.lagged_diffusivity_from(vec![0.0; self.problem.unknowns()], n_iter)
    }

    /// Lagged diffusivity iteration from a given start. A failure after
    /// the first iterate is reported in the metadata with the partial
    /// history.
    pub fn lagged_diffusivity_from(&self, start: Vec<f64>, n_iter: usize) -> Result<ReconstructionResult> {
        let mut meta = self.meta("lagged_diffusivity");
        let mut history = vec![start];
        let mut objective = vec![self.objective(&history[0])?];
        for j in 0..n_iter {
            let step = self.prior.theta(&history[j]).and_then(|t| self.solve_woodbury(t));
            match step {
                Ok(w) => {
                    objective.push(self.objective(&w)?);
                    history.push(w);
                }
                Err(e) if j > 0 => {
                    meta.error = Some(format!("iteration {}: {e}", j + 1));
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let w = history.last().cloned().unwrap_or_default();
        Ok(ReconstructionResult { w, history, objective, meta })
    }
}

fn finite(v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric("reconstruction produced non-finite values".into()))
    }
}
