//! Orthogonal projections onto the complement of Jacobian ranges, principal
//! angles between such ranges, and signal decomposition.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::sensitivity::{JacobianBlock, JacobianKind};

/// Largest admissible condition number of the column-scaled block matrix.
pub const MAX_CONDITION: f64 = 1e8;

/// `P = I − QQᵀ` for an orthonormal basis `Q` of the range of one or more
/// Jacobian blocks.
#[derive(Debug, Clone)]
pub struct ProjectionOperator {
    basis: DMatrix<f64>,
    matrix: DMatrix<f64>,
    sources: Vec<JacobianKind>,
    linearization: String,
    condition: f64,
}

impl ProjectionOperator {
    /// Ambient dimension `MN`.
    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    /// Number of projected-out directions.
    pub fn deficiency(&self) -> usize {
        self.basis.ncols()
    }

    /// Dimension of the range of `P`.
    pub fn rank(&self) -> usize {
        self.dim() - self.deficiency()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Orthonormal basis of the projected-out subspace.
    pub fn removed_basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn sources(&self) -> &[JacobianKind] {
        &self.sources
    }

    pub fn linearization(&self) -> &str {
        &self.linearization
    }

    /// Condition number of the column-scaled block matrix.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// `P v` without forming `P`.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        v - &self.basis * (self.basis.transpose() * v)
    }

    /// `P X` without forming `P`.
    pub fn apply_matrix(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        x - &self.basis * (self.basis.transpose() * x)
    }

    /// `P` with no directions removed.
    pub fn identity(dim: usize) -> Self {
        Self {
            basis: DMatrix::zeros(dim, 0),
            matrix: DMatrix::identity(dim, dim),
            sources: Vec::new(),
            linearization: String::new(),
            condition: 1.0,
        }
    }
}

/// Builds the projector onto the orthogonal complement of the combined range
/// of `blocks`. Fails when the column-scaled blocks are rank deficient or
/// have condition number at least [`MAX_CONDITION`].
pub fn build_projection(blocks: &[&JacobianBlock]) -> Result<ProjectionOperator> {
    let j = JacobianBlock::hstack(blocks)?;
    let (rows, cols) = j.matrix.shape();
    if cols >= rows {
        return Err(Error::Numeric(format!("{cols} Jacobian columns cannot have full rank in dimension {rows}")));
    }
    let mut scaled = j.matrix.clone();
    for (c, mut col) in scaled.column_iter_mut().enumerate() {
        let n = col.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::Numeric(format!("Jacobian column {c} is zero or not finite")));
        }
        col /= n;
    }
    let svd = scaled.svd(true, false);
    let sv = &svd.singular_values;
    let condition = sv.max() / sv.min();
    if !(condition < MAX_CONDITION) {
        return Err(Error::Numeric(format!(
            "combined Jacobian is rank deficient or ill-conditioned (condition estimate {condition:.3e})"
        )));
    }
    let basis = svd.u.expect("left singular vectors requested");
    let matrix = DMatrix::identity(rows, rows) - &basis * basis.transpose();
    Ok(ProjectionOperator {
        basis,
        matrix,
        sources: blocks.iter().map(|b| b.kind).collect(),
        linearization: j.linearization,
        condition,
    })
}

/// Principal angles between the ranges of two projectors.
#[derive(Debug, Clone, Serialize)]
pub struct PrincipalAngles {
    /// Angles in degrees, ascending; as many as the smaller range dimension.
    pub degrees: Vec<f64>,
    pub dim_a: usize,
    pub dim_b: usize,
}

impl PrincipalAngles {
    pub fn max(&self) -> f64 {
        self.degrees.last().copied().unwrap_or(0.0)
    }

    pub fn dims_differ(&self) -> bool {
        self.dim_a != self.dim_b
    }
}

fn arcsin_degrees(s: f64) -> f64 {
    s.clamp(0.0, 1.0).asin().to_degrees()
}

/// Principal angles between `range(P_a)` and `range(P_b)`, computed from
/// sines for accuracy at small angles.
pub fn principal_angles(a: &ProjectionOperator, b: &ProjectionOperator) -> Result<PrincipalAngles> {
    if a.dim() != b.dim() {
        return Err(Error::Contract(format!("projectors act on dimensions {} and {}", a.dim(), b.dim())));
    }
    let (qa, qb) = (a.rank(), b.rank());
    let q = qa.min(qb);
    let mut degrees: Vec<f64> = if qa == qb {
        // the nonzero sines are the singular values of P_a(I − P_b) = (P_a Q_b) Q_bᵀ
        let pq = a.apply_matrix(&b.basis);
        let mut d: Vec<f64> = pq.singular_values().iter().map(|&s| arcsin_degrees(s)).collect();
        d.sort_by(|x, y| y.total_cmp(x));
        d.resize(q, 0.0);
        d
    } else {
        let (small, large) = if qa <= qb { (a, b) } else { (b, a) };
        let us = range_basis(small);
        let pl = large.basis.clone();
        // (I − P_large_range) U_small = Q_large Q_largeᵀ U_small
        let r = &pl * (pl.transpose() * &us);
        r.singular_values().iter().map(|&s| arcsin_degrees(s)).collect()
    };
    degrees.sort_by(f64::total_cmp);
    Ok(PrincipalAngles { degrees, dim_a: qa, dim_b: qb })
}

/// Orthonormal basis of `range(P)`.
fn range_basis(p: &ProjectionOperator) -> DMatrix<f64> {
    let n = p.dim();
    let svd = p.matrix.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    DMatrix::from_fn(n, p.rank(), |r, c| u[(r, idx[c])])
}

/// `‖J − J_ref‖_F / ‖J_ref‖_F`.
pub fn frobenius_discrepancy(j: &DMatrix<f64>, j_ref: &DMatrix<f64>) -> Result<f64> {
    if j.shape() != j_ref.shape() {
        return Err(Error::Contract(format!("matrix shapes {:?} and {:?} differ", j.shape(), j_ref.shape())));
    }
    let r = j_ref.norm();
    if r == 0.0 {
        return Err(Error::Domain("reference matrix has zero norm".into()));
    }
    Ok((j - j_ref).norm() / r)
}

/// Signals relative to the background measurement and their projections.
#[derive(Debug, Clone)]
pub struct SignalBundle {
    pub s_sigma: DVector<f64>,
    pub s_zeta: DVector<f64>,
    pub s_combined: DVector<f64>,
    /// `(label, [P s(σ), P s(ζ), P s(σ,ζ)])` per projector.
    pub projected: Vec<(String, [DVector<f64>; 3])>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignalNorms {
    pub label: String,
    pub sigma: f64,
    pub zeta: f64,
    pub combined: f64,
}

impl SignalBundle {
    /// Norm table: the raw signals first, then one row per projector.
    pub fn norms(&self) -> Vec<SignalNorms> {
        let mut rows = vec![SignalNorms {
            label: "none".into(),
            sigma: self.s_sigma.norm(),
            zeta: self.s_zeta.norm(),
            combined: self.s_combined.norm(),
        }];
        for (label, [a, b, c]) in &self.projected {
            rows.push(SignalNorms { label: label.clone(), sigma: a.norm(), zeta: b.norm(), combined: c.norm() });
        }
        rows
    }
}

/// Forms `s(σ) = 𝒰(σ,ζ₀) − 𝒰₀`, `s(ζ) = 𝒰(σ₀,ζ) − 𝒰₀` and
/// `s(σ,ζ) = 𝒰(σ,ζ) − 𝒰₀` and projects each with every given operator.
pub fn signal_bundle(
    background: &DVector<f64>,
    sigma_only: &DVector<f64>,
    zeta_only: &DVector<f64>,
    both: &DVector<f64>,
    projections: &[(&str, &ProjectionOperator)],
) -> Result<SignalBundle> {
    let n = background.len();
    for v in [sigma_only, zeta_only, both] {
        if v.len() != n {
            return Err(Error::Contract(format!("measurement lengths {} and {n} differ", v.len())));
        }
    }
    for (label, p) in projections {
        if p.dim() != n {
            return Err(Error::Contract(format!("projector `{label}` has dimension {} for data of length {n}", p.dim())));
        }
    }
    let s_sigma = sigma_only - background;
    let s_zeta = zeta_only - background;
    let s_combined = both - background;
    let projected = projections
        .iter()
        .map(|(label, p)| (label.to_string(), [p.apply(&s_sigma), p.apply(&s_zeta), p.apply(&s_combined)]))
        .collect();
    Ok(SignalBundle { s_sigma, s_zeta, s_combined, projected })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(m: DMatrix<f64>) -> JacobianBlock {
        JacobianBlock { kind: JacobianKind::Zeta, matrix: m, linearization: "x".into(), electrodes: 2, patterns: 1 }
    }

    #[test]
    fn plane_projector() {
        let p = build_projection(&[&block(DMatrix::from_column_slice(2, 1, &[1.0, 0.0]))]).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        assert!((p.matrix() - expect).amax() < 1e-15);
        assert_eq!(p.rank(), 1);
    }

    #[test]
    fn orthogonal_lines_are_ninety_degrees_apart() {
        let a = build_projection(&[&block(DMatrix::from_column_slice(2, 1, &[0.0, 1.0]))]).unwrap();
        let b = build_projection(&[&block(DMatrix::from_column_slice(2, 1, &[1.0, 0.0]))]).unwrap();
        let ang = principal_angles(&a, &b).unwrap();
        assert!((ang.max() - 90.0).abs() < 1e-12);
        let same = principal_angles(&a, &a).unwrap();
        assert!(same.max() < 1e-6);
    }

    #[test]
    fn rank_deficient_blocks_are_rejected() {
        let m = DMatrix::from_column_slice(3, 2, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        assert!(matches!(build_projection(&[&block(m)]), Err(Error::Numeric(_))));
    }

    #[test]
    fn discrepancy_values() {
        let j = DMatrix::from_fn(3, 2, |i, k| (i + 2 * k) as f64 + 1.0);
        assert_eq!(frobenius_discrepancy(&j, &j).unwrap(), 0.0);
        assert!((frobenius_discrepancy(&(&j * 2.0), &j).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(frobenius_discrepancy(&j, &DMatrix::zeros(3, 2)), Err(Error::Domain(_))));
    }

    #[test]
    fn unequal_dimensions_use_smaller_range() {
        // range(P_a) = span{e3} in R^3, range(P_b) = span{e2, e3}
        let a = build_projection(&[&block(DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]))]).unwrap();
        let b = build_projection(&[&block(DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]))]).unwrap();
        let ang = principal_angles(&a, &b).unwrap();
        assert!(ang.dims_differ());
        assert_eq!(ang.degrees.len(), 1);
        assert!(ang.max() < 1e-6);
    }
}
