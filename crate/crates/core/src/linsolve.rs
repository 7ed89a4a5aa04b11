//! Sparse symmetric positive definite systems: assembly and LDLᵀ solves.
//!
//! The factorization avoids square roots, so scaling a matrix by a power of
//! two scales its solutions exactly.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::ldlt::factor::LdltParams;
use faer::sparse::linalg::cholesky::{
    factorize_symbolic_cholesky, LdltRef, SymbolicCholesky, SymmetricOrdering,
};
use faer::sparse::{SparseColMat, Triplet};
use faer::{Conj, MatMut, Par, Side};
use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Triplet accumulator for a symmetric matrix; only the lower triangle is
/// stored.
#[derive(Debug, Clone)]
pub struct SymmetricBuilder {
    n: usize,
    entries: Vec<Triplet<usize, usize, f64>>,
}

impl SymmetricBuilder {
    pub fn new(n: usize) -> Self {
        Self { n, entries: Vec::new() }
    }

    pub fn with_capacity(n: usize, cap: usize) -> Self {
        Self { n, entries: Vec::with_capacity(cap) }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Adds `v` to entry `(i, j)` and, implicitly, `(j, i)`.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        self.entries.push(Triplet::new(r, c, v));
    }

    pub fn build(&self) -> Result<SymmetricMatrix> {
        let lower = SparseColMat::try_new_from_triplets(self.n, self.n, &self.entries)
            .map_err(|e| Error::Numeric(format!("sparse assembly failed: {e:?}")))?;
        Ok(SymmetricMatrix { lower })
    }
}

/// Symmetric sparse matrix stored as its lower triangle (CSC).
#[derive(Debug, Clone)]
pub struct SymmetricMatrix {
    lower: SparseColMat<usize, f64>,
}

impl SymmetricMatrix {
    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn nnz_lower(&self) -> usize {
        self.lower.val().len()
    }

    /// Iterates over stored lower-triangle entries `(row, col, value)`.
    pub fn lower_entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let cp = self.lower.symbolic().col_ptr();
        let ri = self.lower.symbolic().row_idx();
        let val = self.lower.val();
        (0..self.dim()).flat_map(move |j| (cp[j]..cp[j + 1]).map(move |k| (ri[k], j, val[k])))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.dim()];
        for (i, j, v) in self.lower_entries() {
            if i == j {
                d[i] += v;
            }
        }
        d
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        for (i, j, v) in self.lower_entries() {
            y[i] += v * x[j];
            if i != j {
                y[j] += v * x[i];
            }
        }
        y
    }

    /// `b − A x` accumulated in double-double arithmetic, so the result is
    /// accurate even when it is tiny compared to `A x`.
    pub fn residual(&self, b: &[f64], x: &[f64]) -> Vec<f64> {
        let mut hi = b.to_vec();
        let mut lo = vec![0.0; self.dim()];
        let mut acc = |k: usize, a: f64, v: f64| {
            let p = -a * v;
            let pe = (-a).mul_add(v, -p);
            let s = hi[k] + p;
            let bb = s - hi[k];
            let se = (hi[k] - (s - bb)) + (p - bb);
            hi[k] = s;
            lo[k] += se + pe;
        };
        for (i, j, v) in self.lower_entries() {
            acc(i, v, x[j]);
            if i != j {
                acc(j, v, x[i]);
            }
        }
        hi.iter().zip(&lo).map(|(h, l)| h + l).collect()
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut s = 0.0;
        for (i, j, v) in self.lower_entries() {
            s += v * x[i] * y[j];
            if i != j {
                s += v * x[j] * y[i];
            }
        }
        s
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.dim(), self.dim());
        for (i, j, v) in self.lower_entries() {
            a[(i, j)] += v;
            if i != j {
                a[(j, i)] += v;
            }
        }
        a
    }
}

/// Sparse LDLᵀ factorization with fill-reducing ordering.
pub struct Ldlt {
    matrix: SymmetricMatrix,
    symbolic: SymbolicCholesky<usize>,
    values: Vec<f64>,
    refinement_steps: usize,
}

impl std::fmt::Debug for Ldlt {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Ldlt").field("dim", &self.matrix.dim()).field("factor_nnz", &self.values.len()).finish()
    }
}

impl Ldlt {
    /// Factorizes a symmetric positive definite matrix. Fails with a numeric
    /// error when a pivot is not positive.
    pub fn new(matrix: SymmetricMatrix) -> Result<Self> {
        let par = Par::Seq;
        let symbolic = factorize_symbolic_cholesky(
            matrix.lower.symbolic(),
            Side::Lower,
            SymmetricOrdering::Amd,
            Default::default(),
        )
        .map_err(|e| Error::Numeric(format!("symbolic factorization failed: {e:?}")))?;
        let mut values = vec![0.0; symbolic.len_val()];
        let req = symbolic.factorize_numeric_ldlt_scratch::<f64>(par, Default::default());
        let mut mem = MemBuffer::new(req);
        let params: faer::Spec<LdltParams, f64> = Default::default();
        symbolic
            .factorize_numeric_ldlt(
                &mut values,
                matrix.lower.as_ref(),
                Side::Lower,
                Default::default(),
                par,
                MemStack::new(&mut mem),
                params,
            )
            .map_err(|e| Error::Numeric(format!("LDLT factorization failed: {e:?}")))?;
        let ldlt = Self { matrix, symbolic, values, refinement_steps: 2 };
        ldlt.check_pivots()?;
        Ok(ldlt)
    }

    fn check_pivots(&self) -> Result<()> {
        // probe bᵀA⁻¹b > 0; flags systems made indefinite by invalid
        // parameters
        let n = self.dim();
        let b: Vec<f64> = (0..n).map(|i| 1.0 + (i % 7) as f64).collect();
        let x = self.solve_raw(&b);
        let q: f64 = x.iter().zip(&b).map(|(a, b)| a * b).sum();
        if !(q > 0.0) || !q.is_finite() {
            return Err(Error::Numeric("system matrix is not positive definite".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn matrix(&self) -> &SymmetricMatrix {
        &self.matrix
    }

    /// Number of iterative refinement sweeps applied after each solve.
    pub fn set_refinement_steps(&mut self, steps: usize) {
        self.refinement_steps = steps;
    }

    fn solve_block_raw(&self, data: &mut [f64], ncols: usize) {
        let n = self.dim();
        let par = Par::Seq;
        let req = self.symbolic.solve_in_place_scratch::<f64>(ncols, par);
        let mut mem = MemBuffer::new(req);
        let rhs = MatMut::from_column_major_slice_mut(data, n, ncols);
        LdltRef::new(&self.symbolic, &self.values).solve_in_place_with_conj(
            Conj::No,
            rhs,
            par,
            MemStack::new(&mut mem),
        );
    }

    fn solve_raw(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_block_raw(&mut x, 1);
        x
    }

    /// Solves `A x = b` with iterative refinement on extended-precision
    /// residuals.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = self.solve_raw(b);
        for _ in 0..self.refinement_steps {
            let r = self.matrix.residual(b, &x);
            let dx = self.solve_raw(&r);
            for (xi, d) in x.iter_mut().zip(dx) {
                *xi += d;
            }
        }
        x
    }

    /// Solves for every column of `b` in place.
    pub fn solve_columns(&self, b: &mut DMatrix<f64>) {
        assert_eq!(b.nrows(), self.dim());
        let ncols = b.ncols();
        if ncols == 0 {
            return;
        }
        let rhs = b.clone();
        self.solve_block_raw(b.as_mut_slice(), ncols);
        for _ in 0..self.refinement_steps {
            let mut r = rhs.clone();
            for j in 0..ncols {
                let res = self.matrix.residual(rhs.column(j).as_slice(), b.column(j).as_slice());
                r.column_mut(j).copy_from_slice(&res);
            }
            self.solve_block_raw(r.as_mut_slice(), ncols);
            *b += r;
        }
    }
}
