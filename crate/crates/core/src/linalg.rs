//! Cholesky-based dense linear algebra.
//!
//! Every solve against a correlation matrix goes through [`Factor`]; no
//! explicit inverse is ever formed.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::Scalar;

/// Lower-triangular Cholesky factor `L` of a symmetric positive-definite
/// matrix `A = L Lᵀ`.
#[derive(Clone, Debug)]
pub struct Factor<T: Scalar> {
    lower: DMatrix<T>,
}

impl<T: Scalar> Factor<T> {
    /// Factorizes `matrix`, rejecting matrices that are not numerically
    /// positive definite: every squared pivot must exceed `n·ε` times the
    /// largest diagonal entry.
    pub fn new(matrix: DMatrix<T>) -> Option<Self> {
        let n = matrix.nrows();
        if n == 0 || n != matrix.ncols() {
            return None;
        }
        let max_diag = (0..n).map(|i| matrix[(i, i)]).fold(T::zero(), |a, b| a.max(b));
        if !(max_diag > T::zero()) {
            return None;
        }
        let threshold = T::machine_epsilon() * T::from_usize_lossy(n) * max_diag;
        let lower = Cholesky::new(matrix)?.unpack();
        for i in 0..n {
            let pivot = lower[(i, i)];
            if !pivot.is_finite() || !(pivot * pivot > threshold) {
                return None;
            }
        }
        Some(Factor { lower })
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &DMatrix<T> {
        &self.lower
    }

    /// `L⁻¹ b`.
    pub fn solve_lower(&self, b: &DVector<T>) -> DVector<T> {
        let mut x = b.clone();
        self.lower.solve_lower_triangular_unchecked_mut(&mut x);
        x
    }

    /// `L⁻¹ B`.
    pub fn solve_lower_mat(&self, b: &DMatrix<T>) -> DMatrix<T> {
        let mut x = b.clone();
        self.lower.solve_lower_triangular_unchecked_mut(&mut x);
        x
    }

    /// `L⁻ᵀ b`.
    pub fn solve_upper(&self, b: &DVector<T>) -> DVector<T> {
        let mut x = b.clone();
        self.lower.tr_solve_lower_triangular_unchecked_mut(&mut x);
        x
    }

    /// `A⁻¹ b`.
    pub fn solve(&self, b: &DVector<T>) -> DVector<T> {
        let mut x = b.clone();
        self.lower.solve_lower_triangular_unchecked_mut(&mut x);
        self.lower.tr_solve_lower_triangular_unchecked_mut(&mut x);
        x
    }

    /// `A⁻¹ B`.
    pub fn solve_mat(&self, b: &DMatrix<T>) -> DMatrix<T> {
        let mut x = b.clone();
        self.lower.solve_lower_triangular_unchecked_mut(&mut x);
        self.lower.tr_solve_lower_triangular_unchecked_mut(&mut x);
        x
    }

    /// `A⁻¹`, obtained by solving against the identity. Only used for the
    /// small trend-covariance matrices, never for correlation matrices.
    pub fn inverse(&self) -> DMatrix<T> {
        let n = self.dim();
        let inv = self.solve_mat(&DMatrix::identity(n, n));
        symmetrize(inv)
    }

    /// `log det A = 2 Σ log L_ii`.
    pub fn log_det(&self) -> T {
        let two = T::lit(2.0);
        (0..self.dim()).map(|i| self.lower[(i, i)].ln()).fold(T::zero(), |a, b| a + b) * two
    }

    /// `L Lᵀ`.
    pub fn reconstruct(&self) -> DMatrix<T> {
        &self.lower * self.lower.transpose()
    }
}

/// Averages a matrix with its transpose to remove rounding asymmetry.
pub fn symmetrize<T: Scalar>(m: DMatrix<T>) -> DMatrix<T> {
    let half = T::lit(0.5);
    (&m + m.transpose()) * half
}

/// Indices of columns of `a` that are (nearly) dependent on earlier
/// columns, found by modified Gram-Schmidt. A column is flagged when its
/// residual falls below `√ε` of its norm; if none does, the single weakest
/// column is returned so callers always have something to name.
pub fn dependent_columns<T: Scalar>(a: &DMatrix<T>) -> Vec<usize> {
    let tol = T::machine_epsilon().sqrt();
    let mut basis: Vec<DVector<T>> = Vec::new();
    let mut dependent = Vec::new();
    let mut weakest: Option<(usize, T)> = None;
    for j in 0..a.ncols() {
        let col = a.column(j).into_owned();
        let norm = col.norm();
        let mut v = col;
        for q in &basis {
            let proj = q.dot(&v);
            v -= q * proj;
        }
        let residual = v.norm();
        let relative = if norm > T::zero() { residual / norm } else { T::zero() };
        if weakest.is_none_or(|(_, r)| relative < r) {
            weakest = Some((j, relative));
        }
        if relative <= tol {
            dependent.push(j);
        } else {
            basis.push(v / residual);
        }
    }
    if dependent.is_empty() {
        dependent.extend(weakest.map(|(j, _)| j));
    }
    dependent
}
