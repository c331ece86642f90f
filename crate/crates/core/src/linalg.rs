//! Dense symmetric positive-definite matrices.
//!
//! Every inversion in the crate goes through [`SpdMatrix`], which owns the
//! Cholesky factor computed once at construction.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative tolerance for the symmetry check.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct SpdMatrix {
    matrix: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl SpdMatrix {
    /// Validates symmetry, symmetrizes exactly, and factors.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch {
                what: "SPD matrix",
                expected: format!("{0}x{0}", matrix.nrows()),
                actual: format!("{}x{}", matrix.nrows(), matrix.ncols()),
            });
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite { pivot: f64::NAN });
        }
        check_symmetric(&matrix)?;
        let matrix = symmetrize(&matrix);
        match Cholesky::new(matrix.clone()) {
            Some(chol) if chol.l_dirty().diagonal().iter().all(|d| *d > 0.0) => {
                Ok(SpdMatrix { matrix, chol })
            }
            _ => Err(Error::NotPositiveDefinite {
                pivot: smallest_pivot(&matrix),
            }),
        }
    }

    /// `matrix + ridge * I`.
    pub fn with_ridge(matrix: &DMatrix<f64>, ridge: f64) -> Result<Self> {
        let n = matrix.nrows();
        SpdMatrix::new(matrix + DMatrix::identity(n, n) * ridge)
    }

    pub fn identity(n: usize) -> Self {
        SpdMatrix::new(DMatrix::identity(n, n)).expect("identity is SPD")
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    /// Lower-triangular factor `L` with `L Lᵀ = A`.
    pub fn factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }

    pub fn solve_matrix(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(rhs)
    }

    /// Exactly symmetric inverse.
    pub fn inverse(&self) -> DMatrix<f64> {
        symmetrize(&self.chol.inverse())
    }

    pub fn ln_det(&self) -> f64 {
        2.0 * self
            .chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|d| d.ln())
            .sum::<f64>()
    }

    /// `vᵀ A⁻¹ v`.
    pub fn inverse_quadratic_form(&self, v: &DVector<f64>) -> f64 {
        v.dot(&self.solve(v))
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        SpdMatrix::new(&self.matrix * factor)
    }
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    let scale = m
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let gap = (m[(i, j)] - m[(j, i)]).abs();
            if gap > SYMMETRY_TOLERANCE * scale {
                return Err(Error::NotSymmetric {
                    row: i,
                    col: j,
                    gap,
                });
            }
        }
    }
    Ok(())
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            m[(i, i)]
        } else {
            0.5 * (m[(i, j)] + m[(j, i)])
        }
    })
}

/// Runs the Cholesky recurrence without bailing out and returns the first
/// nonpositive pivot (or the smallest one if all are positive).
pub fn smallest_pivot(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    let mut smallest = f64::INFINITY;
    for j in 0..n {
        let mut pivot = m[(j, j)];
        for p in 0..j {
            pivot -= l[(j, p)] * l[(j, p)];
        }
        if !(pivot > 0.0) {
            return pivot;
        }
        smallest = smallest.min(pivot);
        let d = pivot.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for p in 0..j {
                s -= l[(i, p)] * l[(j, p)];
            }
            l[(i, j)] = s / d;
        }
    }
    smallest
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch {
            what: "matrix rows",
            expected: format!("{ncols} columns"),
            actual: format!("{} columns", bad.len()),
        });
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub(crate) fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_cholesky_of_correlated_pair() {
        let a = SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.9, 0.9, 1.0])).unwrap();
        let l = a.factor();
        assert_eq!(l[(0, 0)], 1.0);
        assert_eq!(l[(0, 1)], 0.0);
        assert!((l[(1, 0)] - 0.9).abs() < 1e-15);
        assert!((l[(1, 1)] - 0.19_f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn indefinite_reports_pivot() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        match SpdMatrix::new(m) {
            Err(Error::NotPositiveDefinite { pivot }) => assert!((pivot + 3.0).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_matrix_fails_without_ridge() {
        let z = DMatrix::<f64>::zeros(3, 3);
        assert!(matches!(
            SpdMatrix::new(z.clone()),
            Err(Error::NotPositiveDefinite { .. })
        ));
        let r = SpdMatrix::with_ridge(&z, 1e-4).unwrap();
        assert_eq!(r.matrix(), &(DMatrix::identity(3, 3) * 1e-4));
    }

    #[test]
    fn asymmetric_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.2, 1.0]);
        assert!(matches!(SpdMatrix::new(m), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn inverse_and_log_det() {
        let a = SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0])).unwrap();
        assert!((a.ln_det() - 11.0_f64.ln()).abs() < 1e-14);
        let inv = a.inverse();
        let prod = a.matrix() * &inv;
        assert!((prod - DMatrix::identity(2, 2)).norm() < 1e-14);
        assert_eq!(inv[(0, 1)], inv[(1, 0)]);
    }
}
