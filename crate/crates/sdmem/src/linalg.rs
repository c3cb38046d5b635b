//! Small dense symmetric-matrix helpers used throughout the crate.
//! Dimensions here are the effect/state dimensions (at most ~a dozen), so
//! plain O(n^3) routines are appropriate.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative pivot threshold below which a Cholesky factorization is
/// reported as singular.
pub const CHOL_PIVOT_REL: f64 = 1e-12;

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
///
/// Fails when a pivot drops below `CHOL_PIVOT_REL` times the largest diagonal
/// entry of the input, reporting the offending pivot.
pub fn spd_cholesky(a: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "{context}: expected square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let max_diag = (0..n).map(|i| a[(i, i)].abs()).fold(0.0_f64, f64::max);
    let floor = CHOL_PIVOT_REL * max_diag.max(f64::MIN_POSITIVE);
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if s <= floor {
                    return Err(Error::NotPositiveDefinite {
                        context: context.to_string(),
                        value: s,
                    });
                }
                l[(i, i)] = s.sqrt();
            } else {
                l[(i, j)] = s / l[(j, j)];
            }
        }
    }
    Ok(l)
}

/// Solve A x = b given the lower Cholesky factor L of A.
pub fn chol_solve_vec(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut y = b.clone();
    l.solve_lower_triangular_mut(&mut y);
    l.transpose().solve_upper_triangular_mut(&mut y);
    y
}

/// Solve A X = B columnwise given the lower Cholesky factor L of A.
pub fn chol_solve_mat(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut y = b.clone();
    l.solve_lower_triangular_mut(&mut y);
    l.transpose().solve_upper_triangular_mut(&mut y);
    y
}

/// log det A from its lower Cholesky factor.
pub fn chol_logdet(l: &DMatrix<f64>) -> f64 {
    (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0
}

/// Inverse of an SPD matrix via its Cholesky factorization.
pub fn spd_inverse(a: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    let l = spd_cholesky(a, context)?;
    let id = DMatrix::identity(a.nrows(), a.nrows());
    Ok(chol_solve_mat(&l, &id))
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = a.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    ev
}

/// Replace `a` by its symmetric part (a + a') / 2.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in 0..i {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
}

/// Largest entrywise asymmetry |a - a'|.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in 0..i {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Frobenius-norm condition estimate from symmetric eigenvalues.
pub fn symmetric_condition(a: &DMatrix<f64>) -> f64 {
    let ev = symmetric_eigenvalues(a);
    let max = ev.iter().fold(0.0_f64, |m, &v| m.max(v.abs()));
    let min = ev.iter().fold(f64::INFINITY, |m, &v| m.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cholesky_round_trip() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let l = spd_cholesky(&a, "test").unwrap();
        let back = &l * l.transpose();
        assert_relative_eq!(back, a, epsilon = 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(spd_cholesky(&a, "test").is_err());
    }

    #[test]
    fn solve_matches_direct_inverse() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let l = spd_cholesky(&a, "test").unwrap();
        let b = DVector::from_vec(vec![1.0, -1.0]);
        let x = chol_solve_vec(&l, &b);
        assert_relative_eq!(&a * &x, b, epsilon = 1e-12);
    }

    #[test]
    fn logdet_matches_determinant() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let l = spd_cholesky(&a, "test").unwrap();
        assert_relative_eq!(chol_logdet(&l), (2.0 * 1.0 - 0.09_f64).ln(), epsilon = 1e-12);
    }
}
