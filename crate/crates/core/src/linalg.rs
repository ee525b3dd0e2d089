use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Pseudo-inverse of a symmetric matrix and whether it was positive definite.
///
/// Eigenvalues below `1e-12 * max|eigenvalue|` are treated as zero.
pub fn sym_pinv(a: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let n = a.nrows();
    if n == 0 {
        return (DMatrix::zeros(0, 0), true);
    }
    let eig = SymmetricEigen::new(a.clone());
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
    let positive_definite = eig.eigenvalues.iter().all(|&v| v > tol);
    let mut inv = DMatrix::zeros(n, n);
    for (i, &v) in eig.eigenvalues.iter().enumerate() {
        if v.abs() <= tol {
            continue;
        }
        let col = eig.eigenvectors.column(i);
        inv += (col * col.transpose()) / v;
    }
    (inv, positive_definite)
}

/// Least-squares solve of `a x = b` for symmetric positive semi-definite `a`,
/// dropping directions with non-positive curvature.
pub fn psd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.nrows();
    if n == 0 {
        return DVector::zeros(0);
    }
    if let Some(ch) = a.clone().cholesky() {
        return ch.solve(b);
    }
    let eig = SymmetricEigen::new(a.clone());
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
    let mut x = DVector::zeros(n);
    for (i, &v) in eig.eigenvalues.iter().enumerate() {
        if v <= tol {
            continue;
        }
        let col = eig.eigenvectors.column(i);
        x += col * (col.dot(b) / v);
    }
    x
}

pub fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    DMatrix::from_fn(n, m, |i, j| rows[i][j])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinv_of_singular() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let (p, pd) = sym_pinv(&a);
        assert!(!pd);
        assert!((p[(0, 0)] - 1.0).abs() < 1e-14);
        assert_eq!(p[(1, 1)], 0.0);
    }

    #[test]
    fn solve_drops_null_direction() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        let x = psd_solve(&a, &DVector::from_vec(vec![4.0, 0.0]));
        assert!((x[0] - 2.0).abs() < 1e-12 && x[1].abs() < 1e-12);
    }
}
