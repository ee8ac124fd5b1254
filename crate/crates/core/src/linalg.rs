//! Small dense helpers shared by the embedding and certification code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{KkmError, Result};

/// Largest absolute asymmetry `max |a_ij - a_ji|`.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut worst: f64 = 0.0;
    for j in 0..n {
        for i in 0..j {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Eigendecomposition of a symmetric matrix with eigenpairs sorted by
/// descending eigenvalue.
pub fn sorted_eigen(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let SymmetricEigen {
        eigenvalues,
        eigenvectors,
    } = SymmetricEigen::new(a.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eigenvalues[j].total_cmp(&eigenvalues[i]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eigenvectors.column(src));
    }
    (values, vectors)
}

/// Extreme eigenvalues `(min, max)` of a symmetric matrix.
pub fn eigen_extremes(a: &DMatrix<f64>) -> (f64, f64) {
    let ev = a.clone().symmetric_eigenvalues();
    (ev.min(), ev.max())
}

pub fn require_square(a: &DMatrix<f64>, what: &str) -> Result<usize> {
    if a.nrows() != a.ncols() {
        return Err(KkmError::invalid(format!(
            "{what} must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(a.nrows())
}

/// Tolerance used for "symmetric" checks on kernel matrices.
pub fn symmetry_tol(a: &DMatrix<f64>) -> f64 {
    1e-12 * a.amax().max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorted_eigen_is_descending_and_reconstructs() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 1.0]);
        let (vals, vecs) = sorted_eigen(&a);
        assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
        let rebuilt = &vecs * DMatrix::from_diagonal(&vals) * vecs.transpose();
        assert!((rebuilt - a).amax() < 1e-12);
    }
}
