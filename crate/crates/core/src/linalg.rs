//! Small dense-matrix helpers shared by the model families: symmetry
//! enforcement, SPD checks via Cholesky, eigenvalue flooring, and a power
//! iteration for spectral radii.  All solves go through factorizations;
//! nothing here forms an explicit inverse.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{EmError, Result};

/// `(m + m^T) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (m + m.transpose())
}

/// Maximum absolute asymmetry `max_ij |m_ij - m_ji|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Cholesky factorization of a symmetric positive-definite matrix, with a
/// descriptive error naming `what` on failure.
pub fn spd_cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if m.nrows() != m.ncols() {
        return Err(EmError::invalid_argument(format!(
            "{what}: expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if let Some((i, j)) = first_nonfinite(m) {
        return Err(EmError::invalid_parameter(format!(
            "{what}: non-finite entry at ({i}, {j})"
        )));
    }
    Cholesky::new(m.clone()).ok_or_else(|| {
        EmError::invalid_parameter(format!("{what}: matrix is not positive definite"))
    })
}

/// Index of the first non-finite entry, in row-major order.
pub fn first_nonfinite(m: &DMatrix<f64>) -> Option<(usize, usize)> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if !m[(i, j)].is_finite() {
                return Some((i, j));
            }
        }
    }
    None
}

/// `ln det` of the factored SPD matrix: twice the log-sum of the Cholesky
/// diagonal.
pub fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0
}

/// Smallest eigenvalue of the symmetrized input.
pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrize(m)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Symmetrizes `m` and clamps its eigenvalues from below at `floor`.
///
/// When no eigenvalue is below the floor the symmetrized matrix is returned
/// untouched (no eigendecomposition round-trip), so well-conditioned inputs
/// pass through bit-stable.
pub fn floor_eigenvalues(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let sym = symmetrize(m);
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return sym;
    }
    let clamped = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| l.max(floor)),
    );
    let scaled = &eig.eigenvectors * DMatrix::from_diagonal(&clamped);
    symmetrize(&(scaled * eig.eigenvectors.transpose()))
}

/// Spectral-radius estimate of a square nonnegative matrix by power
/// iteration (the use case is the transient block of an absorbing chain).
pub fn spectral_radius(m: &DMatrix<f64>, iterations: usize) -> f64 {
    assert_eq!(
        m.nrows(),
        m.ncols(),
        "spectral_radius needs a square matrix"
    );
    if m.nrows() == 0 {
        return 0.0;
    }
    let n = m.nrows();
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut radius = 0.0;
    for _ in 0..iterations {
        let next = m * &v;
        let norm = next.norm();
        if norm == 0.0 {
            return 0.0;
        }
        radius = norm;
        v = next / norm;
    }
    radius
}
