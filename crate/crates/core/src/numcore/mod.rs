//! Dense linear algebra, matrix exponential and fixed-step integration.
//!
//! Everything here works on small dense `nalgebra` matrices; state
//! dimensions in this crate are expected to stay at desk scale.

mod expm;
mod grid;

pub use expm::expm;
pub use grid::{cumulative_trapezoid, rk4_integrate, trapezoid, Direction, TimeGrid};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default relative threshold for pseudo-inverses and PSD square roots.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Largest absolute entry of `a - aᵀ`.
pub fn asymmetry(m: &Matrix) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

fn ensure_square(m: &Matrix) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(())
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &Matrix) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Symmetric PSD square root.
///
/// Asymmetry and negative eigenvalues are measured against `tol` scaled by
/// `max(1, max|m_ij|)`. Eigenvalues in `[-tol, 0)` are clamped to zero.
pub fn psd_sqrt(m: &Matrix, tol: f64) -> Result<Matrix> {
    ensure_square(m)?;
    let scale = max_abs(m).max(1.0);
    let asym = asymmetry(m);
    if asym > tol * scale {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_eig < -tol * scale {
        return Err(Error::IndefiniteMatrix {
            min_eigenvalue: min_eig,
        });
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    Ok(symmetrize(&(v * Matrix::from_diagonal(&roots) * v.transpose())))
}

/// Moore–Penrose pseudo-inverse; singular values below `tol * σ_max` are
/// treated as zero.
pub fn pinv(m: &Matrix, tol: f64) -> Matrix {
    let svd = m.clone().svd(true, true);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let cutoff = tol * sigma_max;
    let u = svd.u.expect("svd computed with u");
    let v_t = svd.v_t.expect("svd computed with v_t");
    let inv = svd
        .singular_values
        .map(|s| if s > cutoff && s > 0.0 { 1.0 / s } else { 0.0 });
    v_t.transpose() * Matrix::from_diagonal(&inv) * u.transpose()
}

/// 2-norm condition number; infinite for singular input.
pub fn condition_number(m: &Matrix) -> f64 {
    let sv = m.singular_values();
    let max = sv.iter().cloned().fold(0.0f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Inverse of a square matrix, refusing when the condition number is above
/// `max_condition`. Returns the inverse and the observed condition number.
pub fn checked_inverse(m: &Matrix, max_condition: f64) -> Result<(Matrix, f64), f64> {
    let cond = condition_number(m);
    if !cond.is_finite() || cond > max_condition {
        return Err(cond);
    }
    match m.clone().try_inverse() {
        Some(inv) => Ok((inv, cond)),
        None => Err(f64::INFINITY),
    }
}

/// Inverse of a symmetric positive definite matrix (used for `R`).
pub fn spd_inverse(m: &Matrix) -> Result<Matrix> {
    ensure_square(m)?;
    match m.clone().cholesky() {
        Some(c) => Ok(symmetrize(&c.inverse())),
        None => Err(Error::IndefiniteMatrix {
            min_eigenvalue: min_eigenvalue(m),
        }),
    }
}
