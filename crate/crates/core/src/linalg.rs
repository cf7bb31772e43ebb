//! Small dense linear-algebra helpers built on `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::{Error, Result};

/// Relative eigenvalue floor applied before inverting symmetric matrices.
pub const EIGEN_FLOOR: f64 = 1e-10;

/// Result of a floored symmetric spectral function.
#[derive(Debug, Clone)]
pub struct FlooredSpectral {
    pub matrix: DMatrix<f64>,
    /// Number of eigenvalues raised to the floor.
    pub floored: usize,
    /// Ratio of largest to smallest (post-floor) eigenvalue of the input.
    pub condition: f64,
}

fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

fn spectral_map<F: Fn(f64) -> f64>(a: &DMatrix<f64>, f: F) -> Result<FlooredSpectral> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "expected a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let eig = SymmetricEigen::new(symmetrize(a));
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) || !max.is_finite() {
        return Err(Error::NumericalBreakdown(
            "symmetric matrix has no positive eigenvalue".into(),
        ));
    }
    let floor = EIGEN_FLOOR * max;
    let mut floored = 0;
    let mapped = eig.eigenvalues.map(|l| {
        if l < floor {
            floored += 1;
            f(floor)
        } else {
            f(l)
        }
    });
    let min = eig
        .eigenvalues
        .iter()
        .map(|&l| l.max(floor))
        .fold(f64::INFINITY, f64::min);
    let v = &eig.eigenvectors;
    let matrix = symmetrize(&(v * DMatrix::from_diagonal(&mapped) * v.transpose()));
    Ok(FlooredSpectral {
        matrix,
        floored,
        condition: max / min,
    })
}

/// Inverse symmetric square root `A^{-1/2}` with eigenvalues floored at
/// `EIGEN_FLOOR * max eigenvalue`.
pub fn inv_sqrt_sym(a: &DMatrix<f64>) -> Result<FlooredSpectral> {
    spectral_map(a, |l| 1.0 / l.sqrt())
}

/// Inverse of a symmetric positive (semi)definite matrix, eigenvalue-floored.
pub fn inv_sym(a: &DMatrix<f64>) -> Result<FlooredSpectral> {
    spectral_map(a, |l| 1.0 / l)
}

/// Symmetric square root of a positive semidefinite matrix; negative
/// eigenvalues from rounding are clipped at zero. A zero matrix maps to zero.
pub fn sqrt_psd(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(a));
    let d = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    v * DMatrix::from_diagonal(&d) * v.transpose()
}

pub fn norm_inf(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Stacks `rows` vertically; all blocks must share a column count.
pub fn vstack(blocks: &[&DMatrix<f64>], ncols: usize) -> DMatrix<f64> {
    let nrows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(nrows, ncols);
    let mut r = 0;
    for b in blocks {
        debug_assert_eq!(b.ncols(), ncols);
        out.view_mut((r, 0), (b.nrows(), ncols)).copy_from(*b);
        r += b.nrows();
    }
    out
}

pub fn vcat(parts: &[&DVector<f64>]) -> DVector<f64> {
    DVector::from_iterator(
        parts.iter().map(|p| p.len()).sum(),
        parts.iter().flat_map(|p| p.iter().cloned()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn inverse_sqrt_identity() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let m = inv_sqrt_sym(&a).unwrap();
        assert_eq!(m.floored, 0);
        let id = &m.matrix * &a * &m.matrix;
        assert_abs_diff_eq!(id, DMatrix::identity(3, 3), epsilon = 1e-12);
    }

    #[test]
    fn floor_counts_singular_directions() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let m = inv_sqrt_sym(&a).unwrap();
        assert_eq!(m.floored, 1);
        assert!(m.condition >= 1e9);
        assert!(inv_sqrt_sym(&DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let s = sqrt_psd(&a);
        assert_abs_diff_eq!(&s * &s, a, epsilon = 1e-12);
        assert_eq!(sqrt_psd(&DMatrix::zeros(2, 2)), DMatrix::zeros(2, 2));
    }
}
