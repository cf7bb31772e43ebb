use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::critical::order_statistic;
use crate::gmm::GmmProblem;
use crate::linalg::{inv_sym, sqrt_psd};
use crate::rng::normals;
use crate::splines::SplineBasis;
use crate::{Error, Result};

/// Covariance used for the `r_n` draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RnCovariance {
    /// `(Ĝ' Σ̂ Ĝ)^{-1}`.
    #[default]
    Printed,
    /// `(Ĝ' Σ̂' Σ̂ Ĝ)^{-1}`, the inverse information of the criterion's
    /// quadratic form.
    Sandwich,
}

/// Outcome of a data-driven bandwidth choice.
#[derive(Debug, Clone, PartialEq)]
pub struct Bandwidth {
    pub value: f64,
    /// The sample quantile the bandwidth was derived from.
    pub quantile: f64,
    /// Eigenvalues raised to the floor while inverting the covariance.
    pub floored: usize,
}

/// Evaluation points for the sup norms: a uniform grid with the breakpoints
/// added.
pub fn sup_grid(basis: &SplineBasis, grid_points: usize) -> Vec<f64> {
    let m = grid_points.max(2);
    let mut xs: Vec<f64> = (0..m).map(|i| i as f64 / (m - 1) as f64).collect();
    xs.extend(basis.breakpoints());
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    xs
}

/// `max(sup |p'z|, sup |p''z|)` over the grid rows of `levels` and `derivs`.
fn c1_norm(levels: &DMatrix<f64>, derivs: &DMatrix<f64>, z: &DVector<f64>) -> f64 {
    (levels * z).amax().max((derivs * z).amax())
}

/// `r_n` as the `q`-quantile of the sup-C¹ norm of `p(·)'Z` with
/// `Z ~ N(0, cov)`.
pub fn rn_from_covariance<R: Rng + ?Sized>(
    sieve: &SplineBasis,
    cov: &DMatrix<f64>,
    q: f64,
    draws: usize,
    grid_points: usize,
    rng: &mut R,
) -> Result<f64> {
    if cov.nrows() != sieve.dim() || cov.ncols() != sieve.dim() {
        return Err(Error::DimensionMismatch(format!(
            "covariance is {}x{}, sieve has dimension {}",
            cov.nrows(),
            cov.ncols(),
            sieve.dim()
        )));
    }
    check_quantile(q, draws)?;
    let grid = sup_grid(sieve, grid_points);
    let levels = sieve.design(&grid)?;
    let derivs = sieve.deriv_design(&grid)?;
    let root = sqrt_psd(cov);
    let norms: Vec<f64> = (0..draws)
        .map(|_| {
            let z = &root * DVector::from_vec(normals(rng, sieve.dim()));
            c1_norm(&levels, &derivs, &z)
        })
        .collect();
    order_statistic(norms, q)
}

/// Data-driven `r_n`: the `q`-quantile of the sup-C¹ norm of `p(·)'Z` with
/// `Z ~ N(0, (Ĝ'Σ̂Ĝ)^{-1} / n)` (or the sandwich variant).
pub fn select_rn<R: Rng + ?Sized>(
    problem: &GmmProblem,
    q: f64,
    draws: usize,
    grid_points: usize,
    covariance: RnCovariance,
    rng: &mut R,
) -> Result<Bandwidth> {
    let delta = problem.g_hat().transpose();
    let s = problem.sigma_hat();
    let info = match covariance {
        RnCovariance::Printed => &delta * s * delta.transpose(),
        RnCovariance::Sandwich => &delta * s.transpose() * s * delta.transpose(),
    };
    let info = (&info + info.transpose()) * 0.5;
    let inv = inv_sym(&info)?;
    if inv.floored > 0 {
        log::warn!(
            "{} eigenvalue(s) floored in the r_n covariance",
            inv.floored
        );
    }
    // The inverse information describes √n(β̂ − β); r_n is compared with
    // constraint values on the scale of β̂ itself.
    let cov = &inv.matrix / problem.n() as f64;
    let value = rn_from_covariance(problem.sieve(), &cov, q, draws, grid_points, rng)?;
    Ok(Bandwidth {
        value,
        quantile: value,
        floored: inv.floored,
    })
}

/// Sup over the vertices of `[-1, 1]^j` of `‖Σ̂ Z β‖` for one draw `Z`.
pub fn vertex_sup(sigma: &DMatrix<f64>, z: &DMatrix<f64>) -> f64 {
    let sz = sigma * z;
    let j = z.ncols();
    // β and −β give the same norm: fix the sign of the last coordinate.
    let half = 1usize << j.saturating_sub(1);
    let mut best = 0.0f64;
    for mask in 0..half {
        let beta = DVector::from_fn(j, |i, _| if mask >> i & 1 == 1 { -1.0 } else { 1.0 });
        best = best.max((&sz * beta).norm());
    }
    best
}

/// `l_n = 1 / quantile` of the vertex sups over the supplied `k × j` draws;
/// `+∞` when the quantile is zero.
pub fn ln_from_draws(sigma: &DMatrix<f64>, draws: &[DMatrix<f64>], q: f64) -> Result<Bandwidth> {
    check_quantile(q, draws.len())?;
    let sups: Vec<f64> = draws.iter().map(|z| vertex_sup(sigma, z)).collect();
    let quantile = order_statistic(sups, q)?;
    let value = if quantile > 0.0 {
        quantile.recip()
    } else {
        f64::INFINITY
    };
    Ok(Bandwidth {
        value,
        quantile,
        floored: 0,
    })
}

/// Data-driven `l_n`: `Z_ℓ` is Gaussian with the sample covariance of
/// `vec(q(Z_i) p(X_i)')`.
pub fn select_ln<R: Rng + ?Sized>(
    problem: &GmmProblem,
    q: f64,
    draws: usize,
    rng: &mut R,
) -> Result<Bandwidth> {
    let (n, k, j) = (problem.n(), problem.k(), problem.j());
    let p = problem.p_design();
    let qd = problem.q_design();
    // Column-major vec of the k × j outer product.
    let mut rows = DMatrix::zeros(n, k * j);
    for i in 0..n {
        for c in 0..j {
            for r in 0..k {
                rows[(i, c * k + r)] = qd[(i, r)] * p[(i, c)];
            }
        }
    }
    let mean = rows.row_mean();
    for mut row in rows.row_iter_mut() {
        row -= &mean;
    }
    let cov = rows.transpose() * &rows / n as f64;
    let root = sqrt_psd(&cov);
    let mats: Vec<DMatrix<f64>> = (0..draws)
        .map(|_| {
            let v = &root * DVector::from_vec(normals(rng, k * j));
            DMatrix::from_column_slice(k, j, v.as_slice())
        })
        .collect();
    ln_from_draws(problem.sigma_hat(), &mats, q)
}

fn check_quantile(q: f64, draws: usize) -> Result<()> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "quantile level must lie in (0, 1), got {q}"
        )));
    }
    if draws == 0 {
        return Err(Error::InvalidArgument(
            "at least one draw is required".into(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::splines::{make_basis, KnotRule};
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_covariance_gives_infinite_ln_and_zero_rn() {
        let sigma = DMatrix::identity(2, 2);
        let zeros = vec![DMatrix::zeros(2, 1); 50];
        let b = ln_from_draws(&sigma, &zeros, 0.05).unwrap();
        assert!(b.value.is_infinite());

        let sieve = make_basis(0, KnotRule::UniformQuantile).unwrap();
        let mut r = rng::stream(1, &[0]);
        let rn = rn_from_covariance(&sieve, &DMatrix::zeros(3, 3), 0.05, 20, 50, &mut r).unwrap();
        assert_eq!(rn, 0.0);
    }

    #[test]
    fn vertex_sup_by_enumeration() {
        let sigma = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let z = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 0.5, 2.0]);
        let mut best = 0.0f64;
        for s in [[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]] {
            let v = &sigma * &z * DVector::from_row_slice(&s);
            best = best.max(v.norm());
        }
        assert_abs_diff_eq!(vertex_sup(&sigma, &z), best, epsilon = 1e-14);
    }

    #[test]
    fn constant_function_norm() {
        // z = c·1 gives p'z = c everywhere and zero derivative.
        let sieve = make_basis(2, KnotRule::UniformQuantile).unwrap();
        let grid = sup_grid(&sieve, 11);
        let lv = sieve.design(&grid).unwrap();
        let dv = sieve.deriv_design(&grid).unwrap();
        let z = DVector::from_element(sieve.dim(), -0.7);
        assert_abs_diff_eq!(c1_norm(&lv, &dv, &z), 0.7, epsilon = 1e-12);
    }
}
