use nalgebra::{DVector, SymmetricEigen};

use super::RestrictionSet;
use crate::gmm::GmmProblem;
use crate::qp::{min_weighted_residual, QpOptions};
use crate::{Error, Result};

/// Relative size of the unweighted moments below which the fit is exact.
const EXACT_FIT: f64 = 1e-10;

/// `I_n(R)`: the minimum of `Q_n` over the restricted sieve, with its
/// minimizer. The sieve ball is not imposed.
pub fn compute_in(
    problem: &GmmProblem,
    restriction: &RestrictionSet,
) -> Result<(f64, DVector<f64>)> {
    if restriction.dim() != problem.j() {
        return Err(Error::DimensionMismatch(format!(
            "restriction acts on {} coefficients, sieve has {}",
            restriction.dim(),
            problem.j()
        )));
    }
    let fit = min_weighted_residual(
        problem.sigma_hat(),
        problem.m_hat(),
        &problem.scaled_jacobian(),
        &restriction.constraints(),
        &QpOptions::default(),
    )?;
    // An exact fit leaves only roundoff in the moments, which the weight
    // would otherwise amplify.
    let raw = problem.moment_vector(&fit.x)?.norm();
    if raw <= EXACT_FIT * problem.m_hat().norm() {
        return Ok((0.0, fit.x));
    }
    Ok((fit.value, fit.x))
}

/// Exact (`tau = 0`) or near (`tau > 0`) minimizers of `Q_n / √n` over the
/// restriction.
///
/// For `tau > 0` the level set is a convex body; it is represented by the
/// minimizer plus, for each direction among `±` coordinate axes and `±`
/// principal axes of the criterion's quadratic form, the farthest point of
/// the level set along that ray from the minimizer. Directions along which
/// the ray never leaves the set are skipped.
pub fn set_estimator(
    problem: &GmmProblem,
    restriction: &RestrictionSet,
    tau: f64,
) -> Result<Vec<DVector<f64>>> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tau must be nonnegative, got {tau}"
        )));
    }
    let (value, beta_hat) = compute_in(problem, restriction)?;
    if tau == 0.0 {
        return Ok(vec![beta_hat]);
    }
    let sqrt_n = problem.sqrt_n();
    let threshold = value + sqrt_n * tau;
    let wg = problem.sigma_hat() * problem.scaled_jacobian();
    let resid0 = problem.sigma_hat() * problem.moment_vector(&beta_hat)?;
    let constraints = restriction.constraints();

    let j = problem.j();
    let mut directions: Vec<DVector<f64>> = Vec::new();
    let eig = SymmetricEigen::new(wg.transpose() * &wg);
    for c in 0..j {
        let axis = eig.eigenvectors.column(c).into_owned();
        let unit = DVector::from_fn(j, |i, _| if i == c { 1.0 } else { 0.0 });
        for d in [unit.clone(), -unit, axis.clone(), -axis] {
            directions.push(d);
        }
    }

    let mut out = vec![beta_hat.clone()];
    for v in directions {
        // Equalities must hold along the ray.
        if (&constraints.a_eq * &v).amax() > 1e-10 {
            continue;
        }
        // Polyhedral limit.
        let av = &constraints.a_in * &v;
        let slack = &constraints.b_in - &constraints.a_in * &beta_hat;
        let mut s_max = f64::INFINITY;
        for (a, s) in av.iter().zip(slack.iter()) {
            if *a > 1e-14 {
                s_max = s_max.min(s.max(0.0) / a);
            }
        }
        // Criterion limit: ‖r0 − s·WGv‖ <= threshold.
        if threshold.is_finite() {
            let wgv = &wg * &v;
            let a = wgv.norm_squared();
            if a > 0.0 {
                let b = -2.0 * resid0.dot(&wgv);
                let c = resid0.norm_squared() - threshold * threshold;
                let disc = (b * b - 4.0 * a * c).max(0.0);
                s_max = s_max.min((-b + disc.sqrt()) / (2.0 * a));
            }
        }
        if s_max.is_finite() && s_max > 0.0 {
            out.push(&beta_hat + v * s_max);
        }
    }
    Ok(out)
}
