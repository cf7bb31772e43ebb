use nalgebra::{DMatrix, DVector};

use super::RestrictionSet;
use crate::gmm::GmmProblem;
use crate::qp::{solve, LinearConstraints, QpOptions, QpProblem};
use crate::{Error, Result};

/// Per-observation moments `f_i = ρ(X_i, Y_i, β) q(Z_i)` centered at their
/// sample mean, stored as rows of an `n × k` matrix.
#[derive(Debug, Clone)]
pub struct CenteredMoments {
    rows: DMatrix<f64>,
}

impl CenteredMoments {
    pub fn new(problem: &GmmProblem, beta: &DVector<f64>) -> Result<Self> {
        let resid = problem.residuals(beta)?;
        let mut rows = problem.q_design().clone();
        for (mut row, e) in rows.row_iter_mut().zip(resid.iter()) {
            row *= *e;
        }
        let mean = rows.row_mean();
        for mut row in rows.row_iter_mut() {
            row -= &mean;
        }
        Ok(Self { rows })
    }

    pub fn n(&self) -> usize {
        self.rows.nrows()
    }

    pub fn k(&self) -> usize {
        self.rows.ncols()
    }

    /// `Ŵ = (1/√n) Σ ω_i (f_i − f̄)`.
    pub fn multiplier_draw(&self, omega: &[f64]) -> Result<DVector<f64>> {
        if omega.len() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "{} multipliers for {} observations",
                omega.len(),
                self.n()
            )));
        }
        let w = DVector::from_column_slice(omega);
        Ok(self.rows.tr_mul(&w) / (self.n() as f64).sqrt())
    }
}

/// Multiplier process evaluated at `β`.
pub fn multiplier_draw(
    problem: &GmmProblem,
    beta: &DVector<f64>,
    omega: &[f64],
) -> Result<DVector<f64>> {
    CenteredMoments::new(problem, beta)?.multiplier_draw(omega)
}

/// Derivative of `β ↦ (1/n) Σ ρ_i q_i` in direction `u`, as a `k × j`
/// matrix. The residual is linear in `β`, so this is `−Ĝ` everywhere.
pub fn derivative_map(problem: &GmmProblem) -> DMatrix<f64> {
    -problem.g_hat()
}

/// Forward difference quotient of the same map at `β` with step `h`.
pub fn difference_derivative(
    problem: &GmmProblem,
    beta: &DVector<f64>,
    h: f64,
) -> Result<DMatrix<f64>> {
    let j = problem.j();
    let base = problem.moment_vector(beta)?;
    let mut out = DMatrix::zeros(problem.k(), j);
    for c in 0..j {
        let mut shifted = beta.clone();
        shifted[c] += h;
        let col = (problem.moment_vector(&shifted)? - &base) / (h * problem.sqrt_n());
        out.set_column(c, &col);
    }
    Ok(out)
}

/// Estimated local parameter space at `β̂`, as constraints on `u`.
///
/// Each inequality row `a'β <= b` becomes
/// `a'u <= √n (max(a'β̂ − b, −r_n) − (a'β̂ − b))`; `r_n = ∞` gives `a'u <= 0`
/// everywhere. Equalities become `F u = 0`. A finite `l_n` adds the box
/// `‖u‖_∞ <= √n l_n / √j`.
pub fn local_space(
    restriction: &RestrictionSet,
    beta_hat: &DVector<f64>,
    sqrt_n: f64,
    r_n: f64,
    l_n: f64,
) -> Result<LinearConstraints> {
    if !(r_n >= 0.0) || !(l_n > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need r_n >= 0 and l_n > 0, got r_n = {r_n}, l_n = {l_n}"
        )));
    }
    let j = restriction.dim();
    if beta_hat.len() != j {
        return Err(Error::DimensionMismatch(format!(
            "coefficient vector has {} entries, restriction acts on {}",
            beta_hat.len(),
            j
        )));
    }
    let (a, b) = restriction.inequality_rows();
    let value = &a * beta_hat - b;
    let rhs = value.map(|v| {
        let relaxed = if r_n.is_finite() { v.max(-r_n) } else { v };
        sqrt_n * (relaxed - v)
    });
    let eq = restriction.eq_rows().clone();
    let mut local = LinearConstraints::none(j)
        .with_equalities(&eq, &DVector::zeros(eq.nrows()))
        .with_inequalities(&a, &rhs);
    if l_n.is_finite() {
        local = local.with_box(sqrt_n * l_n / (j as f64).sqrt());
    }
    Ok(local)
}

/// Bootstrap statistic for repeated multiplier draws at a fixed set of
/// coefficient vectors: the minimum over the set of
/// `min_u ‖Σ̂ (Ŵ(β) − Ĝ u)‖` over each local space.
#[derive(Debug, Clone)]
pub struct BootstrapEngine {
    sigma: DMatrix<f64>,
    sigma_g: DMatrix<f64>,
    hessian: DMatrix<f64>,
    pieces: Vec<(CenteredMoments, LinearConstraints)>,
    options: QpOptions,
}

impl BootstrapEngine {
    pub fn new(
        problem: &GmmProblem,
        restriction: &RestrictionSet,
        betas: &[DVector<f64>],
        r_n: f64,
        l_n: f64,
    ) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidArgument("empty coefficient set".into()));
        }
        let sigma = problem.sigma_hat().clone();
        let sigma_g = &sigma * problem.g_hat();
        let h = sigma_g.transpose() * &sigma_g * 2.0;
        let hessian = (&h + h.transpose()) * 0.5;
        let pieces = betas
            .iter()
            .map(|b| {
                Ok((
                    CenteredMoments::new(problem, b)?,
                    local_space(restriction, b, problem.sqrt_n(), r_n, l_n)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            sigma,
            sigma_g,
            hessian,
            pieces,
            options: QpOptions::default(),
        })
    }

    pub fn statistic(&self, omega: &[f64]) -> Result<f64> {
        let mut best = f64::INFINITY;
        for (moments, local) in &self.pieces {
            let sw = &self.sigma * moments.multiplier_draw(omega)?;
            let lin = self.sigma_g.tr_mul(&sw) * -2.0;
            let qp = QpProblem::new(self.hessian.clone(), lin, local.clone())?;
            let sol = solve(&qp, &self.options)?;
            best = best.min((&sw - &self.sigma_g * &sol.x).norm());
        }
        Ok(best)
    }
}

/// One bootstrap draw `Û` at a single `β̂`.
pub fn bootstrap_statistic(
    problem: &GmmProblem,
    restriction: &RestrictionSet,
    beta_hat: &DVector<f64>,
    omega: &[f64],
    r_n: f64,
    l_n: f64,
) -> Result<f64> {
    BootstrapEngine::new(
        problem,
        restriction,
        std::slice::from_ref(beta_hat),
        r_n,
        l_n,
    )?
    .statistic(omega)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::Dataset;
    use crate::splines::{make_basis, KnotRule};
    use approx::assert_abs_diff_eq;

    fn problem() -> GmmProblem {
        let n = 40;
        let x: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let z: Vec<f64> = x.iter().map(|v| (v * 7.0).fract()).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.0 - v + 0.1 * (v * 31.0).sin()).collect();
        let data = Dataset::new(y, x, z).unwrap();
        GmmProblem::new(
            &data,
            make_basis(1, KnotRule::UniformQuantile).unwrap(),
            make_basis(3, KnotRule::UniformQuantile).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn multiplier_draw_is_linear_and_centered() {
        let p = problem();
        let beta = DVector::from_element(4, 0.2);
        let ones = vec![1.0; p.n()];
        assert!(multiplier_draw(&p, &beta, &ones).unwrap().amax() < 1e-12);
        let a: Vec<f64> = (0..p.n()).map(|i| (i as f64).sin()).collect();
        let b: Vec<f64> = (0..p.n()).map(|i| (i as f64).cos()).collect();
        let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x - 3.0 * y).collect();
        let lhs = multiplier_draw(&p, &beta, &ab).unwrap();
        let rhs = multiplier_draw(&p, &beta, &a).unwrap() * 2.0
            - multiplier_draw(&p, &beta, &b).unwrap() * 3.0;
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
    }

    #[test]
    fn derivative_matches_difference_quotient() {
        let p = problem();
        let beta = DVector::from_vec(vec![0.3, -0.1, 0.7, 0.0]);
        let fd = difference_derivative(&p, &beta, 1e-6).unwrap();
        assert_abs_diff_eq!(fd, derivative_map(&p), epsilon = 1e-6);
    }

    #[test]
    fn local_space_relaxes_slack_rows() {
        let sieve = make_basis(1, KnotRule::UniformQuantile).unwrap();
        let r = RestrictionSet::unrestricted(4)
            .with_monotone_decreasing(&sieve)
            .unwrap();
        // Strictly decreasing coefficients: every derivative row is slack.
        let beta = DVector::from_vec(vec![1.0, 0.5, 0.0, -1.0]);
        let slack = &r.inequality_rows().0 * &beta;
        let tight = local_space(&r, &beta, 10.0, f64::INFINITY, f64::INFINITY).unwrap();
        assert_eq!(tight.b_in.amax(), 0.0);
        let loose = local_space(&r, &beta, 10.0, 0.25, f64::INFINITY).unwrap();
        for (rhs, v) in loose.b_in.iter().zip(slack.iter()) {
            assert_abs_diff_eq!(*rhs, 10.0 * (v.max(-0.25) - v), epsilon = 1e-12);
        }
        let boxed = local_space(&r, &beta, 10.0, 0.25, 0.1).unwrap();
        assert_eq!(boxed.n_in(), 3 + 8);
        assert!(local_space(&r, &beta, 10.0, -1.0, 1.0).is_err());
        assert!(local_space(&r, &beta, 10.0, 0.5, 0.0).is_err());
    }

    #[test]
    fn unrestricted_draw_is_projection_residual() {
        let p = problem();
        let beta = DVector::from_element(4, 0.1);
        let omega: Vec<f64> = (0..p.n())
            .map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0)
            .collect();
        let r = RestrictionSet::unrestricted(4);
        let u = bootstrap_statistic(&p, &r, &beta, &omega, f64::INFINITY, f64::INFINITY).unwrap();
        let w = multiplier_draw(&p, &beta, &omega).unwrap();
        let g = p.g_hat();
        let coef = (g.transpose() * g)
            .cholesky()
            .unwrap()
            .solve(&(g.transpose() * &w));
        assert_abs_diff_eq!(u, (w - g * coef).norm(), epsilon = 1e-9);
    }
}
