//! Dense convex quadratic programming.
//!
//! Solves
//!
//! ```text
//! minimize   ½ x'Hx + g'x
//! subject to A_eq x  = b_eq
//!            A_in x <= b_in
//! ```
//!
//! with a primal active-set method. A feasible starting point is found by a
//! phase-1 problem that minimizes the largest inequality violation through a
//! short sequence of proximal QPs, each of which starts feasible. Problems in
//! this crate have at most a few dozen variables and constraints, so every
//! step solves the full KKT system by LU.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{norm_inf, vcat, vstack};
use crate::{Error, Result};

/// Affine constraints `A_eq x = b_eq`, `A_in x <= b_in` on a `dim`-vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraints {
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
}

impl LinearConstraints {
    /// No constraints on `R^dim`.
    pub fn none(dim: usize) -> Self {
        Self {
            a_eq: DMatrix::zeros(0, dim),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, dim),
            b_in: DVector::zeros(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.a_eq.ncols()
    }

    pub fn n_eq(&self) -> usize {
        self.a_eq.nrows()
    }

    pub fn n_in(&self) -> usize {
        self.a_in.nrows()
    }

    fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.a_in.ncols() != d
            || self.b_eq.len() != self.a_eq.nrows()
            || self.b_in.len() != self.a_in.nrows()
        {
            return Err(Error::DimensionMismatch(format!(
                "constraint blocks A_eq {}x{}, b_eq {}, A_in {}x{}, b_in {}",
                self.a_eq.nrows(),
                self.a_eq.ncols(),
                self.b_eq.len(),
                self.a_in.nrows(),
                self.a_in.ncols(),
                self.b_in.len()
            )));
        }
        Ok(())
    }

    /// Appends equality rows.
    pub fn with_equalities(mut self, a: &DMatrix<f64>, b: &DVector<f64>) -> Self {
        self.a_eq = vstack(&[&self.a_eq, a], self.dim());
        self.b_eq = vcat(&[&self.b_eq, b]);
        self
    }

    /// Appends inequality rows.
    pub fn with_inequalities(mut self, a: &DMatrix<f64>, b: &DVector<f64>) -> Self {
        self.a_in = vstack(&[&self.a_in, a], self.dim());
        self.b_in = vcat(&[&self.b_in, b]);
        self
    }

    /// Both blocks of `self` followed by those of `other`.
    pub fn intersect(&self, other: &LinearConstraints) -> Self {
        self.clone()
            .with_equalities(&other.a_eq, &other.b_eq)
            .with_inequalities(&other.a_in, &other.b_in)
    }

    /// `‖x‖_∞ <= radius` as `2 dim` inequality rows.
    pub fn with_box(self, radius: f64) -> Self {
        let d = self.dim();
        let mut a = DMatrix::zeros(2 * d, d);
        for j in 0..d {
            a[(2 * j, j)] = 1.0;
            a[(2 * j + 1, j)] = -1.0;
        }
        let b = DVector::from_element(2 * d, radius);
        self.with_inequalities(&a, &b)
    }

    /// Largest equality or inequality violation at `x`.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let eq = norm_inf(&(&self.a_eq * x - &self.b_eq));
        let ineq = (&self.a_in * x - &self.b_in)
            .iter()
            .fold(0.0, |m: f64, v| m.max(*v));
        eq.max(ineq)
    }
}

/// `½ x'Hx + g'x` subject to linear constraints.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub constraints: LinearConstraints,
}

impl QpProblem {
    pub fn new(h: DMatrix<f64>, g: DVector<f64>, constraints: LinearConstraints) -> Result<Self> {
        let d = g.len();
        if h.nrows() != d || h.ncols() != d || constraints.dim() != d {
            return Err(Error::DimensionMismatch(format!(
                "H is {}x{}, g has {} entries, constraints act on {} variables",
                h.nrows(),
                h.ncols(),
                d,
                constraints.dim()
            )));
        }
        constraints.validate()?;
        let scale = h.iter().fold(1.0, |m: f64, v| m.max(v.abs()));
        if (&h - h.transpose()).iter().any(|v| v.abs() > 1e-12 * scale) {
            return Err(Error::InvalidArgument("H is not symmetric".into()));
        }
        Ok(Self { h, g, constraints })
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QpOptions {
    /// Iteration cap; `None` means `100 (d + m_in)`.
    pub max_iter: Option<usize>,
    /// Relative tolerance for feasibility, step and multiplier tests.
    pub tol: f64,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            max_iter: None,
            tol: 1e-10,
        }
    }
}

/// A KKT point of a convex QP.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub eq_multipliers: DVector<f64>,
    /// Nonnegative; zero off the active set.
    pub in_multipliers: DVector<f64>,
    /// Inequality indices in the final working set, ascending.
    pub active_set: Vec<usize>,
    /// Max of stationarity, primal infeasibility, complementarity and dual
    /// infeasibility residuals.
    pub kkt_residual: f64,
    /// Ridge added to `H` when a KKT system was singular (0 if none).
    pub ridge: f64,
    pub iterations: usize,
}

/// Solves `problem` to a KKT point.
pub fn solve(problem: &QpProblem, options: &QpOptions) -> Result<QpSolution> {
    let c = &problem.constraints;
    let d = problem.dim();
    let max_iter = options.max_iter.unwrap_or(100 * (d + c.n_in()));
    let x0 = phase_one(c, options, max_iter)?;
    let inner = active_set(&problem.h, &problem.g, c, x0, Vec::new(), options, max_iter)?;
    let mut lambda = DVector::zeros(c.n_in());
    for (slot, &i) in inner.working.iter().enumerate() {
        lambda[i] = inner.in_mult[slot].max(0.0);
    }
    let mut active_set = inner.working.clone();
    active_set.sort_unstable();
    let x = inner.x;
    let kkt_residual = kkt_residual(problem, &x, &inner.eq_mult, &lambda);
    Ok(QpSolution {
        objective: problem.objective(&x),
        x,
        eq_multipliers: inner.eq_mult,
        in_multipliers: lambda,
        active_set,
        kkt_residual,
        ridge: inner.ridge,
        iterations: inner.iterations,
    })
}

fn kkt_residual(p: &QpProblem, x: &DVector<f64>, mu: &DVector<f64>, lambda: &DVector<f64>) -> f64 {
    let c = &p.constraints;
    let stationarity =
        norm_inf(&(&p.h * x + &p.g + c.a_eq.transpose() * mu + c.a_in.transpose() * lambda));
    let slack = &c.a_in * x - &c.b_in;
    let primal = c.max_violation(x);
    let comp = slack
        .iter()
        .zip(lambda.iter())
        .fold(0.0, |m: f64, (s, l)| m.max((s * l).abs()));
    let dual = lambda.iter().fold(0.0, |m: f64, l| m.max(-l));
    stationarity.max(primal).max(comp).max(dual)
}

struct Inner {
    x: DVector<f64>,
    working: Vec<usize>,
    eq_mult: DVector<f64>,
    in_mult: Vec<f64>,
    ridge: f64,
    iterations: usize,
}

/// Solves `[H A'; A 0] [p; ν] = rhs`, adding a ridge to `H` if the system is
/// numerically singular. Returns the solution and the ridge used.
fn solve_kkt(
    h: &DMatrix<f64>,
    a: &DMatrix<f64>,
    rhs: &DVector<f64>,
) -> Result<(DVector<f64>, f64)> {
    let d = h.nrows();
    let m = a.nrows();
    let mut k = DMatrix::zeros(d + m, d + m);
    k.view_mut((0, 0), (d, d)).copy_from(h);
    k.view_mut((0, d), (d, m)).copy_from(&a.transpose());
    k.view_mut((d, 0), (m, d)).copy_from(a);

    let attempt = |k: &DMatrix<f64>| -> Option<DVector<f64>> {
        let lu = k.clone().full_piv_lu();
        let u = lu.u();
        let diag: Vec<f64> = (0..d + m).map(|i| u[(i, i)].abs()).collect();
        let max = diag.iter().cloned().fold(0.0, f64::max);
        let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(max > 0.0) || min < 1e-13 * max {
            return None;
        }
        lu.solve(rhs).filter(|s| s.iter().all(|v| v.is_finite()))
    };

    if let Some(s) = attempt(&k) {
        return Ok((s, 0.0));
    }
    let trace = h.trace();
    let ridge = if trace > 0.0 {
        1e-10 * trace / d as f64
    } else {
        1e-10
    };
    for i in 0..d {
        k[(i, i)] += ridge;
    }
    attempt(&k)
        .map(|s| (s, ridge))
        .ok_or_else(|| Error::NumericalBreakdown("singular KKT system after ridge".into()))
}

/// Whether `v` lies numerically in the span of the rows of `a`.
fn in_row_space(a: &DMatrix<f64>, v: &DVector<f64>) -> bool {
    if a.nrows() == 0 {
        return false;
    }
    let at = a.transpose();
    let svd = at.clone().svd(true, true);
    let eps = 1e-12 * svd.singular_values.max();
    match svd.solve(v, eps) {
        Ok(coef) => (v - at * coef).norm() <= 1e-9 * v.norm(),
        Err(_) => false,
    }
}

/// Primal active-set iterations from a feasible `x`.
fn active_set(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    c: &LinearConstraints,
    mut x: DVector<f64>,
    mut working: Vec<usize>,
    options: &QpOptions,
    max_iter: usize,
) -> Result<Inner> {
    let d = g.len();
    let me = c.n_eq();
    let tol = options.tol;
    let mut ridge = 0.0f64;
    let row_norms: Vec<f64> = (0..c.n_in()).map(|i| c.a_in.row(i).norm()).collect();
    // Set after an unblocked full step: x then minimizes over the working
    // face and any remaining step is roundoff.
    let mut at_face_min = false;

    for iter in 0..max_iter {
        let grad = h * &x + g;
        let mut a_w = DMatrix::zeros(me + working.len(), d);
        a_w.view_mut((0, 0), (me, d)).copy_from(&c.a_eq);
        for (slot, &i) in working.iter().enumerate() {
            a_w.row_mut(me + slot).copy_from(&c.a_in.row(i));
        }
        let mut rhs = DVector::zeros(d + a_w.nrows());
        rhs.rows_mut(0, d).copy_from(&(-&grad));
        let (sol, r) = solve_kkt(h, &a_w, &rhs)?;
        ridge = ridge.max(r);
        let p = sol.rows(0, d).into_owned();
        let nu = sol.rows(d, a_w.nrows()).into_owned();

        let x_scale = 1.0 + norm_inf(&x);
        if at_face_min || norm_inf(&p) <= 1e-11 * x_scale {
            at_face_min = false;
            let grad_scale = 1.0 + norm_inf(&grad) + norm_inf(g);
            let dual_tol = tol * grad_scale;
            // Most negative multiplier leaves; ties go to the lowest index.
            let mut leave: Option<(usize, f64)> = None;
            for (slot, &i) in working.iter().enumerate() {
                let l = nu[me + slot];
                if l < -dual_tol {
                    match leave {
                        Some((s, best)) if l > best || (l == best && working[s] < i) => {}
                        _ => leave = Some((slot, l)),
                    }
                }
            }
            match leave {
                None => {
                    return Ok(Inner {
                        x,
                        eq_mult: nu.rows(0, me).into_owned(),
                        in_mult: nu.iter().skip(me).cloned().collect(),
                        working,
                        ridge,
                        iterations: iter,
                    })
                }
                Some((slot, _)) => {
                    working.remove(slot);
                }
            }
        } else {
            let mut alpha = 1.0;
            let mut blocking = None;
            for (i, row_norm) in row_norms.iter().enumerate() {
                if working.contains(&i) {
                    continue;
                }
                let ap = c.a_in.row(i).dot(&p.transpose());
                if ap > 1e-14 * row_norm * norm_inf(&p) {
                    let slack = (c.b_in[i] - c.a_in.row(i).dot(&x.transpose())).max(0.0);
                    let step = slack / ap;
                    // A row in the span of the working set cannot truly
                    // block; a positive `ap` there is roundoff.
                    if step < alpha && !in_row_space(&a_w, &c.a_in.row(i).transpose()) {
                        alpha = step;
                        blocking = Some(i);
                    }
                }
            }
            x += alpha * p;
            match blocking {
                Some(i) => working.push(i),
                None => at_face_min = true,
            }
        }
    }
    Err(Error::MaxIterations(max_iter))
}

/// Finds a feasible point or reports infeasibility.
fn phase_one(c: &LinearConstraints, options: &QpOptions, max_iter: usize) -> Result<DVector<f64>> {
    let d = c.dim();
    let scale = 1.0 + norm_inf(&c.b_eq).max(norm_inf(&c.b_in));
    let feas_tol = 1e-9 * scale;

    let mut x = if c.n_eq() > 0 {
        let svd = c.a_eq.clone().svd(true, true);
        let eps = 1e-12 * svd.singular_values.max();
        svd.solve(&c.b_eq, eps)
            .map_err(|e| Error::NumericalBreakdown(e.to_string()))?
    } else {
        DVector::zeros(d)
    };
    let eq_resid = norm_inf(&(&c.a_eq * &x - &c.b_eq));
    if eq_resid > feas_tol {
        return Err(Error::Infeasible {
            violation: eq_resid,
        });
    }
    let violation = |x: &DVector<f64>| {
        (&c.a_in * x - &c.b_in)
            .iter()
            .fold(0.0, |m: f64, v| m.max(*v))
    };
    if violation(&x) <= feas_tol {
        return Ok(x);
    }

    // Variables (x, t): minimize t + ρ/2 (‖x - x_c‖² + t²) subject to the
    // equalities, A_in x - t <= b_in and t >= 0.
    let mi = c.n_in();
    let mut a_in = DMatrix::zeros(mi + 1, d + 1);
    a_in.view_mut((0, 0), (mi, d)).copy_from(&c.a_in);
    for i in 0..mi {
        a_in[(i, d)] = -1.0;
    }
    a_in[(mi, d)] = -1.0;
    let mut b_in = DVector::zeros(mi + 1);
    b_in.rows_mut(0, mi).copy_from(&c.b_in);
    let mut a_eq = DMatrix::zeros(c.n_eq(), d + 1);
    a_eq.view_mut((0, 0), (c.n_eq(), d)).copy_from(&c.a_eq);
    let lifted = LinearConstraints {
        a_eq,
        b_eq: c.b_eq.clone(),
        a_in,
        b_in,
    };

    let rho = 1e-3;
    let h = DMatrix::identity(d + 1, d + 1) * rho;
    let mut t = violation(&x);
    for _ in 0..200 {
        let mut g = DVector::zeros(d + 1);
        g.rows_mut(0, d).copy_from(&(-rho * &x));
        g[d] = 1.0;
        let mut z = DVector::zeros(d + 1);
        z.rows_mut(0, d).copy_from(&x);
        z[d] = t;
        let inner = active_set(&h, &g, &lifted, z, Vec::new(), options, max_iter)?;
        let x_new = inner.x.rows(0, d).into_owned();
        let v = violation(&x_new);
        let moved = norm_inf(&(&x_new - &x));
        x = x_new;
        if v <= feas_tol {
            return Ok(x);
        }
        if moved <= 1e-12 * (1.0 + norm_inf(&x)) {
            return Err(Error::Infeasible { violation: v });
        }
        t = v;
    }
    Err(Error::Infeasible {
        violation: violation(&x),
    })
}

/// Minimizer of `‖W (b - G x)‖₂` over the constraint set.
#[derive(Debug, Clone)]
pub struct WeightedFit {
    pub x: DVector<f64>,
    pub value: f64,
    pub solution: QpSolution,
}

/// Minimizes `‖W(b − Gx)‖₂` subject to `constraints`, through the QP with
/// `H = 2 G'W'WG` and `g = −2 G'W'W b`.
pub fn min_weighted_residual(
    w: &DMatrix<f64>,
    b: &DVector<f64>,
    g: &DMatrix<f64>,
    constraints: &LinearConstraints,
    options: &QpOptions,
) -> Result<WeightedFit> {
    if w.ncols() != b.len() || g.nrows() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "W is {}x{}, b has {} entries, G is {}x{}",
            w.nrows(),
            w.ncols(),
            b.len(),
            g.nrows(),
            g.ncols()
        )));
    }
    let wg = w * g;
    let wb = w * b;
    let h = wg.transpose() * &wg * 2.0;
    let h = (&h + h.transpose()) * 0.5;
    let lin = wg.transpose() * &wb * -2.0;
    let problem = QpProblem::new(h, lin, constraints.clone())?;
    let solution = solve(&problem, options)?;
    let value = (&wb - &wg * &solution.x).norm();
    Ok(WeightedFit {
        x: solution.x.clone(),
        value,
        solution,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    #[test]
    fn unconstrained_minimum() {
        let p = QpProblem::new(
            DMatrix::identity(2, 2),
            dv(&[-1.0, -2.0]),
            LinearConstraints::none(2),
        )
        .unwrap();
        let s = solve(&p, &QpOptions::default()).unwrap();
        assert_abs_diff_eq!(s.x, dv(&[1.0, 2.0]), epsilon = 1e-12);
        assert_abs_diff_eq!(s.objective, -2.5, epsilon = 1e-12);
        assert!(s.kkt_residual <= 1e-8);
    }

    #[test]
    fn halfspace_projection() {
        let c = LinearConstraints::none(2)
            .with_inequalities(&DMatrix::from_row_slice(1, 2, &[-1.0, 0.0]), &dv(&[-1.0]));
        let p = QpProblem::new(DMatrix::identity(2, 2) * 2.0, dv(&[0.0, 0.0]), c).unwrap();
        let s = solve(&p, &QpOptions::default()).unwrap();
        assert_abs_diff_eq!(s.x, dv(&[1.0, 0.0]), epsilon = 1e-12);
        assert_eq!(s.active_set, vec![0]);
        assert_abs_diff_eq!(s.in_multipliers[0], 2.0, epsilon = 1e-10);
        assert!(s.kkt_residual <= 1e-8);
    }

    #[test]
    fn equality_projection() {
        let c = LinearConstraints::none(2)
            .with_equalities(&DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), &dv(&[1.0]));
        let p = QpProblem::new(DMatrix::identity(2, 2) * 2.0, dv(&[-2.0, -4.0]), c).unwrap();
        let s = solve(&p, &QpOptions::default()).unwrap();
        assert_abs_diff_eq!(s.x, dv(&[0.0, 1.0]), epsilon = 1e-12);
        assert!(s.kkt_residual <= 1e-8);
    }

    #[test]
    fn detects_infeasibility() {
        // x1 <= -1 and x1 >= 1.
        let c = LinearConstraints::none(2).with_inequalities(
            &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]),
            &dv(&[-1.0, -1.0]),
        );
        let p = QpProblem::new(DMatrix::identity(2, 2), dv(&[0.0, 0.0]), c).unwrap();
        assert!(matches!(
            solve(&p, &QpOptions::default()),
            Err(Error::Infeasible { .. })
        ));
        let c = LinearConstraints::none(1).with_equalities(
            &DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            &dv(&[0.0, 1.0]),
        );
        let p = QpProblem::new(DMatrix::identity(1, 1), dv(&[0.0]), c).unwrap();
        assert!(matches!(
            solve(&p, &QpOptions::default()),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn phase_one_reaches_far_feasible_region() {
        let c = LinearConstraints::none(2).with_inequalities(
            &DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0]),
            &dv(&[-1e4, -3.0]),
        );
        let p = QpProblem::new(DMatrix::identity(2, 2), dv(&[0.0, 0.0]), c).unwrap();
        let s = solve(&p, &QpOptions::default()).unwrap();
        assert_abs_diff_eq!(s.x, dv(&[1e4, 3.0]), epsilon = 1e-8);
    }

    #[test]
    fn singular_hessian_uses_ridge() {
        // ½ (x1 + x2 - 1)² has a line of minimizers; x1 <= 0.2 picks one.
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let c = LinearConstraints::none(2)
            .with_inequalities(&DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), &dv(&[0.2]));
        let p = QpProblem::new(h, dv(&[-1.0, -1.0]), c).unwrap();
        let s = solve(&p, &QpOptions::default()).unwrap();
        assert!(s.ridge > 0.0);
        assert_abs_diff_eq!(s.x[0] + s.x[1], 1.0, epsilon = 1e-8);
        assert!(s.kkt_residual <= 1e-8);
    }

    #[test]
    fn rejects_asymmetric_hessian() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(QpProblem::new(h, dv(&[0.0, 0.0]), LinearConstraints::none(2)).is_err());
    }

    #[test]
    fn weighted_residual_examples() {
        let fit = min_weighted_residual(
            &DMatrix::identity(3, 3),
            &dv(&[0.3, -1.0, 2.0]),
            &DMatrix::identity(3, 3),
            &LinearConstraints::none(3),
            &QpOptions::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(fit.x, dv(&[0.3, -1.0, 2.0]), epsilon = 1e-12);
        assert_abs_diff_eq!(fit.value, 0.0, epsilon = 1e-12);

        let fit = min_weighted_residual(
            &DMatrix::identity(2, 2),
            &dv(&[1.0, 0.0]),
            &DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            &LinearConstraints::none(1),
            &QpOptions::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(fit.x[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.value, 0.5f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn box_rows() {
        let c = LinearConstraints::none(2).with_box(0.5);
        assert_eq!(c.n_in(), 4);
        let p = QpProblem::new(DMatrix::identity(2, 2), dv(&[-3.0, 1.0]), c).unwrap();
        let s = solve(&p, &QpOptions::default()).unwrap();
        assert_abs_diff_eq!(s.x, dv(&[0.5, -0.5]), epsilon = 1e-12);
    }
}
