//! Clamped B-spline bases on `[0, 1]`.
//!
//! The sieve and the instrument transformations are quadratic B-splines
//! (order 3, continuous first derivative). Because the derivative of a
//! quadratic spline is piecewise linear with breakpoints at the knots, a
//! monotonicity restriction on the whole interval reduces to finitely many
//! linear inequalities on the coefficients.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Order (degree + 1) used throughout the sieve.
pub const QUADRATIC: usize = 3;

/// How interior knots are placed.
#[derive(Debug, Clone, Copy)]
pub enum KnotRule<'a> {
    /// Quantiles `i / (m + 1)` of the Uniform(0, 1) law.
    UniformQuantile,
    /// Empirical quantiles of the given sample (values in `[0, 1]`).
    SampleQuantile(&'a [f64]),
}

/// A clamped B-spline basis on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasis {
    order: usize,
    interior_knots: Vec<f64>,
    /// Full clamped knot vector: `order` zeros, interior knots, `order` ones.
    knots: Vec<f64>,
}

/// Quadratic B-spline basis with `n_interior_knots` knots placed by `rule`.
pub fn make_basis(n_interior_knots: usize, rule: KnotRule<'_>) -> Result<SplineBasis> {
    let m = n_interior_knots;
    let knots: Vec<f64> = match rule {
        KnotRule::UniformQuantile => (1..=m).map(|i| i as f64 / (m + 1) as f64).collect(),
        KnotRule::SampleQuantile(data) => {
            if m > 0 && data.is_empty() {
                return Err(Error::InvalidArgument(
                    "sample-quantile knots need a nonempty sample".into(),
                ));
            }
            if let Some(&bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::OutOfUnitInterval {
                    what: "knot placement sample".into(),
                    value: bad,
                });
            }
            let mut sorted = data.to_vec();
            sorted.sort_by(|a, b| a.total_cmp(b));
            (1..=m)
                .map(|i| empirical_quantile(&sorted, i as f64 / (m + 1) as f64))
                .collect()
        }
    };
    SplineBasis::new(QUADRATIC, knots)
}

/// Linear-interpolation quantile of sorted data.
fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl SplineBasis {
    /// Basis of the given order with the given interior knots.
    pub fn new(order: usize, interior_knots: Vec<f64>) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidArgument(
                "spline order must be at least 1".into(),
            ));
        }
        for w in interior_knots.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::InvalidArgument(format!(
                    "interior knots must be strictly increasing ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        if let Some(&k) = interior_knots.iter().find(|k| !(**k > 0.0 && **k < 1.0)) {
            return Err(Error::InvalidArgument(format!(
                "interior knot {k} is not strictly inside (0, 1)"
            )));
        }
        let mut knots = vec![0.0; order];
        knots.extend_from_slice(&interior_knots);
        knots.extend(std::iter::repeat_n(1.0, order));
        Ok(Self {
            order,
            interior_knots,
            knots,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.order + self.interior_knots.len()
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.interior_knots
    }

    pub fn knot_vector(&self) -> &[f64] {
        &self.knots
    }

    /// `{0} ∪ interior knots ∪ {1}`.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b = Vec::with_capacity(self.interior_knots.len() + 2);
        b.push(0.0);
        b.extend_from_slice(&self.interior_knots);
        b.push(1.0);
        b
    }

    fn check(&self, x: f64) -> Result<()> {
        if (0.0..=1.0).contains(&x) {
            Ok(())
        } else {
            Err(Error::OutOfUnitInterval {
                what: "spline argument".into(),
                value: x,
            })
        }
    }

    /// Knot span `i` with `knots[i] <= x < knots[i + 1]`; `x = 1` uses the
    /// last nondegenerate span.
    fn span(&self, x: f64) -> usize {
        let last = self.dim() - 1;
        if x >= 1.0 {
            return last;
        }
        let mut i = self.order - 1;
        while i < last && self.knots[i + 1] <= x {
            i += 1;
        }
        i
    }

    /// The `degree + 1` nonzero basis functions of the given degree on span `i`.
    fn nonzero(&self, i: usize, x: f64, degree: usize) -> Vec<f64> {
        let t = &self.knots;
        let mut n = vec![0.0; degree + 1];
        let mut left = vec![0.0; degree + 1];
        let mut right = vec![0.0; degree + 1];
        n[0] = 1.0;
        for j in 1..=degree {
            left[j] = x - t[i + 1 - j];
            right[j] = t[i + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        n
    }

    /// Values `(p_1(x), …, p_dim(x))`.
    pub fn eval(&self, x: f64) -> Result<DVector<f64>> {
        self.check(x)?;
        let mut out = DVector::zeros(self.dim());
        self.eval_into(x, out.as_mut_slice());
        Ok(out)
    }

    /// Unchecked evaluation into a preallocated slice of length `dim`.
    pub(crate) fn eval_into(&self, x: f64, out: &mut [f64]) {
        let p = self.order - 1;
        let i = self.span(x);
        out.iter_mut().for_each(|v| *v = 0.0);
        for (r, v) in self.nonzero(i, x, p).into_iter().enumerate() {
            out[i - p + r] = v;
        }
    }

    /// First derivatives `(p_1'(x), …, p_dim'(x))`.
    pub fn eval_deriv(&self, x: f64) -> Result<DVector<f64>> {
        self.check(x)?;
        let mut out = DVector::zeros(self.dim());
        self.deriv_into(x, out.as_mut_slice());
        Ok(out)
    }

    pub(crate) fn deriv_into(&self, x: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let p = self.order - 1;
        if p == 0 {
            return;
        }
        let t = &self.knots;
        let i = self.span(x);
        // Degree p-1 functions N_{i-p+1..=i}.
        let lower = self.nonzero(i, x, p - 1);
        let lower_at = |k: usize| -> f64 {
            if k + p > i && k <= i {
                lower[k + p - 1 - i]
            } else {
                0.0
            }
        };
        for k in (i - p)..=i {
            let mut d = 0.0;
            let w1 = t[k + p] - t[k];
            if w1 > 0.0 {
                d += lower_at(k) / w1;
            }
            let w2 = t[k + p + 1] - t[k + 1];
            if w2 > 0.0 {
                d -= lower_at(k + 1) / w2;
            }
            out[k] = p as f64 * d;
        }
    }

    /// Row-per-observation matrix of basis values.
    pub fn design(&self, xs: &[f64]) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(xs.len(), self.dim());
        let mut row = vec![0.0; self.dim()];
        for (r, &x) in xs.iter().enumerate() {
            self.check(x)?;
            self.eval_into(x, &mut row);
            for (c, v) in row.iter().enumerate() {
                m[(r, c)] = *v;
            }
        }
        Ok(m)
    }

    /// Row-per-point matrix of basis derivatives.
    pub fn deriv_design(&self, xs: &[f64]) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(xs.len(), self.dim());
        let mut row = vec![0.0; self.dim()];
        for (r, &x) in xs.iter().enumerate() {
            self.check(x)?;
            self.deriv_into(x, &mut row);
            for (c, v) in row.iter().enumerate() {
                m[(r, c)] = *v;
            }
        }
        Ok(m)
    }
}

/// Linear inequality rows equivalent to a nonpositive spline derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintLinearization {
    pub breakpoints: Vec<f64>,
    /// Entry `(t, j)` is `p_j'(breakpoints[t])`.
    pub deriv_rows: DMatrix<f64>,
}

/// Rows `D` such that `D β <= 0` iff `x ↦ p(x)'β` is weakly decreasing on
/// `[0, 1]`. Requires an order-3 basis, whose derivative is piecewise linear.
pub fn monotone_decreasing_constraints(basis: &SplineBasis) -> Result<ConstraintLinearization> {
    if basis.order() != QUADRATIC {
        return Err(Error::UnsupportedOrder(basis.order()));
    }
    let breakpoints = basis.breakpoints();
    let deriv_rows = basis.deriv_design(&breakpoints)?;
    debug_assert_eq!(deriv_rows.nrows(), basis.dim() - 1);
    Ok(ConstraintLinearization {
        breakpoints,
        deriv_rows,
    })
}
