use nalgebra::{DMatrix, DVector};

use crate::linalg::{vcat, vstack};
use crate::qp::LinearConstraints;
use crate::splines::{monotone_decreasing_constraints, ConstraintLinearization, SplineBasis};
use crate::{Error, Result};

/// Hypothesized restrictions on sieve coefficients.
///
/// Equalities `F β = c` play the role of `Υ_F(θ) = 0`; inequalities
/// `A β <= b` (the derivative-at-breakpoint rows of a monotonicity
/// restriction, plus any user rows) play the role of `Υ_G(θ) <= 0`. Both
/// maps are affine, so neither carries a curvature term.
#[derive(Debug, Clone, PartialEq)]
pub struct RestrictionSet {
    j: usize,
    eq_rows: DMatrix<f64>,
    eq_rhs: DVector<f64>,
    monotone: Option<ConstraintLinearization>,
    extra_rows: DMatrix<f64>,
    extra_rhs: DVector<f64>,
}

impl RestrictionSet {
    /// The whole sieve space `R^j`.
    pub fn unrestricted(j: usize) -> Self {
        Self {
            j,
            eq_rows: DMatrix::zeros(0, j),
            eq_rhs: DVector::zeros(0),
            monotone: None,
            extra_rows: DMatrix::zeros(0, j),
            extra_rhs: DVector::zeros(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.j
    }

    fn check_row(&self, row: &DVector<f64>) -> Result<()> {
        if row.len() != self.j {
            return Err(Error::DimensionMismatch(format!(
                "restriction row has {} entries, sieve has {}",
                row.len(),
                self.j
            )));
        }
        Ok(())
    }

    /// Adds `row' β = rhs`.
    pub fn with_equality(mut self, row: DVector<f64>, rhs: f64) -> Result<Self> {
        self.check_row(&row)?;
        self.eq_rows = vstack(
            &[
                &self.eq_rows,
                &DMatrix::from_row_slice(1, self.j, row.as_slice()),
            ],
            self.j,
        );
        self.eq_rhs = vcat(&[&self.eq_rhs, &DVector::from_element(1, rhs)]);
        Ok(self)
    }

    /// Adds `θ(x0) = c0`, i.e. `p(x0)'β = c0`.
    pub fn with_level(self, sieve: &SplineBasis, x0: f64, c0: f64) -> Result<Self> {
        let row = sieve.eval(x0)?;
        self.with_equality(row, c0)
    }

    /// Requires `θ` weakly decreasing on `[0, 1]`.
    pub fn with_monotone_decreasing(mut self, sieve: &SplineBasis) -> Result<Self> {
        if sieve.dim() != self.j {
            return Err(Error::DimensionMismatch(format!(
                "sieve has dimension {}, restriction expects {}",
                sieve.dim(),
                self.j
            )));
        }
        self.monotone = Some(monotone_decreasing_constraints(sieve)?);
        Ok(self)
    }

    /// Adds general affine inequalities `A β <= b`.
    pub fn with_inequalities(mut self, a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Self> {
        if a.ncols() != self.j || a.nrows() != b.len() {
            return Err(Error::DimensionMismatch(format!(
                "inequality block is {}x{} with {} bounds",
                a.nrows(),
                a.ncols(),
                b.len()
            )));
        }
        self.extra_rows = vstack(&[&self.extra_rows, a], self.j);
        self.extra_rhs = vcat(&[&self.extra_rhs, b]);
        Ok(self)
    }

    pub fn is_monotone(&self) -> bool {
        self.monotone.is_some()
    }

    pub fn linearization(&self) -> Option<&ConstraintLinearization> {
        self.monotone.as_ref()
    }

    pub fn n_eq(&self) -> usize {
        self.eq_rows.nrows()
    }

    pub fn eq_rows(&self) -> &DMatrix<f64> {
        &self.eq_rows
    }

    pub fn eq_rhs(&self) -> &DVector<f64> {
        &self.eq_rhs
    }

    pub fn has_inequalities(&self) -> bool {
        self.monotone.is_some() || self.extra_rows.nrows() > 0
    }

    /// All inequality rows `A β <= b`: monotonicity rows first.
    pub fn inequality_rows(&self) -> (DMatrix<f64>, DVector<f64>) {
        match &self.monotone {
            Some(lin) => (
                vstack(&[&lin.deriv_rows, &self.extra_rows], self.j),
                vcat(&[&DVector::zeros(lin.deriv_rows.nrows()), &self.extra_rhs]),
            ),
            None => (self.extra_rows.clone(), self.extra_rhs.clone()),
        }
    }

    /// The restriction as QP constraints on `β`.
    pub fn constraints(&self) -> LinearConstraints {
        let (a, b) = self.inequality_rows();
        LinearConstraints::none(self.j)
            .with_equalities(&self.eq_rows, &self.eq_rhs)
            .with_inequalities(&a, &b)
    }
}
