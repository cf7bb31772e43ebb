//! Moment vector, Jacobian and weighting matrix for the linear conditional
//! moment model `E[Y − θ(X) | Z] = 0` with `θ(x) = p(x)'β`.

use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::inference::RestrictionSet;
use crate::linalg::inv_sqrt_sym;
use crate::qp::{min_weighted_residual, QpOptions};
use crate::splines::SplineBasis;
use crate::{Error, Result};

/// An i.i.d. sample `(Y_i, X_i, Z_i)` with `X, Z ∈ [0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    x: Vec<f64>,
    z: Vec<f64>,
}

impl Dataset {
    pub fn new(y: Vec<f64>, x: Vec<f64>, z: Vec<f64>) -> Result<Self> {
        if y.len() != x.len() || y.len() != z.len() {
            return Err(Error::DimensionMismatch(format!(
                "y, x, z have lengths {}, {}, {}",
                y.len(),
                x.len(),
                z.len()
            )));
        }
        if y.len() < 2 {
            return Err(Error::InvalidArgument(
                "a dataset needs at least two observations".into(),
            ));
        }
        for (name, col) in [("x", &x), ("z", &z)] {
            if let Some(&v) = col.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::OutOfUnitInterval {
                    what: name.into(),
                    value: v,
                });
            }
        }
        if let Some(&v) = y.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite outcome {v}")));
        }
        Ok(Self { y, x, z })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    /// Reads a CSV file with header columns `y`, `x`, `z`.
    pub fn from_csv_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file)
    }

    /// Reads CSV with header columns `y`, `x`, `z` (any order). Errors carry
    /// the 1-based line number of the offending row.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::Input {
                line: 1,
                message: e.to_string(),
            })?
            .clone();
        let column = |name: &str| -> Result<usize> {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Input {
                    line: 1,
                    message: format!("header is missing column `{name}` (expected y,x,z)"),
                })
        };
        let (iy, ix, iz) = (column("y")?, column("x")?, column("z")?);
        let (mut y, mut x, mut z) = (Vec::new(), Vec::new(), Vec::new());
        for record in rdr.records() {
            let record = record.map_err(|e| Error::Input {
                line: e.position().map(|p| p.line() as usize).unwrap_or(0),
                message: e.to_string(),
            })?;
            let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
            let field = |i: usize, name: &str| -> Result<f64> {
                let raw = record.get(i).ok_or_else(|| Error::Input {
                    line,
                    message: format!("missing field `{name}`"),
                })?;
                raw.parse::<f64>().map_err(|_| Error::Input {
                    line,
                    message: format!("field `{name}` is not a number: {raw:?}"),
                })
            };
            let (vy, vx, vz) = (field(iy, "y")?, field(ix, "x")?, field(iz, "z")?);
            for (name, v) in [("x", vx), ("z", vz)] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Input {
                        line,
                        message: format!("`{name}` = {v} is outside [0, 1]"),
                    });
                }
            }
            if !vy.is_finite() {
                return Err(Error::Input {
                    line,
                    message: format!("`y` = {vy} is not finite"),
                });
            }
            y.push(vy);
            x.push(vx);
            z.push(vz);
        }
        Self::new(y, x, z)
    }
}

/// Blockwise Kronecker product of partitioned vectors:
/// `a * b = ((a_1 ⊗ b_1)', …, (a_J ⊗ b_J)')'`.
pub fn khatri_rao(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "partition counts differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter()
        .zip(b)
        .flat_map(|(ai, bi)| ai.iter().flat_map(move |&s| bi.iter().map(move |&t| s * t)))
        .collect())
}

/// Sample moment ingredients for one dataset.
///
/// With `P` the `n × j` sieve design and `Q` the `n × k` instrument design,
/// `Ĝ = Q'P / n` and `m̂ = Q'Y / √n`, so that the scaled moment vector at
/// `β` is `m̂ − √n Ĝ β`.
#[derive(Debug, Clone)]
pub struct GmmProblem {
    sieve: SplineBasis,
    instruments: SplineBasis,
    y: DVector<f64>,
    p_design: DMatrix<f64>,
    q_design: DMatrix<f64>,
    g_hat: DMatrix<f64>,
    m_hat: DVector<f64>,
    sigma_hat: DMatrix<f64>,
}

impl GmmProblem {
    /// Builds designs and moments; the weight starts as the identity.
    pub fn new(data: &Dataset, sieve: SplineBasis, instruments: SplineBasis) -> Result<Self> {
        let n = data.n() as f64;
        let p_design = sieve.design(data.x())?;
        let q_design = instruments.design(data.z())?;
        let y = DVector::from_column_slice(data.y());
        let g_hat = q_design.transpose() * &p_design / n;
        let m_hat = q_design.transpose() * &y / n.sqrt();
        let k = instruments.dim();
        if data.n() <= k {
            log::warn!("sample size {} does not exceed the {} moments", data.n(), k);
        }
        Ok(Self {
            sieve,
            instruments,
            y,
            p_design,
            q_design,
            g_hat,
            m_hat,
            sigma_hat: DMatrix::identity(k, k),
        })
    }

    /// Replaces the weighting matrix `Σ̂`.
    pub fn with_weight(mut self, sigma_hat: DMatrix<f64>) -> Result<Self> {
        let k = self.k();
        if sigma_hat.nrows() != k || sigma_hat.ncols() != k {
            return Err(Error::DimensionMismatch(format!(
                "weight must be {k}x{k}, got {}x{}",
                sigma_hat.nrows(),
                sigma_hat.ncols()
            )));
        }
        self.sigma_hat = sigma_hat;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn sqrt_n(&self) -> f64 {
        (self.n() as f64).sqrt()
    }

    /// Sieve dimension `j_n`.
    pub fn j(&self) -> usize {
        self.sieve.dim()
    }

    /// Number of moments `k_n`.
    pub fn k(&self) -> usize {
        self.instruments.dim()
    }

    pub fn sieve(&self) -> &SplineBasis {
        &self.sieve
    }

    pub fn instruments(&self) -> &SplineBasis {
        &self.instruments
    }

    pub fn g_hat(&self) -> &DMatrix<f64> {
        &self.g_hat
    }

    pub fn m_hat(&self) -> &DVector<f64> {
        &self.m_hat
    }

    pub fn sigma_hat(&self) -> &DMatrix<f64> {
        &self.sigma_hat
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn p_design(&self) -> &DMatrix<f64> {
        &self.p_design
    }

    pub fn q_design(&self) -> &DMatrix<f64> {
        &self.q_design
    }

    /// `√n Ĝ`, the Jacobian of `−moment_vector` in `β`.
    pub fn scaled_jacobian(&self) -> DMatrix<f64> {
        &self.g_hat * self.sqrt_n()
    }

    fn check_beta(&self, beta: &DVector<f64>) -> Result<()> {
        if beta.len() != self.j() {
            return Err(Error::DimensionMismatch(format!(
                "coefficient vector has {} entries, sieve has {}",
                beta.len(),
                self.j()
            )));
        }
        Ok(())
    }

    /// Residuals `Y_i − p(X_i)'β`.
    pub fn residuals(&self, beta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_beta(beta)?;
        Ok(&self.y - &self.p_design * beta)
    }

    /// `(1/√n) Σ (Y_i − p(X_i)'β) q(Z_i) = m̂ − √n Ĝ β`.
    pub fn moment_vector(&self, beta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_beta(beta)?;
        Ok(&self.m_hat - &self.g_hat * beta * self.sqrt_n())
    }

    /// `Q_n(β) = ‖Σ̂ · moment_vector(β)‖₂`.
    pub fn criterion(&self, beta: &DVector<f64>) -> Result<f64> {
        Ok((&self.sigma_hat * self.moment_vector(beta)?).norm())
    }
}

/// Weight used by the first-stage fit inside [`weight_matrix`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FirstStageWeight {
    /// Inverse square root of `(1/n) Σ q q'`: two-stage least squares.
    #[default]
    InstrumentGram,
    Identity,
}

/// A weighting matrix with conditioning diagnostics.
#[derive(Debug, Clone)]
pub struct WeightMatrix {
    pub matrix: DMatrix<f64>,
    /// Eigenvalues of `V̂` raised to the floor; nonzero is a warning.
    pub floored: usize,
    pub condition: f64,
    /// First-stage coefficients.
    pub first_stage: DVector<f64>,
}

/// Inverse symmetric square root of `V̂ = (1/n) Σ ε_i² q(Z_i) q(Z_i)'`.
pub fn weight_from_residuals(
    q_design: &DMatrix<f64>,
    residuals: &DVector<f64>,
) -> Result<(DMatrix<f64>, usize, f64)> {
    let n = q_design.nrows();
    if residuals.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} residuals for {} observations",
            residuals.len(),
            n
        )));
    }
    let mut scaled = q_design.clone();
    for (mut row, e) in scaled.row_iter_mut().zip(residuals.iter()) {
        row *= *e;
    }
    let v_hat = scaled.transpose() * &scaled / n as f64;
    let s = inv_sqrt_sym(&v_hat)?;
    if s.floored > 0 {
        log::warn!(
            "{} eigenvalue(s) of the moment variance were floored",
            s.floored
        );
    }
    Ok((s.matrix, s.floored, s.condition))
}

/// Optimal weighting matrix from a first stage constrained to the null.
///
/// Stage one minimizes `‖W₀(m̂ − √n Ĝβ)‖` over the null restriction; stage
/// two returns `V̂^{-1/2}` at the stage-one residuals.
pub fn weight_matrix(
    problem: &GmmProblem,
    null: &RestrictionSet,
    first_stage: FirstStageWeight,
) -> Result<WeightMatrix> {
    let k = problem.k();
    let w0 = match first_stage {
        FirstStageWeight::InstrumentGram => {
            let gram = problem.q_design.transpose() * &problem.q_design / problem.n() as f64;
            inv_sqrt_sym(&gram)?.matrix
        }
        FirstStageWeight::Identity => DMatrix::identity(k, k),
    };
    let fit = min_weighted_residual(
        &w0,
        problem.m_hat(),
        &problem.scaled_jacobian(),
        &null.constraints(),
        &QpOptions::default(),
    )?;
    let resid = problem.residuals(&fit.x)?;
    let (matrix, floored, condition) = weight_from_residuals(&problem.q_design, &resid)?;
    Ok(WeightMatrix {
        matrix,
        floored,
        condition,
        first_stage: fit.x,
    })
}
