//! Test statistic, bootstrap, bandwidth selection and critical values.

mod bandwidth;
mod bootstrap;
mod critical;
mod restriction;
mod statistic;

pub use bandwidth::{
    ln_from_draws, rn_from_covariance, select_ln, select_rn, sup_grid, vertex_sup, Bandwidth,
    RnCovariance,
};
pub use bootstrap::{
    bootstrap_statistic, derivative_map, difference_derivative, local_space, multiplier_draw,
    BootstrapEngine, CenteredMoments,
};
pub use critical::{bootstrap_critical_value, chi2_critical_value, chi2_df};
pub use restriction::RestrictionSet;
pub use statistic::{compute_in, set_estimator};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::gmm::{weight_matrix, Dataset, FirstStageWeight, GmmProblem};
use crate::rng::{self, normals, tag};
use crate::splines::{make_basis, KnotRule, SplineBasis};
use crate::{Error, Result};

/// Share of bootstrap draws that may fail before the test is abandoned.
pub const DISCARD_BUDGET: f64 = 0.05;

/// Which null hypothesis to test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TestKind {
    /// `θ` weakly decreasing.
    Monotonicity,
    /// `θ(x0) = c0` with `θ` otherwise unrestricted; chi-square critical value.
    Level { x0: f64, c0: f64 },
    /// `θ(x0) = c0` and `θ` weakly decreasing.
    LevelMonotone { x0: f64, c0: f64 },
}

impl TestKind {
    pub fn restriction(&self, sieve: &SplineBasis) -> Result<RestrictionSet> {
        let r = RestrictionSet::unrestricted(sieve.dim());
        match *self {
            TestKind::Monotonicity => r.with_monotone_decreasing(sieve),
            TestKind::Level { x0, c0 } => r.with_level(sieve, x0, c0),
            TestKind::LevelMonotone { x0, c0 } => {
                r.with_level(sieve, x0, c0)?.with_monotone_decreasing(sieve)
            }
        }
    }

    pub fn uses_chi2(&self) -> bool {
        matches!(self, TestKind::Level { .. })
    }
}

/// Placement of interior knots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KnotPlacement {
    /// Equally spaced, the quantiles of the uniform law.
    #[default]
    Uniform,
    /// Empirical quantiles of the regressor the basis is evaluated at.
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    /// Bootstrap draw count `B`.
    pub draws: usize,
    pub alpha: f64,
    pub q_r: f64,
    pub q_l: f64,
    pub tau: f64,
    /// Fixed `r_n`; `None` selects it from the data.
    pub r_n_override: Option<f64>,
    /// Fixed `l_n`; `None` selects it from the data.
    pub l_n_override: Option<f64>,
    pub draws_for_bandwidths: usize,
    pub sup_grid_points: usize,
    pub rn_covariance: RnCovariance,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            draws: 200,
            alpha: 0.05,
            q_r: 0.05,
            q_l: 0.05,
            tau: 0.0,
            r_n_override: None,
            l_n_override: Some(f64::INFINITY),
            draws_for_bandwidths: 200,
            sup_grid_points: 200,
            rn_covariance: RnCovariance::Printed,
            seed: 0,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.draws == 0 {
            return Err(Error::Config {
                key: "draws".into(),
                message: "must be at least 1".into(),
            });
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config {
                key: "alpha".into(),
                message: format!("{} is not in (0, 1)", self.alpha),
            });
        }
        for (key, q) in [("q_r", self.q_r), ("q_l", self.q_l)] {
            if !(q > 0.0 && q < 1.0) {
                return Err(Error::Config {
                    key: key.into(),
                    message: format!("{q} is not in (0, 1)"),
                });
            }
        }
        if !(self.tau >= 0.0) {
            return Err(Error::Config {
                key: "tau".into(),
                message: format!("{} is negative", self.tau),
            });
        }
        for (key, v) in [
            ("r_n_override", self.r_n_override),
            ("l_n_override", self.l_n_override),
        ] {
            if let Some(v) = v {
                if !(v >= 0.0) || (key == "l_n_override" && v == 0.0) {
                    return Err(Error::Config {
                        key: key.into(),
                        message: format!("{v} is out of range"),
                    });
                }
            }
        }
        if self.draws_for_bandwidths == 0 {
            return Err(Error::Config {
                key: "draws_for_bandwidths".into(),
                message: "must be at least 1".into(),
            });
        }
        if self.sup_grid_points < 2 {
            return Err(Error::Config {
                key: "sup_grid_points".into(),
                message: "must be at least 2".into(),
            });
        }
        Ok(())
    }
}

/// Everything [`run_test`] needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct TestConfig {
    pub kind: TestKind,
    /// Interior knots of the sieve: `j_n = jn_knots + 3`.
    pub jn_knots: usize,
    /// Interior knots of the instruments: `k_n = kn_knots + 3`.
    pub kn_knots: usize,
    pub knots: KnotPlacement,
    pub first_stage: FirstStageWeight,
    pub bootstrap: BootstrapConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Bootstrap,
    Chi2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    /// `I_n(R)`.
    pub statistic: f64,
    /// Critical value on the scale of `statistic`; for the chi-square
    /// method, the square root of the chi-square quantile.
    pub critical_value: f64,
    pub alpha: f64,
    pub method: Method,
    pub reject: bool,
    /// Successful bootstrap draws of `Û`, in draw order.
    pub bootstrap_draws: Vec<f64>,
    pub discarded_draws: usize,
    pub df: Option<usize>,
    pub r_n: Option<f64>,
    pub l_n: Option<f64>,
    pub beta_hat: Vec<f64>,
    /// Weight eigenvalues raised to the floor.
    pub weight_floored: usize,
}

impl TestReport {
    pub fn critical_value_at(&self, alpha: f64) -> Result<f64> {
        match self.method {
            Method::Bootstrap => bootstrap_critical_value(&self.bootstrap_draws, alpha),
            Method::Chi2 => {
                let df = self
                    .df
                    .ok_or_else(|| Error::InvalidArgument("chi-square report without df".into()))?;
                Ok(chi2_critical_value(df, 0, alpha)?.sqrt())
            }
        }
    }

    pub fn reject_at(&self, alpha: f64) -> Result<bool> {
        Ok(self.statistic > self.critical_value_at(alpha)?)
    }
}

fn basis(knots: usize, placement: KnotPlacement, sample: &[f64]) -> Result<SplineBasis> {
    match placement {
        KnotPlacement::Uniform => make_basis(knots, KnotRule::UniformQuantile),
        KnotPlacement::Sample => make_basis(knots, KnotRule::SampleQuantile(sample)),
    }
}

/// Builds the weighted problem and the null restriction.
pub fn prepare(data: &Dataset, config: &TestConfig) -> Result<(GmmProblem, RestrictionSet, usize)> {
    let sieve = basis(config.jn_knots, config.knots, data.x())?;
    let instruments = basis(config.kn_knots, config.knots, data.z())?;
    let restriction = config.kind.restriction(&sieve)?;
    let problem = GmmProblem::new(data, sieve, instruments)?;
    let weight = weight_matrix(&problem, &restriction, config.first_stage)?;
    Ok((
        problem.with_weight(weight.matrix)?,
        restriction,
        weight.floored,
    ))
}

/// Runs one test on one dataset.
pub fn run_test(data: &Dataset, config: &TestConfig) -> Result<TestReport> {
    let boot = &config.bootstrap;
    boot.validate()?;
    let (problem, restriction, weight_floored) = prepare(data, config)?;
    let (statistic, beta_hat) = compute_in(&problem, &restriction)?;

    if config.kind.uses_chi2() {
        let c = problem.j() - restriction.n_eq();
        let df = chi2_df(problem.k(), problem.j(), restriction.n_eq())?;
        let critical_value = chi2_critical_value(problem.k(), c, boot.alpha)?.sqrt();
        return Ok(TestReport {
            statistic,
            critical_value,
            alpha: boot.alpha,
            method: Method::Chi2,
            reject: statistic > critical_value,
            bootstrap_draws: Vec::new(),
            discarded_draws: 0,
            df: Some(df),
            r_n: None,
            l_n: None,
            beta_hat: beta_hat.iter().copied().collect(),
            weight_floored,
        });
    }

    let r_n = match boot.r_n_override {
        Some(v) => v,
        None if restriction.has_inequalities() => {
            let mut g = rng::stream(boot.seed, &[tag::RN_SELECT]);
            select_rn(
                &problem,
                boot.q_r,
                boot.draws_for_bandwidths,
                boot.sup_grid_points,
                boot.rn_covariance,
                &mut g,
            )?
            .value
        }
        None => f64::INFINITY,
    };
    let l_n = match boot.l_n_override {
        Some(v) => v,
        None => {
            let mut g = rng::stream(boot.seed, &[tag::LN_SELECT]);
            select_ln(&problem, boot.q_l, boot.draws_for_bandwidths, &mut g)?.value
        }
    };

    let betas = set_estimator(&problem, &restriction, boot.tau)?;
    let engine = BootstrapEngine::new(&problem, &restriction, &betas, r_n, l_n)?;
    let mut draws = Vec::with_capacity(boot.draws);
    let mut discarded = 0usize;
    for b in 0..boot.draws {
        let mut g = rng::stream(boot.seed, &[tag::BOOTSTRAP, b as u64]);
        let omega = normals(&mut g, problem.n());
        match engine.statistic(&omega) {
            Ok(u) => draws.push(u),
            Err(e) if e.is_numerical() => {
                log::debug!("bootstrap draw {b} discarded: {e}");
                discarded += 1;
            }
            Err(e) => return Err(e),
        }
    }
    if discarded as f64 > DISCARD_BUDGET * boot.draws as f64 || draws.is_empty() {
        return Err(Error::DiscardBudgetExceeded {
            discarded,
            total: boot.draws,
        });
    }
    if discarded > 0 {
        log::warn!("{discarded} of {} bootstrap draws discarded", boot.draws);
    }
    let critical_value = bootstrap_critical_value(&draws, boot.alpha)?;
    Ok(TestReport {
        statistic,
        critical_value,
        alpha: boot.alpha,
        method: Method::Bootstrap,
        reject: statistic > critical_value,
        bootstrap_draws: draws,
        discarded_draws: discarded,
        df: None,
        r_n: Some(r_n),
        l_n: Some(l_n),
        beta_hat: beta_hat.iter().copied().collect(),
        weight_floored,
    })
}

/// Coefficients as a vector, for callers holding a report.
pub fn beta_vector(report: &TestReport) -> DVector<f64> {
    DVector::from_column_slice(&report.beta_hat)
}
