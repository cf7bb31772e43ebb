//! Simulation design and size/power experiments.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::normal_cdf;
use crate::gmm::{Dataset, FirstStageWeight};
use crate::inference::{
    run_test, BootstrapConfig, KnotPlacement, TestConfig, TestKind, TestReport,
};
use crate::rng::{self, tag};
use crate::{Error, Result};

/// Nominal levels reported by every experiment.
pub const LEVELS: [f64; 3] = [0.10, 0.05, 0.01];

/// Lower Cholesky factor of the covariance of `(X*, Z*, ε)` with rows
/// `(1, .5, .3)`, `(.5, 1, 0)`, `(.3, 0, 1)`.
fn design_cholesky() -> [[f64; 3]; 3] {
    let l21 = 0.5;
    let l22 = (1.0f64 - 0.25).sqrt();
    let l31 = 0.3;
    let l32 = (0.0 - l31 * l21) / l22;
    let l33 = (1.0 - l31 * l31 - l32 * l32).sqrt();
    [[1.0, 0.0, 0.0], [l21, l22, 0.0], [l31, l32, l33]]
}

/// Structural function `σ(1 − 2Φ((x − 0.5)/σ))`, identically zero at `σ = 0`.
pub fn theta0(x: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    sigma * (1.0 - 2.0 * normal_cdf((x - 0.5) / sigma))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    /// Data generated under the null.
    #[default]
    None,
    /// `Y = δX + ε`.
    Slope,
    /// `Y = θ₀(X) + δ + ε`.
    LevelShift,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub n: usize,
    pub replications: usize,
    pub sigma: f64,
    pub delta: f64,
    pub alternative: Alternative,
    pub jn_knots: usize,
    pub kn_knots: usize,
    pub test: TestKind,
    pub knots: KnotPlacement,
    pub first_stage: FirstStageWeight,
    pub bootstrap: BootstrapConfig,
    pub master_seed: u64,
}

impl McConfig {
    /// Desk-scale defaults around a given test and `σ`.
    pub fn new(test: TestKind, sigma: f64) -> Self {
        Self {
            n: 500,
            replications: 500,
            sigma,
            delta: 0.0,
            alternative: Alternative::None,
            jn_knots: 0,
            kn_knots: 3,
            test,
            knots: KnotPlacement::Uniform,
            first_stage: FirstStageWeight::InstrumentGram,
            bootstrap: BootstrapConfig::default(),
            master_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config {
                key: "replications".into(),
                message: "must be at least 1".into(),
            });
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::Config {
                key: "sigma".into(),
                message: format!("{} is negative", self.sigma),
            });
        }
        if self.n < 2 {
            return Err(Error::Config {
                key: "n".into(),
                message: "need at least two observations".into(),
            });
        }
        if !self.delta.is_finite() {
            return Err(Error::Config {
                key: "delta".into(),
                message: "must be finite".into(),
            });
        }
        self.bootstrap.validate()
    }

    fn test_config(&self, rep: usize) -> TestConfig {
        let mut bootstrap = self.bootstrap.clone();
        bootstrap.seed = replication_seed(self.master_seed, rep);
        TestConfig {
            kind: self.test,
            jn_knots: self.jn_knots,
            kn_knots: self.kn_knots,
            knots: self.knots,
            first_stage: self.first_stage,
            bootstrap,
        }
    }
}

/// Seed handed to the test of one replication.
pub fn replication_seed(master: u64, rep: usize) -> u64 {
    rng::stream(master, &[tag::REPLICATION, rep as u64]).random()
}

/// One simulated sample for replication `rep`.
pub fn gen_data(config: &McConfig, rep: usize) -> Result<Dataset> {
    let mut g = rng::stream(config.master_seed, &[tag::DATA, rep as u64]);
    let l = design_cholesky();
    let n = config.n;
    let (mut y, mut x, mut z) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for _ in 0..n {
        let e: [f64; 3] = [
            g.sample(rand_distr::StandardNormal),
            g.sample(rand_distr::StandardNormal),
            g.sample(rand_distr::StandardNormal),
        ];
        let xs = l[0][0] * e[0];
        let zs = l[1][0] * e[0] + l[1][1] * e[1];
        let eps = l[2][0] * e[0] + l[2][1] * e[1] + l[2][2] * e[2];
        let xi = normal_cdf(xs);
        let signal = match config.alternative {
            Alternative::None => theta0(xi, config.sigma),
            Alternative::Slope => config.delta * xi,
            Alternative::LevelShift => theta0(xi, config.sigma) + config.delta,
        };
        x.push(xi);
        z.push(normal_cdf(zs));
        y.push(signal + eps);
    }
    Dataset::new(y, x, z)
}

/// Outcome of one replication that ran to completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub index: usize,
    pub statistic: f64,
    /// Critical values at [`LEVELS`].
    pub critical_values: [f64; 3],
    pub decisions: [bool; 3],
    pub discarded_draws: usize,
    pub r_n: Option<f64>,
    pub l_n: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    pub sigma: f64,
    pub delta: f64,
    pub jn: usize,
    pub kn: usize,
    pub q_l: f64,
    pub q_r: f64,
    pub levels: [f64; 3],
    pub rejection_rates: [f64; 3],
    pub standard_errors: [f64; 3],
    pub replications: Vec<Replication>,
    /// Replications abandoned after a numerical failure.
    pub failed: Vec<usize>,
    pub discarded_draws: usize,
    #[serde(skip)]
    pub elapsed: Duration,
}

impl McResult {
    pub fn completed(&self) -> usize {
        self.replications.len()
    }
}

fn replicate(config: &McConfig, rep: usize) -> Result<Replication> {
    let data = gen_data(config, rep)?;
    let report: TestReport = run_test(&data, &config.test_config(rep))?;
    let mut critical_values = [0.0; 3];
    let mut decisions = [false; 3];
    for (i, a) in LEVELS.iter().enumerate() {
        critical_values[i] = report.critical_value_at(*a)?;
        decisions[i] = report.statistic > critical_values[i];
    }
    Ok(Replication {
        index: rep,
        statistic: report.statistic,
        critical_values,
        decisions,
        discarded_draws: report.discarded_draws,
        r_n: report.r_n,
        l_n: report.l_n,
    })
}

/// Size (or, with an alternative set, power) at a single design point.
pub fn run_size(config: &McConfig) -> Result<McResult> {
    config.validate()?;
    let start = Instant::now();
    let outcomes: Vec<(usize, Result<Replication>)> = (0..config.replications)
        .into_par_iter()
        .map(|rep| (rep, replicate(config, rep)))
        .collect();
    let mut replications = Vec::with_capacity(outcomes.len());
    let mut failed = Vec::new();
    for (rep, out) in outcomes {
        match out {
            Ok(r) => replications.push(r),
            Err(e) if e.is_numerical() => {
                log::warn!("replication {rep} failed: {e}");
                failed.push(rep);
            }
            Err(e) => return Err(e),
        }
    }
    if replications.is_empty() {
        return Err(Error::NumericalBreakdown("every replication failed".into()));
    }
    let m = replications.len() as f64;
    let mut rejection_rates = [0.0; 3];
    let mut standard_errors = [0.0; 3];
    for i in 0..LEVELS.len() {
        let hits = replications.iter().filter(|r| r.decisions[i]).count() as f64;
        let p = hits / m;
        rejection_rates[i] = p;
        standard_errors[i] = (p * (1.0 - p) / m).sqrt();
    }
    let discarded_draws = replications.iter().map(|r| r.discarded_draws).sum();
    Ok(McResult {
        sigma: config.sigma,
        delta: config.delta,
        jn: config.jn_knots + 3,
        kn: config.kn_knots + 3,
        q_l: config.bootstrap.q_l,
        q_r: config.bootstrap.q_r,
        levels: LEVELS,
        rejection_rates,
        standard_errors,
        replications,
        failed,
        discarded_draws,
        elapsed: start.elapsed(),
    })
}

/// One experiment per `δ`; replication seeds are shared across the grid.
pub fn run_power(config: &McConfig, deltas: &[f64]) -> Result<Vec<McResult>> {
    if config.alternative == Alternative::None {
        return Err(Error::Config {
            key: "alternative".into(),
            message: "power runs need a slope or level-shift alternative".into(),
        });
    }
    if deltas.is_empty() {
        return Err(Error::Config {
            key: "deltas".into(),
            message: "empty grid".into(),
        });
    }
    deltas
        .iter()
        .map(|&d| {
            let mut c = config.clone();
            c.delta = d;
            run_size(&c)
        })
        .collect()
}

/// Writes one CSV row per (result, level); `with_delta` adds the leading
/// `delta` column.
pub fn write_csv<W: Write>(out: W, results: &[McResult], with_delta: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "sigma",
        "jn",
        "kn",
        "q_l",
        "q_r",
        "level",
        "reject_rate",
        "se",
        "replications",
        "discards",
    ];
    if with_delta {
        header.insert(0, "delta");
    }
    w.write_record(&header).map_err(csv_error)?;
    for r in results {
        for i in 0..LEVELS.len() {
            let mut row = vec![
                r.sigma.to_string(),
                r.jn.to_string(),
                r.kn.to_string(),
                r.q_l.to_string(),
                r.q_r.to_string(),
                r.levels[i].to_string(),
                r.rejection_rates[i].to_string(),
                r.standard_errors[i].to_string(),
                r.completed().to_string(),
                r.discarded_draws.to_string(),
            ];
            if with_delta {
                row.insert(0, r.delta.to_string());
            }
            w.write_record(&row).map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
