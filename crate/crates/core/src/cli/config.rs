use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::gmm::FirstStageWeight;
use crate::inference::{BootstrapConfig, KnotPlacement, RnCovariance, TestConfig, TestKind};
use crate::montecarlo::{Alternative, McConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    #[default]
    Test,
    McSize,
    McPower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum TestKindName {
    #[default]
    Monotonicity,
    Level,
    LevelMonotone,
}

/// A bandwidth fixed to a value (possibly `inf`) or chosen from the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BandwidthSetting {
    Value(f64),
    Keyword(Select),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Select {
    Select,
}

impl BandwidthSetting {
    pub const SELECT: Self = BandwidthSetting::Keyword(Select::Select);

    pub fn as_override(&self) -> Option<f64> {
        match self {
            BandwidthSetting::Value(v) => Some(*v),
            BandwidthSetting::Keyword(_) => None,
        }
    }
}

impl FromStr for BandwidthSetting {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "select" => Ok(Self::SELECT),
            "inf" | "+inf" => Ok(BandwidthSetting::Value(f64::INFINITY)),
            _ => s
                .parse::<f64>()
                .map(BandwidthSetting::Value)
                .map_err(|_| format!("expected a number, `inf` or `select`, got `{s}`")),
        }
    }
}

impl fmt::Display for BandwidthSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BandwidthSetting::Value(v) => write!(f, "{v}"),
            BandwidthSetting::Keyword(_) => f.write_str("select"),
        }
    }
}

/// Every setting of a run, with defaults applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub test_kind: TestKindName,
    pub x0: f64,
    pub c0: f64,
    pub n: usize,
    pub replications: usize,
    pub sigma: Option<f64>,
    pub delta: f64,
    pub deltas: Vec<f64>,
    pub alternative: Alternative,
    pub jn_knots: usize,
    pub kn_knots: usize,
    pub knots: KnotPlacement,
    pub first_stage: FirstStageWeight,
    pub draws: usize,
    pub alpha: f64,
    pub q_r: f64,
    pub q_l: f64,
    pub tau: f64,
    pub r_n: BandwidthSetting,
    pub l_n: BandwidthSetting,
    pub draws_for_bandwidths: usize,
    pub sup_grid_points: usize,
    pub rn_covariance: RnCovariance,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let b = BootstrapConfig::default();
        Self {
            command: Command::Test,
            input: None,
            output: None,
            test_kind: TestKindName::Monotonicity,
            x0: 0.5,
            c0: 0.0,
            n: 500,
            replications: 500,
            sigma: None,
            delta: 0.0,
            deltas: Vec::new(),
            alternative: Alternative::None,
            jn_knots: 0,
            kn_knots: 3,
            knots: KnotPlacement::Uniform,
            first_stage: FirstStageWeight::InstrumentGram,
            draws: b.draws,
            alpha: b.alpha,
            q_r: b.q_r,
            q_l: b.q_l,
            tau: b.tau,
            r_n: BandwidthSetting::SELECT,
            l_n: BandwidthSetting::Value(f64::INFINITY),
            draws_for_bandwidths: b.draws_for_bandwidths,
            sup_grid_points: b.sup_grid_points,
            rn_covariance: b.rn_covariance,
            seed: b.seed,
        }
    }
}

/// Command-line flags; each overrides the matching configuration key.
#[derive(Debug, Parser)]
#[command(
    name = "shapegmm",
    version,
    about = "Shape-restricted sieve GMM tests and Monte Carlo studies"
)]
pub struct Flags {
    /// TOML file with configuration keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub command: Option<Command>,
    /// CSV with header `y,x,z` (test command).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Result file; `.json` selects JSON, anything else CSV.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replications: Option<usize>,
    /// 5000 replications with 200 bootstrap draws.
    #[arg(long)]
    pub paper_scale: bool,
    /// Print the resolved configuration as TOML and exit.
    #[arg(long)]
    pub emit_config: bool,
    #[arg(long, value_enum)]
    pub test_kind: Option<TestKindName>,
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub c0: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub delta: Option<f64>,
    /// Comma-separated grid for mc-power.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub deltas: Option<Vec<f64>>,
    #[arg(long, value_parser = parse_alternative)]
    pub alternative: Option<Alternative>,
    #[arg(long)]
    pub jn_knots: Option<usize>,
    #[arg(long)]
    pub kn_knots: Option<usize>,
    #[arg(long, value_parser = parse_knots)]
    pub knots: Option<KnotPlacement>,
    #[arg(long, value_parser = parse_first_stage)]
    pub first_stage: Option<FirstStageWeight>,
    /// Bootstrap draw count.
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub q_r: Option<f64>,
    #[arg(long)]
    pub q_l: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// A number, `inf`, or `select`.
    #[arg(long)]
    pub r_n: Option<BandwidthSetting>,
    /// A number, `inf`, or `select`.
    #[arg(long)]
    pub l_n: Option<BandwidthSetting>,
    #[arg(long)]
    pub draws_for_bandwidths: Option<usize>,
    #[arg(long)]
    pub sup_grid_points: Option<usize>,
    #[arg(long, value_parser = parse_rn_covariance)]
    pub rn_covariance: Option<RnCovariance>,
}

fn parse_kebab<T: for<'de> Deserialize<'de>>(s: &str) -> std::result::Result<T, String> {
    T::deserialize(serde::de::value::StrDeserializer::<serde::de::value::Error>::new(s))
        .map_err(|e| e.to_string())
}

fn parse_alternative(s: &str) -> std::result::Result<Alternative, String> {
    parse_kebab(s)
}

fn parse_knots(s: &str) -> std::result::Result<KnotPlacement, String> {
    parse_kebab(s)
}

fn parse_first_stage(s: &str) -> std::result::Result<FirstStageWeight, String> {
    parse_kebab(s)
}

fn parse_rn_covariance(s: &str) -> std::result::Result<RnCovariance, String> {
    parse_kebab(s)
}

impl RunConfig {
    /// Parses TOML text; missing keys take their defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::Config {
                key: offending_key(e.message()).unwrap_or_else(|| "config".into()),
                message: format!("line {line}: {}", e.message().trim()),
            }
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config {
            key: "config".into(),
            message: e.to_string(),
        })
    }

    /// File values (if any), then flags.
    pub fn resolve(flags: &Flags) -> Result<Self> {
        let mut c = match &flags.config {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = flags.$field.clone() {
                    c.$field = v.into();
                }
            )*};
        }
        take!(
            command,
            test_kind,
            x0,
            c0,
            n,
            replications,
            delta,
            deltas,
            alternative,
            jn_knots,
            kn_knots,
            knots,
            first_stage,
            draws,
            alpha,
            q_r,
            q_l,
            tau,
            r_n,
            l_n,
            draws_for_bandwidths,
            sup_grid_points,
            rn_covariance,
            seed
        );
        if flags.input.is_some() {
            c.input = flags.input.clone();
        }
        if flags.output.is_some() {
            c.output = flags.output.clone();
        }
        if flags.sigma.is_some() {
            c.sigma = flags.sigma;
        }
        if flags.paper_scale {
            c.replications = 5000;
            c.draws = 200;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: String| {
            Err(Error::Config {
                key: key.into(),
                message,
            })
        };
        match self.command {
            Command::Test => {
                if self.input.is_none() {
                    return bad("input", "the test command needs an input CSV".into());
                }
            }
            Command::McSize | Command::McPower => {
                match self.sigma {
                    None => return bad("sigma", "required for Monte Carlo commands".into()),
                    Some(s) if !(s >= 0.0) => return bad("sigma", format!("{s} is negative")),
                    _ => {}
                }
                if self.replications == 0 {
                    return bad("replications", "must be at least 1".into());
                }
                if self.n < 2 {
                    return bad("n", "need at least two observations".into());
                }
            }
        }
        if self.command == Command::McPower {
            if self.deltas.is_empty() {
                return bad("deltas", "mc-power needs a delta grid".into());
            }
            if self.alternative == Alternative::None {
                return bad(
                    "alternative",
                    "mc-power needs `slope` or `level-shift`".into(),
                );
            }
        }
        if !(0.0..=1.0).contains(&self.x0) {
            return bad("x0", format!("{} is outside [0, 1]", self.x0));
        }
        self.bootstrap().validate()
    }

    pub fn bootstrap(&self) -> BootstrapConfig {
        BootstrapConfig {
            draws: self.draws,
            alpha: self.alpha,
            q_r: self.q_r,
            q_l: self.q_l,
            tau: self.tau,
            r_n_override: self.r_n.as_override(),
            l_n_override: self.l_n.as_override(),
            draws_for_bandwidths: self.draws_for_bandwidths,
            sup_grid_points: self.sup_grid_points,
            rn_covariance: self.rn_covariance,
            seed: self.seed,
        }
    }

    pub fn test_kind(&self) -> TestKind {
        match self.test_kind {
            TestKindName::Monotonicity => TestKind::Monotonicity,
            TestKindName::Level => TestKind::Level {
                x0: self.x0,
                c0: self.c0,
            },
            TestKindName::LevelMonotone => TestKind::LevelMonotone {
                x0: self.x0,
                c0: self.c0,
            },
        }
    }

    pub fn test_config(&self) -> TestConfig {
        TestConfig {
            kind: self.test_kind(),
            jn_knots: self.jn_knots,
            kn_knots: self.kn_knots,
            knots: self.knots,
            first_stage: self.first_stage,
            bootstrap: self.bootstrap(),
        }
    }

    pub fn mc_config(&self) -> Result<McConfig> {
        let sigma = self.sigma.ok_or_else(|| Error::Config {
            key: "sigma".into(),
            message: "required for Monte Carlo commands".into(),
        })?;
        Ok(McConfig {
            n: self.n,
            replications: self.replications,
            sigma,
            delta: self.delta,
            alternative: self.alternative,
            jn_knots: self.jn_knots,
            kn_knots: self.kn_knots,
            test: self.test_kind(),
            knots: self.knots,
            first_stage: self.first_stage,
            bootstrap: self.bootstrap(),
            master_seed: self.seed,
        })
    }
}

fn offending_key(message: &str) -> Option<String> {
    let start = message.find('`')? + 1;
    let end = start + message[start..].find('`')?;
    Some(message[start..end].to_string())
}
