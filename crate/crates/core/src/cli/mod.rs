//! Command-line front end.
//!
//! Exit codes: 0 when the requested computation finished (whatever the test
//! decided), 1 for invalid input or configuration, 2 for numerical failure.

mod config;

pub use config::{BandwidthSetting, Command, Flags, RunConfig, Select, TestKindName};

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use clap::Parser;

use crate::gmm::Dataset;
use crate::inference::{run_test, TestReport};
use crate::montecarlo::{run_power, run_size, write_csv, McResult};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let flags = match Flags::try_parse_from(args) {
        Ok(f) => f,
        Err(e) => {
            let code = if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(&flags) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_INVALID
            }
        }
    }
}

fn execute(flags: &Flags) -> Result<()> {
    if flags.emit_config {
        let config = match &flags.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        print!("{}", config.to_toml()?);
        return Ok(());
    }
    let config = RunConfig::resolve(flags)?;
    match config.command {
        Command::Test => {
            let input = config.input.as_deref().expect("validated");
            let data = Dataset::from_csv_path(input)?;
            let report = run_test(&data, &config.test_config())?;
            print_report(&report);
            if let Some(out) = &config.output {
                write_report(out, &report)?;
            }
        }
        Command::McSize => {
            let result = run_size(&config.mc_config()?)?;
            print_mc(std::slice::from_ref(&result), false);
            if let Some(out) = &config.output {
                write_mc(out, std::slice::from_ref(&result), false)?;
            }
        }
        Command::McPower => {
            let results = run_power(&config.mc_config()?, &config.deltas)?;
            print_mc(&results, true);
            if let Some(out) = &config.output {
                write_mc(out, &results, true)?;
            }
        }
    }
    Ok(())
}

fn is_json(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

fn json_error(e: serde_json::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn print_report(r: &TestReport) {
    println!("statistic       {:.6}", r.statistic);
    println!(
        "critical value  {:.6} ({:?}, alpha = {})",
        r.critical_value, r.method, r.alpha
    );
    println!("reject          {}", r.reject);
    if let Some(df) = r.df {
        println!("df              {df}");
    }
    if let (Some(rn), Some(ln)) = (r.r_n, r.l_n) {
        println!("r_n, l_n        {rn:.6}, {ln:.6}");
        println!(
            "draws           {} ({} discarded)",
            r.bootstrap_draws.len(),
            r.discarded_draws
        );
    }
}

fn write_report(path: &Path, r: &TestReport) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    if is_json(path) {
        serde_json::to_writer_pretty(&mut out, r).map_err(json_error)?;
        writeln!(out)?;
    } else {
        writeln!(
            out,
            "statistic,critical_value,alpha,method,reject,df,r_n,l_n,draws,discards"
        )?;
        let method = match r.method {
            crate::inference::Method::Bootstrap => "bootstrap",
            crate::inference::Method::Chi2 => "chi2",
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.statistic,
            r.critical_value,
            r.alpha,
            method,
            r.reject,
            r.df.map(|d| d.to_string()).unwrap_or_default(),
            fmt_opt(r.r_n),
            fmt_opt(r.l_n),
            r.bootstrap_draws.len(),
            r.discarded_draws
        )?;
    }
    out.flush()?;
    Ok(())
}

fn print_mc(results: &[McResult], with_delta: bool) {
    for r in results {
        let lead = if with_delta {
            format!("delta {:>6}  ", r.delta)
        } else {
            String::new()
        };
        let rates: Vec<String> = r
            .levels
            .iter()
            .zip(&r.rejection_rates)
            .zip(&r.standard_errors)
            .map(|((a, p), se)| format!("{a}: {p:.3} ({se:.3})"))
            .collect();
        println!(
            "{lead}sigma {} jn {} kn {}  {}  [{} reps, {} failed, {:.1?}]",
            r.sigma,
            r.jn,
            r.kn,
            rates.join("  "),
            r.completed(),
            r.failed.len(),
            r.elapsed
        );
    }
}

fn write_mc(path: &Path, results: &[McResult], with_delta: bool) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    if is_json(path) {
        let mut file = file;
        serde_json::to_writer_pretty(&mut file, results).map_err(json_error)?;
        writeln!(file)?;
        file.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(())
    } else {
        write_csv(file, results, with_delta)
    }
}
