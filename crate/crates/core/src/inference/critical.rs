use crate::distributions::chi2_quantile;
use crate::{Error, Result};

/// The `⌈S q⌉`-th smallest of `values` (1-based), for `q` in `(0, 1]`.
pub(crate) fn order_statistic(mut values: Vec<f64>, q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument(
            "no values to take a quantile of".into(),
        ));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::NumericalBreakdown(
            "NaN among quantile inputs".into(),
        ));
    }
    values.sort_by(f64::total_cmp);
    let s = values.len();
    // Guard against B(1 − α) landing a hair above an integer.
    let idx = ((s as f64 * q) - 1e-9).ceil().clamp(1.0, s as f64) as usize;
    Ok(values[idx - 1])
}

/// `(1 − α)` empirical quantile of bootstrap draws: the `⌈B(1 − α)⌉`-th
/// order statistic.
pub fn bootstrap_critical_value(draws: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    order_statistic(draws.to_vec(), 1.0 - alpha)
}

/// Degrees of freedom of the chi-square reference: `k − j + equalities`.
pub fn chi2_df(k: usize, j: usize, n_eq: usize) -> Result<usize> {
    let df = (k + n_eq) as i64 - j as i64;
    if df < 1 {
        return Err(Error::InvalidArgument(format!(
            "chi-square reference needs k - j + equalities >= 1, got {df}"
        )));
    }
    Ok(df as usize)
}

/// `(1 − α)` quantile of `χ²(k − c)`, on the scale of `I_n²`; `c` is the
/// dimension of the restricted sieve space.
pub fn chi2_critical_value(k: usize, c: usize, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if k <= c {
        return Err(Error::InvalidArgument(format!(
            "chi-square reference needs k > c, got k = {k}, c = {c}"
        )));
    }
    chi2_quantile(1.0 - alpha, (k - c) as f64)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    Ok(())
}
