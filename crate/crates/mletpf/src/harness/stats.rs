//! Error metrics and slope fitting for the experiment drivers.

use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// Root-mean-square error between two per-step estimate sequences:
/// `sqrt( (1/N) sum_n ||est_n - ref_n||^2 )`.
pub fn compute_rmse(
    estimates: ArrayView2<'_, f64>,
    reference: ArrayView2<'_, f64>,
) -> Result<f64> {
    if estimates.dim() != reference.dim() {
        return Err(Error::DimensionMismatch(format!(
            "estimates {:?} vs reference {:?}",
            estimates.dim(),
            reference.dim()
        )));
    }
    if estimates.nrows() == 0 {
        return Err(Error::InvalidInput("empty estimate sequence".into()));
    }
    let mut total = 0.0;
    for (e, r) in estimates.rows().into_iter().zip(reference.rows()) {
        for (a, b) in e.iter().zip(r.iter()) {
            let d = a - b;
            total += d * d;
        }
    }
    Ok((total / estimates.nrows() as f64).sqrt())
}

/// Least-squares slope of `log y` against `log x`.
pub fn fit_loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} x-values against {} y-values",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::InvalidInput(
            "slope fitting needs at least two points".into(),
        ));
    }
    if xs.iter().chain(ys.iter()).any(|&v| !v.is_finite() || v <= 0.0) {
        return Err(Error::InvalidInput(
            "slope fitting needs strictly positive finite data".into(),
        ));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in lx.iter().zip(ly.iter()) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return Err(Error::InvalidInput(
            "slope fitting needs at least two distinct x-values".into(),
        ));
    }
    Ok(sxy / sxx)
}

/// Population central moments (mean, variance, third, fourth) of a sample.
pub fn central_moments(values: &[f64]) -> [f64; 4] {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let mut m2 = 0.0;
    let mut m3 = 0.0;
    let mut m4 = 0.0;
    for &v in values {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    [mean, m2 / n, m3 / n, m4 / n]
}
