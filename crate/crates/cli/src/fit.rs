use serde::{Deserialize, Serialize};

use crate::error::{invalid, CliResult};

/// Least-squares line through (log₁₀N, log₁₀Err) for one shots-per-round value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub n_m: usize,
    pub slope: f64,
    pub intercept: f64,
    /// Intercept with the slope pinned to −½.
    pub fixed_slope_intercept: f64,
    pub points: usize,
}

/// Ordinary least squares y = slope·x + intercept.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

pub fn fit_curve(n_m: usize, points: &[(usize, f64)]) -> CliResult<FitResult> {
    if points.len() < 4 {
        return invalid(format!("a fit needs at least 4 points, got {}", points.len()));
    }
    if points.iter().any(|&(n, e)| n == 0 || !(e > 0.0 && e.is_finite())) {
        return invalid("fit points need positive N and positive finite error");
    }
    let xs: Vec<f64> = points.iter().map(|&(n, _)| (n as f64).log10()).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, e)| e.log10()).collect();
    let (slope, intercept) = linear_fit(&xs, &ys);
    let fixed = xs.iter().zip(&ys).map(|(x, y)| y + 0.5 * x).sum::<f64>() / xs.len() as f64;
    Ok(FitResult {
        n_m,
        slope,
        intercept,
        fixed_slope_intercept: fixed,
        points: points.len(),
    })
}

/// 10·(b − a) in decibels, from the −½-slope intercepts of two fits.
pub fn db_gain(a: &FitResult, b: &FitResult) -> f64 {
    10.0 * (b.fixed_slope_intercept - a.fixed_slope_intercept)
}

/// Same comparison from the free-slope intercepts.
pub fn db_gain_free(a: &FitResult, b: &FitResult) -> f64 {
    10.0 * (b.intercept - a.intercept)
}
