//! Forecast evaluation: empirical CRPS (energy form) and NRMSE.

use crate::error::CoreError;

/// Empirical CRPS of an ensemble against one scalar observation, in the
/// energy form
///   CRPS = (1/m)·Σᵢ|xᵢ − x| − (1/2m²)·Σᵢⱼ|xᵢ − xⱼ|,
/// computed in O(m log m) from the order statistics: for sorted x₍ₖ₎,
/// Σᵢⱼ|xᵢ − xⱼ| = 2·Σₖ x₍ₖ₎·(2k − m + 1) with 0-based k.
pub fn crps_empirical(samples: &[f64], observation: f64) -> Result<f64, CoreError> {
    let m = samples.len();
    if m < 2 {
        return Err(CoreError::TooFewSamples(m));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("crps: non-finite sample"));
    let mf = m as f64;
    let term1: f64 = sorted.iter().map(|x| (x - observation).abs()).sum::<f64>() / mf;
    let term2: f64 = sorted
        .iter()
        .enumerate()
        .map(|(k, x)| x * (2.0 * k as f64 - mf + 1.0))
        .sum::<f64>()
        / (mf * mf);
    Ok(term1 - term2)
}

/// Mean CRPS over an observation grid: `ensemble[i]` holds the i-th member's
/// values on the grid, `truth` the observations. Scores every (step, member)
/// column jointly, i.e. averages pointwise CRPS over the grid.
pub fn mean_crps(ensemble: &[Vec<f64>], truth: &[f64]) -> Result<f64, CoreError> {
    if ensemble.is_empty() {
        return Err(CoreError::TooFewSamples(0));
    }
    for member in ensemble {
        assert_eq!(member.len(), truth.len(), "mean_crps: grid lengths differ");
    }
    let mut acc = 0.0;
    let mut col = vec![0.0; ensemble.len()];
    for (t, &obs) in truth.iter().enumerate() {
        for (i, member) in ensemble.iter().enumerate() {
            col[i] = member[t];
        }
        acc += crps_empirical(&col, obs)?;
    }
    Ok(acc / truth.len() as f64)
}

/// NRMSE of a point forecast against the truth for one dimension:
/// RMSE / std(truth), with the sample standard deviation (ddof = 1).
/// A (numerically) constant truth has no scale and is rejected.
pub fn nrmse(forecast: &[f64], truth: &[f64], dim: usize) -> Result<f64, CoreError> {
    assert_eq!(forecast.len(), truth.len(), "nrmse: lengths differ");
    let n = truth.len();
    if n < 2 {
        return Err(CoreError::TooFewSamples(n));
    }
    let nf = n as f64;
    let mean = truth.iter().sum::<f64>() / nf;
    let var = truth.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (nf - 1.0);
    let std = var.sqrt();
    if std < 1e-12 {
        return Err(CoreError::ConstantTruth { dim });
    }
    let mse = forecast
        .iter()
        .zip(truth)
        .map(|(f, y)| (f - y) * (f - y))
        .sum::<f64>()
        / nf;
    Ok(mse.sqrt() / std)
}

/// Mean and standard error (ddof = 1) of a set of per-seed values.
/// One value yields std_err = 0.
pub fn mean_and_std_err(values: &[f64]) -> Result<(f64, f64), CoreError> {
    let n = values.len();
    if n == 0 {
        return Err(CoreError::TooFewSamples(0));
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    if n == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (nf - 1.0);
    Ok((mean, var.sqrt() / nf.sqrt()))
}
