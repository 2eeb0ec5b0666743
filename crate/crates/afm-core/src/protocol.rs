//! Evaluation protocol: turns forecast ensembles and ground truth into
//! per-regime CRPS / NRMSE reports.
//!
//! Two regimes are scored per test trajectory. The *prediction* window is
//! the `predict` steps right after the observed history. The *extrapolation*
//! window is the final `extrapolate` steps, which were never used as
//! training targets. The autoregressive model produces one rolling forecast
//! that covers both windows; the fixed-horizon baseline is re-conditioned on
//! the last true observations before the extrapolation window and scores the
//! overlap of its fixed output length with that window.
//!
//! CRPS is reported in standardized data space (the training normalization),
//! NRMSE in raw space — it is invariant under per-dimension affine maps.

use serde::{Deserialize, Serialize};

use crate::afm::{self, AfmModel};
use crate::dynsys::{ForecastDataset, NormStats};
use crate::error::CoreError;
use crate::fmbase::{fm_forecast, FmModel};
use crate::metrics;
use crate::numcore::Matrix;

/// Which window of the trajectory a metric was computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Prediction,
    Extrapolation,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Prediction => "prediction",
            Regime::Extrapolation => "extrapolation",
        }
    }
}

/// Scores over one regime window, with the per-dimension and per-step
/// breakdowns that the aggregates are means of.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeMetrics {
    /// Mean CRPS over the window grid, standardized space.
    pub crps: f64,
    /// Per-dimension NRMSE of the ensemble-mean forecast, averaged over
    /// dimensions.
    pub nrmse: f64,
    pub crps_per_dim: Vec<f64>,
    pub crps_per_step: Vec<f64>,
    pub nrmse_per_dim: Vec<f64>,
    /// Per-step normalized squared error (mean over dimensions of
    /// (error/σ_dim)²); its mean over steps equals the mean of
    /// `nrmse_per_dim` squared.
    pub nmse_per_step: Vec<f64>,
}

impl RegimeMetrics {
    /// The breakdowns must recombine to the reported aggregates.
    pub fn check_consistency(&self) -> Result<(), CoreError> {
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let checks = [
            (mean(&self.crps_per_dim), self.crps, "crps_per_dim"),
            (mean(&self.crps_per_step), self.crps, "crps_per_step"),
            (mean(&self.nrmse_per_dim), self.nrmse, "nrmse_per_dim"),
            (
                mean(&self.nmse_per_step),
                mean(&self.nrmse_per_dim.iter().map(|x| x * x).collect::<Vec<_>>()),
                "nmse_per_step",
            ),
        ];
        for (got, want, what) in checks {
            if (got - want).abs() > 1e-10 {
                return Err(CoreError::InvalidConfig(format!(
                    "inconsistent metric breakdown {what}: {got} vs {want}"
                )));
            }
        }
        if self.crps < 0.0 || self.nrmse < 0.0 {
            return Err(CoreError::InvalidConfig("negative metric aggregate".into()));
        }
        Ok(())
    }

    /// Element-wise mean across per-instance scores (all the same shape).
    fn mean_of(scores: &[RegimeMetrics]) -> RegimeMetrics {
        assert!(!scores.is_empty(), "mean_of: no scores");
        let k = scores.len() as f64;
        let mean_vecs = |pick: fn(&RegimeMetrics) -> &Vec<f64>| -> Vec<f64> {
            let len = pick(&scores[0]).len();
            (0..len)
                .map(|i| scores.iter().map(|s| pick(s)[i]).sum::<f64>() / k)
                .collect()
        };
        RegimeMetrics {
            crps: scores.iter().map(|s| s.crps).sum::<f64>() / k,
            nrmse: scores.iter().map(|s| s.nrmse).sum::<f64>() / k,
            crps_per_dim: mean_vecs(|s| &s.crps_per_dim),
            crps_per_step: mean_vecs(|s| &s.crps_per_step),
            nrmse_per_dim: mean_vecs(|s| &s.nrmse_per_dim),
            nmse_per_step: mean_vecs(|s| &s.nmse_per_step),
        }
    }
}

/// Full evaluation of one model on one dataset at one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model_kind: String,
    pub system: String,
    pub seed: u64,
    /// Ensemble size per instance.
    pub n_samples: usize,
    /// Test instances actually scored.
    pub n_instances: usize,
    pub prediction: RegimeMetrics,
    /// Absent when the dataset has no extrapolation window.
    pub extrapolation: Option<RegimeMetrics>,
}

impl MetricReport {
    pub fn regime(&self, regime: Regime) -> Option<&RegimeMetrics> {
        match regime {
            Regime::Prediction => Some(&self.prediction),
            Regime::Extrapolation => self.extrapolation.as_ref(),
        }
    }
}

/// Score one regime window of one instance.
///
/// `steps` holds the forecast for the window, one S×n matrix per step in raw
/// data units; `valid` flags usable sample rows; `truth` is the window×n
/// ground truth; `norm` is the training normalization used to standardize
/// the CRPS inputs.
pub fn score_window(
    steps: &[Matrix],
    valid: &[bool],
    truth: &Matrix,
    norm: &NormStats,
) -> Result<RegimeMetrics, CoreError> {
    let window = truth.rows();
    let n = truth.cols();
    if steps.len() != window {
        return Err(CoreError::ShapeMismatch {
            op: "score_window".into(),
            detail: format!("{} forecast steps for a {window}-step window", steps.len()),
        });
    }
    if window < 2 {
        return Err(CoreError::InvalidConfig(
            "a scored window needs at least 2 steps".into(),
        ));
    }
    let n_valid = valid.iter().filter(|v| **v).count();
    if n_valid < 2 {
        return Err(CoreError::TooFewSamples(n_valid));
    }
    for (t, m) in steps.iter().enumerate() {
        if m.rows() != valid.len() || m.cols() != n {
            return Err(CoreError::ShapeMismatch {
                op: "score_window".into(),
                detail: format!(
                    "step {t} ensemble is {}x{}, expected {}x{n}",
                    m.rows(),
                    m.cols(),
                    valid.len()
                ),
            });
        }
    }

    // CRPS per grid cell, standardized space.
    let mut crps_grid = vec![vec![0.0; n]; window];
    let mut samples = Vec::with_capacity(n_valid);
    for (t, m) in steps.iter().enumerate() {
        for d in 0..n {
            samples.clear();
            for (p, ok) in valid.iter().enumerate() {
                if *ok {
                    samples.push((m.get(p, d) - norm.mean[d]) / norm.std[d]);
                }
            }
            let obs = (truth.get(t, d) - norm.mean[d]) / norm.std[d];
            crps_grid[t][d] = metrics::crps_empirical(&samples, obs)?;
        }
    }
    let crps_per_dim: Vec<f64> = (0..n)
        .map(|d| crps_grid.iter().map(|row| row[d]).sum::<f64>() / window as f64)
        .collect();
    let crps_per_step: Vec<f64> =
        crps_grid.iter().map(|row| row.iter().sum::<f64>() / n as f64).collect();
    let crps = crps_grid.iter().flatten().sum::<f64>() / (window * n) as f64;

    // NRMSE of the ensemble-mean forecast, raw space.
    let point = Matrix::from_fn(window, n, |t, d| {
        let mut acc = 0.0;
        for (p, ok) in valid.iter().enumerate() {
            if *ok {
                acc += steps[t].get(p, d);
            }
        }
        acc / n_valid as f64
    });
    let mut nrmse_per_dim = Vec::with_capacity(n);
    let mut sig = Vec::with_capacity(n);
    for d in 0..n {
        let fc: Vec<f64> = (0..window).map(|t| point.get(t, d)).collect();
        let tr: Vec<f64> = (0..window).map(|t| truth.get(t, d)).collect();
        nrmse_per_dim.push(metrics::nrmse(&fc, &tr, d)?);
        let mean = tr.iter().sum::<f64>() / window as f64;
        let var =
            tr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (window - 1) as f64;
        sig.push(var.sqrt());
    }
    let nrmse = nrmse_per_dim.iter().sum::<f64>() / n as f64;
    let nmse_per_step: Vec<f64> = (0..window)
        .map(|t| {
            (0..n)
                .map(|d| {
                    let e = (point.get(t, d) - truth.get(t, d)) / sig[d];
                    e * e
                })
                .sum::<f64>()
                / n as f64
        })
        .collect();

    let out = RegimeMetrics {
        crps,
        nrmse,
        crps_per_dim,
        crps_per_step,
        nrmse_per_dim,
        nmse_per_step,
    };
    out.check_consistency()?;
    Ok(out)
}

/// Evaluation controls shared by both model kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Ensemble size per instance.
    pub n_samples: usize,
    pub seed: u64,
    /// Score only the first `max_instances` test trajectories when set
    /// (keeps large-scale spot checks affordable).
    pub max_instances: Option<usize>,
}

fn checked_instance_count(
    dataset: &ForecastDataset,
    opts: &EvalOptions,
) -> Result<usize, CoreError> {
    if dataset.test.is_empty() {
        return Err(CoreError::InvalidConfig("dataset has no test trajectories".into()));
    }
    let split = &dataset.meta.split;
    if split.predict < 2 {
        return Err(CoreError::InvalidConfig(
            "prediction window must have at least 2 steps to be scored".into(),
        ));
    }
    if split.extrapolate == 1 {
        return Err(CoreError::InvalidConfig(
            "extrapolation window must have 0 or >= 2 steps".into(),
        ));
    }
    if opts.n_samples < 2 {
        return Err(CoreError::TooFewSamples(opts.n_samples));
    }
    Ok(match opts.max_instances {
        Some(cap) => cap.max(1).min(dataset.test.len()),
        None => dataset.test.len(),
    })
}

fn finish_report(
    model_kind: &str,
    dataset: &ForecastDataset,
    opts: &EvalOptions,
    pred: Vec<RegimeMetrics>,
    ext: Vec<RegimeMetrics>,
) -> MetricReport {
    let n_instances = pred.len();
    MetricReport {
        model_kind: model_kind.into(),
        system: dataset.meta.system.clone(),
        seed: opts.seed,
        n_samples: opts.n_samples,
        n_instances,
        prediction: RegimeMetrics::mean_of(&pred),
        extrapolation: if ext.is_empty() { None } else { Some(RegimeMetrics::mean_of(&ext)) },
    }
}

/// Evaluate an autoregressive model: one rolling forecast per test instance
/// covers the prediction window and continues through the extrapolation
/// window without re-conditioning on truth.
pub fn evaluate_afm(
    model: &AfmModel,
    dataset: &ForecastDataset,
    opts: &EvalOptions,
) -> Result<MetricReport, CoreError> {
    let n_inst = checked_instance_count(dataset, opts)?;
    let split = dataset.meta.split;
    let norm = &dataset.meta.normalization;
    let horizon = split.predict + split.extrapolate;
    let mut pred = Vec::with_capacity(n_inst);
    let mut ext = Vec::with_capacity(n_inst);
    for (i, traj) in dataset.test.iter().take(n_inst).enumerate() {
        let truth = &traj.states;
        let history = truth.slice_rows(0, split.observe);
        let ens = afm::forecast(model, &history, horizon, opts.n_samples, opts.seed, i)?;
        pred.push(score_window(
            &ens.steps[..split.predict],
            &ens.valid,
            &truth.slice_rows(split.observe, split.observe + split.predict),
            norm,
        )?);
        if split.extrapolate > 0 {
            ext.push(score_window(
                &ens.steps[split.predict..horizon],
                &ens.valid,
                &truth.slice_rows(split.observe + split.predict, split.total()),
                norm,
            )?);
        }
    }
    Ok(finish_report("afm", dataset, opts, pred, ext))
}

/// Evaluate the fixed-horizon baseline. The prediction window is forecast
/// from the observed history; the extrapolation window requires a second,
/// re-conditioned forecast from the last true observations before it (the
/// output length is fixed at the trained horizon, so only the overlap is
/// scored). The two rolls use distinct RNG instance slots (2i and 2i+1).
pub fn evaluate_fm(
    model: &FmModel,
    dataset: &ForecastDataset,
    opts: &EvalOptions,
) -> Result<MetricReport, CoreError> {
    let n_inst = checked_instance_count(dataset, opts)?;
    let split = dataset.meta.split;
    let norm = &dataset.meta.normalization;
    let f = model.arch.f;
    let pred_window = f.min(split.predict);
    let ext_window = f.min(split.extrapolate);
    if pred_window < 2 || (split.extrapolate > 0 && ext_window < 2) {
        return Err(CoreError::InvalidConfig(format!(
            "trained horizon {f} leaves a scored window shorter than 2 steps"
        )));
    }
    let mut pred = Vec::with_capacity(n_inst);
    let mut ext = Vec::with_capacity(n_inst);
    for (i, traj) in dataset.test.iter().take(n_inst).enumerate() {
        let truth = &traj.states;
        let history = truth.slice_rows(0, split.observe);
        let ens = fm_forecast(model, &history, opts.n_samples, opts.seed, 2 * i)?;
        pred.push(score_window(
            &ens.steps[..pred_window],
            &ens.valid,
            &truth.slice_rows(split.observe, split.observe + pred_window),
            norm,
        )?);
        if split.extrapolate > 0 {
            let recond = truth.slice_rows(0, split.observe + split.predict);
            let ens = fm_forecast(model, &recond, opts.n_samples, opts.seed, 2 * i + 1)?;
            let t0 = split.observe + split.predict;
            ext.push(score_window(
                &ens.steps[..ext_window],
                &ens.valid,
                &truth.slice_rows(t0, t0 + ext_window),
                norm,
            )?);
        }
    }
    Ok(finish_report("fm", dataset, opts, pred, ext))
}

/// Convenience for CLI/metric tables: flatten a report to
/// (regime, metric, value) rows.
pub fn report_rows(report: &MetricReport) -> Vec<(Regime, &'static str, f64)> {
    let mut rows = vec![
        (Regime::Prediction, "crps", report.prediction.crps),
        (Regime::Prediction, "nrmse", report.prediction.nrmse),
    ];
    if let Some(ext) = &report.extrapolation {
        rows.push((Regime::Extrapolation, "crps", ext.crps));
        rows.push((Regime::Extrapolation, "nrmse", ext.nrmse));
    }
    rows
}
