//! Output-directory policy and the CSV files every command writes.
//! All CSVs carry a header row, UTF-8, '.' decimal separator.

use std::path::Path;

use afm_core::afm::{quantiles, ForecastEnsemble, TrainRecord};
use afm_core::protocol::{MetricReport, Regime};

use crate::errors::CliError;
use crate::lockfile::LOCK_NAME;

/// Refuse to write into an existing non-empty directory unless forced.
pub fn ensure_fresh_dir(dir: &Path, force: bool) -> Result<(), CliError> {
    if !dir.exists() {
        return Ok(());
    }
    if !dir.is_dir() {
        return Err(CliError::validation(format!(
            "{} exists and is not a directory",
            dir.display()
        )));
    }
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::validation(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name() != LOCK_NAME)
        .count();
    if entries > 0 && !force {
        return Err(CliError::validation(format!(
            "{} is not empty; pass --force to overwrite",
            dir.display()
        )));
    }
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    csv::Writer::from_path(path)
        .map_err(|e| CliError::validation(format!("cannot write {}: {e}", path.display())))
}

fn flush(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<(), CliError> {
    w.flush()
        .map_err(|e| CliError::Runtime(format!("flushing {}: {e}", path.display())))
}

/// `train_log.csv`: one row per optimizer step.
pub fn write_train_log(path: &Path, records: &[TrainRecord]) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    w.write_record(["step", "loss", "wall_time"])
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    for r in records {
        w.write_record(&[r.step.to_string(), r.loss.to_string(), r.wall_time.to_string()])
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    flush(w, path)
}

/// `forecast.csv`: every valid sample value,
/// rows (instance_id, sample_id, t, dim, value); `t` is the absolute step
/// index within the trajectory.
pub struct ForecastCsv {
    w: csv::Writer<std::fs::File>,
    path: std::path::PathBuf,
}

impl ForecastCsv {
    pub fn create(path: &Path) -> Result<Self, CliError> {
        let mut w = csv_writer(path)?;
        w.write_record(["instance_id", "sample_id", "t", "dim", "value"])
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        Ok(ForecastCsv { w, path: path.to_path_buf() })
    }

    pub fn add_ensemble(
        &mut self,
        instance: usize,
        ens: &ForecastEnsemble,
    ) -> Result<(), CliError> {
        for (t_rel, step) in ens.steps.iter().enumerate() {
            let t = ens.start_step + t_rel;
            for (p, ok) in ens.valid.iter().enumerate() {
                if !ok {
                    continue;
                }
                for d in 0..step.cols() {
                    self.w
                        .write_record(&[
                            instance.to_string(),
                            p.to_string(),
                            t.to_string(),
                            d.to_string(),
                            step.get(p, d).to_string(),
                        ])
                        .map_err(|e| CliError::Runtime(e.to_string()))?;
                }
            }
        }
        Ok(())
    }

    pub fn finish(self) -> Result<(), CliError> {
        flush(self.w, &self.path)
    }
}

/// `quantiles.csv`: rows (instance_id, t, dim, level, value).
pub struct QuantilesCsv {
    w: csv::Writer<std::fs::File>,
    path: std::path::PathBuf,
    levels: Vec<f64>,
}

impl QuantilesCsv {
    pub fn create(path: &Path, levels: &[f64]) -> Result<Self, CliError> {
        let mut w = csv_writer(path)?;
        w.write_record(["instance_id", "t", "dim", "level", "value"])
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        Ok(QuantilesCsv { w, path: path.to_path_buf(), levels: levels.to_vec() })
    }

    pub fn add_ensemble(
        &mut self,
        instance: usize,
        ens: &ForecastEnsemble,
    ) -> Result<(), CliError> {
        let table = quantiles(ens, &self.levels)
            .map_err(|e| CliError::from_core("quantiles", e))?;
        for (t_rel, per_dim) in table.values.iter().enumerate() {
            let t = ens.start_step + t_rel;
            for (d, per_level) in per_dim.iter().enumerate() {
                for (li, v) in per_level.iter().enumerate() {
                    self.w
                        .write_record(&[
                            instance.to_string(),
                            t.to_string(),
                            d.to_string(),
                            table.levels[li].to_string(),
                            v.to_string(),
                        ])
                        .map_err(|e| CliError::Runtime(e.to_string()))?;
                }
            }
        }
        Ok(())
    }

    pub fn finish(self) -> Result<(), CliError> {
        flush(self.w, &self.path)
    }
}

/// One `metrics.csv` row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub model_kind: String,
    pub system: String,
    pub regime: &'static str,
    pub metric: &'static str,
    pub mean: f64,
    pub std_err: f64,
    pub seed_count: usize,
}

/// Flatten per-seed reports (all for the same model kind and system, in seed
/// order) into per-seed rows plus, when there are at least two seeds,
/// aggregate rows with the standard error of the seed means.
pub fn metric_rows(reports: &[&MetricReport]) -> Vec<MetricsRow> {
    assert!(!reports.is_empty(), "metric_rows: no reports");
    let kind = reports[0].model_kind.clone();
    let system = reports[0].system.clone();
    let mut rows = Vec::new();
    let regimes = [Regime::Prediction, Regime::Extrapolation];
    for r in reports {
        for regime in regimes {
            if let Some(m) = r.regime(regime) {
                for (metric, value) in [("crps", m.crps), ("nrmse", m.nrmse)] {
                    rows.push(MetricsRow {
                        model_kind: kind.clone(),
                        system: system.clone(),
                        regime: regime.as_str(),
                        metric,
                        mean: value,
                        std_err: 0.0,
                        seed_count: 1,
                    });
                }
            }
        }
    }
    if reports.len() >= 2 {
        for regime in regimes {
            let values: Vec<(f64, f64)> = reports
                .iter()
                .filter_map(|r| r.regime(regime))
                .map(|m| (m.crps, m.nrmse))
                .collect();
            if values.len() != reports.len() {
                continue; // regime missing from some seeds: no aggregate row
            }
            for (metric, pick) in [("crps", 0usize), ("nrmse", 1usize)] {
                let vals: Vec<f64> = values
                    .iter()
                    .map(|v| if pick == 0 { v.0 } else { v.1 })
                    .collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / (vals.len() - 1) as f64;
                let std_err = (var / vals.len() as f64).sqrt();
                rows.push(MetricsRow {
                    model_kind: kind.clone(),
                    system: system.clone(),
                    regime: regime.as_str(),
                    metric,
                    mean,
                    std_err,
                    seed_count: vals.len(),
                });
            }
        }
    }
    rows
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    w.write_record(["model_kind", "system", "regime", "metric", "mean", "std_err", "seed_count"])
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    for r in rows {
        w.write_record(&[
            r.model_kind.clone(),
            r.system.clone(),
            r.regime.to_string(),
            r.metric.to_string(),
            r.mean.to_string(),
            r.std_err.to_string(),
            r.seed_count.to_string(),
        ])
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    flush(w, path)
}
