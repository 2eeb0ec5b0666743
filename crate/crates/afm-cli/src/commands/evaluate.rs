//! `afm evaluate`: score one or more trained bundles on a dataset's test
//! split and write an aggregated `metrics.csv`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use afm_core::bundle::LoadedModel;
use afm_core::protocol::{self, EvalOptions, MetricReport};
use clap::Args;

use crate::commands::{check_compat, load_bundle, load_dataset};
use crate::config::{pick, ExperimentConfig};
use crate::errors::CliError;
use crate::lockfile::LockGuard;
use crate::output::{ensure_fresh_dir, metric_rows, write_metrics_csv, MetricsRow};

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Model bundle directory; repeat to aggregate several seeds of the
    /// same model kind (and/or mix kinds) into one metrics table
    #[arg(long, required = true, num_args = 1..)]
    pub bundle: Vec<PathBuf>,
    /// Dataset directory providing the test instances
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Output directory for metrics.csv
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Ensemble size per instance (default: 100)
    #[arg(long)]
    pub samples: Option<usize>,
    /// Sampling seed for evaluation forecasts
    #[arg(long)]
    pub seed: Option<u64>,
    /// Evaluate only the first N test instances
    #[arg(long, value_name = "N")]
    pub max_instances: Option<usize>,
    /// Overwrite an existing non-empty output directory
    #[arg(long)]
    pub force: bool,
    /// JSON experiment config supplying defaults for any flag
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn run(args: EvaluateArgs) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load_opt(args.config.as_ref())?;
    let dataset_dir = args
        .dataset
        .or(cfg.dataset.clone())
        .ok_or_else(|| CliError::validation("--dataset is required"))?;
    let out = args
        .out
        .or(cfg.out.clone())
        .ok_or_else(|| CliError::validation("--out is required"))?;
    let dataset = load_dataset(&dataset_dir)?;
    let opts = EvalOptions {
        n_samples: pick(args.samples, cfg.samples, 100),
        seed: pick(args.seed, cfg.seed, 0),
        max_instances: args.max_instances.or(cfg.max_instances),
    };
    if dataset.meta.split.extrapolate == 0 {
        eprintln!("warning: dataset has no extrapolation window; reporting prediction only");
    }

    ensure_fresh_dir(&out, args.force)?;
    let _lock = LockGuard::acquire(&out)?;
    let mut by_kind: BTreeMap<String, Vec<MetricReport>> = BTreeMap::new();
    for dir in &args.bundle {
        let bundle = load_bundle(dir)?;
        check_compat(&bundle, &dataset)?;
        let report = match &bundle.model {
            LoadedModel::Afm(m) => protocol::evaluate_afm(m, &dataset, &opts),
            LoadedModel::Fm(m) => protocol::evaluate_fm(m, &dataset, &opts),
        }
        .map_err(|e| CliError::from_core(&format!("evaluate {}", dir.display()), e))?;
        by_kind.entry(report.model_kind.clone()).or_default().push(report);
    }
    let mut rows: Vec<MetricsRow> = Vec::new();
    for reports in by_kind.values() {
        let refs: Vec<&MetricReport> = reports.iter().collect();
        rows.extend(metric_rows(&refs));
    }
    write_metrics_csv(&out.join("metrics.csv"), &rows)?;
    print_table(&rows);
    println!(
        "wrote {}: bundles={} instances={} samples={} seed={}",
        out.join("metrics.csv").display(),
        args.bundle.len(),
        by_kind.values().next().map_or(0, |r| r[0].n_instances),
        opts.n_samples,
        opts.seed
    );
    Ok(())
}

pub(crate) fn print_table(rows: &[MetricsRow]) {
    println!(
        "{:<6} {:<14} {:<14} {:<7} {:>12} {:>12} {:>6}",
        "model", "system", "regime", "metric", "mean", "std_err", "seeds"
    );
    for r in rows {
        println!(
            "{:<6} {:<14} {:<14} {:<7} {:>12.6} {:>12.6} {:>6}",
            r.model_kind, r.system, r.regime, r.metric, r.mean, r.std_err, r.seed_count
        );
    }
}
