//! `afm forecast`: sample forecast ensembles for every test instance and
//! write `forecast.csv` + `quantiles.csv`.

use std::path::PathBuf;

use afm_core::afm::{self, DEFAULT_QUANTILE_LEVELS};
use afm_core::bundle::LoadedModel;
use afm_core::fmbase::fm_forecast;
use clap::Args;

use crate::commands::{check_compat, load_bundle, load_dataset};
use crate::config::{pick, ExperimentConfig};
use crate::errors::CliError;
use crate::lockfile::LockGuard;
use crate::output::{ensure_fresh_dir, ForecastCsv, QuantilesCsv};

#[derive(Debug, Args)]
pub struct ForecastArgs {
    /// Model bundle directory written by `afm train`
    #[arg(long)]
    pub bundle: PathBuf,
    /// Dataset directory whose test instances are forecast
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Output directory for forecast.csv and quantiles.csv
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Ensemble size per instance (default: 100)
    #[arg(long)]
    pub samples: Option<usize>,
    /// Forecast length; defaults to prediction + extrapolation window.
    /// The baseline's length is fixed by training and cannot be overridden.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Sampling seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Forecast only the first N test instances
    #[arg(long, value_name = "N")]
    pub instances: Option<usize>,
    /// Overwrite an existing non-empty output directory
    #[arg(long)]
    pub force: bool,
    /// JSON experiment config supplying defaults for any flag
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn run(args: ForecastArgs) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load_opt(args.config.as_ref())?;
    let dataset_dir = args
        .dataset
        .or(cfg.dataset.clone())
        .ok_or_else(|| CliError::validation("--dataset is required"))?;
    let out = args
        .out
        .or(cfg.out.clone())
        .ok_or_else(|| CliError::validation("--out is required"))?;
    let bundle = load_bundle(&args.bundle)?;
    let dataset = load_dataset(&dataset_dir)?;
    check_compat(&bundle, &dataset)?;
    let split = dataset.meta.split;
    let samples = pick(args.samples, cfg.samples, 100);
    if samples < 2 {
        return Err(CliError::validation("--samples must be >= 2"));
    }
    let seed = pick(args.seed, cfg.seed, 0);
    let horizon = pick(args.horizon, cfg.horizon, split.predict + split.extrapolate);
    if horizon < 1 {
        return Err(CliError::validation("--horizon must be >= 1"));
    }
    if let LoadedModel::Fm(m) = &bundle.model {
        if horizon != m.arch.f && (args.horizon.is_some() || cfg.horizon.is_some()) {
            return Err(CliError::validation(format!(
                "the baseline's output length is fixed at {} by training; \
                 it cannot forecast a {horizon}-step horizon",
                m.arch.f
            )));
        }
    }
    let n_inst = args
        .instances
        .or(cfg.max_instances)
        .unwrap_or(dataset.test.len())
        .min(dataset.test.len());
    if n_inst == 0 {
        return Err(CliError::validation("dataset has no test instances"));
    }
    let levels = cfg.quantile_levels.clone().unwrap_or(DEFAULT_QUANTILE_LEVELS.to_vec());

    ensure_fresh_dir(&out, args.force)?;
    let _lock = LockGuard::acquire(&out)?;
    let mut fc = ForecastCsv::create(&out.join("forecast.csv"))?;
    let mut qc = QuantilesCsv::create(&out.join("quantiles.csv"), &levels)?;
    let mut invalid_paths = 0usize;
    for (i, traj) in dataset.test.iter().take(n_inst).enumerate() {
        let history = traj.states.slice_rows(0, split.observe);
        let ens = match &bundle.model {
            LoadedModel::Afm(m) => afm::forecast(m, &history, horizon, samples, seed, i)
                .map_err(|e| CliError::from_core("forecast", e))?,
            LoadedModel::Fm(m) => fm_forecast(m, &history, samples, seed, i)
                .map_err(|e| CliError::from_core("forecast", e))?,
        };
        invalid_paths += ens.valid.iter().filter(|v| !**v).count();
        fc.add_ensemble(i, &ens)?;
        qc.add_ensemble(i, &ens)?;
    }
    fc.finish()?;
    qc.finish()?;
    if invalid_paths > 0 {
        eprintln!(
            "warning: {invalid_paths} sample paths went non-finite and were \
             dropped from the output"
        );
    }
    println!(
        "wrote {}: model={} instances={} samples={} horizon={} seed={}",
        out.display(),
        bundle.model.kind(),
        n_inst,
        samples,
        match &bundle.model {
            LoadedModel::Fm(m) => m.arch.f,
            LoadedModel::Afm(_) => horizon,
        },
        seed
    );
    Ok(())
}
