//! `afm repro`: the end-to-end benchmark pipeline. For every selected system
//! it simulates a dataset, trains both models across the requested seed
//! replicates, writes sample forecast artifacts, scores everything, and
//! emits one consolidated `metrics.csv`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use afm_core::bundle::LoadedModel;
use afm_core::dynsys::SystemKind;
use afm_core::protocol::{self, EvalOptions, MetricReport};
use clap::Args;

use crate::commands::{evaluate::print_table, forecast, load_bundle, load_dataset, simulate,
                      train, check_compat};
use crate::config::{pick, ExperimentConfig};
use crate::errors::CliError;
use crate::lockfile::LockGuard;
use crate::output::{ensure_fresh_dir, metric_rows, write_metrics_csv, MetricsRow};
use crate::presets::Scale;

/// How many test instances the forecast-artifact stage samples by default;
/// the full ensembles are recomputed inside evaluation anyway, so this only
/// bounds the size of the inspectable CSV output.
const DEFAULT_FORECAST_INSTANCES: usize = 10;

#[derive(Debug, Args)]
pub struct ReproArgs {
    /// Comma-separated benchmark systems (default: all five)
    #[arg(long, value_delimiter = ',')]
    pub systems: Vec<String>,
    /// Number of seed replicates; replicate k trains and evaluates with
    /// seed = --seed + k (default: the scale preset's seed count)
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Base seed (default: 0)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Experiment scale preset (default: desk)
    #[arg(long, value_enum)]
    pub scale: Option<Scale>,
    /// Output root directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Ensemble size for forecasting and evaluation
    #[arg(long)]
    pub samples: Option<usize>,
    /// Diffusion scale multiplier passed to the simulate stage
    #[arg(long)]
    pub noise_scale: Option<f64>,
    /// Training-trajectory count override
    #[arg(long, value_name = "N")]
    pub train: Option<usize>,
    /// Test-trajectory count override
    #[arg(long, value_name = "N")]
    pub test: Option<usize>,
    /// Evaluate (and forecast) only the first N test instances
    #[arg(long, value_name = "N")]
    pub max_instances: Option<usize>,
    /// Overwrite an existing non-empty output directory
    #[arg(long)]
    pub force: bool,
    /// JSON experiment config supplying defaults for any flag
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn stage<T>(name: &str, ctx: &str, r: Result<T, CliError>) -> Result<T, CliError> {
    r.map_err(|e| {
        let msg = format!("stage {name} ({ctx}) failed: {}", e.message());
        match e {
            CliError::Validation(_) => CliError::Validation(msg),
            CliError::Runtime(_) => CliError::Runtime(msg),
        }
    })
}

pub fn run(args: ReproArgs) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load_opt(args.config.as_ref())?;
    let out = args
        .out
        .or(cfg.out.clone())
        .ok_or_else(|| CliError::validation("--out is required"))?;
    let scale = args.scale.or(cfg.scale).unwrap_or(Scale::Desk);
    let preset = scale.preset();
    let system_names: Vec<String> = if !args.systems.is_empty() {
        args.systems.clone()
    } else if let Some(s) = &cfg.systems {
        s.clone()
    } else {
        SystemKind::ALL.iter().map(|k| k.name().to_string()).collect()
    };
    let mut systems = Vec::with_capacity(system_names.len());
    for name in &system_names {
        let kind = SystemKind::parse(name).map_err(|e| CliError::from_core("repro", e))?;
        if systems.contains(&kind) {
            return Err(CliError::validation(format!("system '{}' listed twice", kind.name())));
        }
        systems.push(kind);
    }
    let n_seeds = pick(args.seeds, cfg.seeds, preset.seeds).max(1);
    let base_seed = pick(args.seed, cfg.seed, 0);
    let samples = pick(args.samples, cfg.samples, preset.samples);
    if samples < 2 {
        return Err(CliError::validation("--samples must be >= 2"));
    }

    ensure_fresh_dir(&out, args.force)?;
    let _lock = LockGuard::acquire(&out)?;
    let mut all_rows: Vec<MetricsRow> = Vec::new();
    for kind in &systems {
        let sys = kind.name();
        let sys_dir = out.join(sys);
        let data_dir = sys_dir.join("data");
        stage(
            "simulate",
            sys,
            simulate::run(simulate::SimulateArgs {
                system: Some(sys.to_string()),
                out: Some(data_dir.clone()),
                train: args.train.or(cfg.n_train),
                test: args.test.or(cfg.n_test),
                seed: Some(base_seed),
                noise_scale: args.noise_scale.or(cfg.noise_scale),
                scale: Some(scale),
                force: true,
                config: None,
            }),
        )?;

        let mut bundles: Vec<(u64, PathBuf)> = Vec::new();
        for k in 0..n_seeds {
            let seed = base_seed + k as u64;
            for model in ["afm", "fm"] {
                let bundle_dir = sys_dir.join(format!("{model}_s{k}"));
                stage(
                    &format!("train-{model}"),
                    &format!("{sys}, seed {seed}"),
                    train::run(train::TrainArgs {
                        model: model.to_string(),
                        dataset: Some(data_dir.clone()),
                        out: Some(bundle_dir.clone()),
                        scale: Some(scale),
                        seed: Some(seed),
                        batch_size: None,
                        lr: None,
                        max_steps: None,
                        context_window: None,
                        fm_context: None,
                        sigma_path: None,
                        sigma_context: None,
                        sigma_bridge: None,
                        weighted_loss: None,
                        ode_method: None,
                        ode_steps: None,
                        force: true,
                        config: None,
                    }),
                )?;
                bundles.push((seed, bundle_dir));
            }
        }

        // Sample forecast artifacts from the first replicate of each model;
        // evaluation below recomputes full ensembles for every replicate.
        for model in ["afm", "fm"] {
            stage(
                "forecast",
                &format!("{sys}, {model}"),
                forecast::run(forecast::ForecastArgs {
                    bundle: sys_dir.join(format!("{model}_s0")),
                    dataset: Some(data_dir.clone()),
                    out: Some(sys_dir.join(format!("forecast_{model}"))),
                    samples: Some(samples),
                    horizon: None,
                    seed: Some(base_seed),
                    instances: Some(
                        args.max_instances
                            .or(cfg.max_instances)
                            .unwrap_or(DEFAULT_FORECAST_INSTANCES),
                    ),
                    force: true,
                    config: None,
                }),
            )?;
        }

        let dataset = stage("evaluate", sys, load_dataset(&data_dir))?;
        let mut by_kind: BTreeMap<String, Vec<MetricReport>> = BTreeMap::new();
        for (seed, dir) in &bundles {
            let ctx = format!("{sys}, seed {seed}");
            let bundle = stage("evaluate", &ctx, load_bundle(dir))?;
            stage("evaluate", &ctx, check_compat(&bundle, &dataset))?;
            let opts = EvalOptions {
                n_samples: samples,
                seed: *seed,
                max_instances: args.max_instances.or(cfg.max_instances),
            };
            let report = stage(
                "evaluate",
                &ctx,
                match &bundle.model {
                    LoadedModel::Afm(m) => protocol::evaluate_afm(m, &dataset, &opts),
                    LoadedModel::Fm(m) => protocol::evaluate_fm(m, &dataset, &opts),
                }
                .map_err(|e| CliError::from_core("scoring", e)),
            )?;
            by_kind.entry(report.model_kind.clone()).or_default().push(report);
        }
        for reports in by_kind.values() {
            let refs: Vec<&MetricReport> = reports.iter().collect();
            all_rows.extend(metric_rows(&refs));
        }
    }

    write_metrics_csv(&out.join("metrics.csv"), &all_rows)?;
    print_table(&all_rows);
    println!(
        "wrote {}: systems={} seeds={} scale={} samples={} base_seed={}",
        out.join("metrics.csv").display(),
        system_names.join(","),
        n_seeds,
        scale.as_str(),
        samples,
        base_seed
    );
    Ok(())
}
