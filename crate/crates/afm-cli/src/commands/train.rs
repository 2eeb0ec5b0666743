//! `afm train`: fit a model to a dataset directory and write its bundle.

use std::path::PathBuf;

use afm_core::afm;
use afm_core::bundle::{save_afm, save_fm};
use afm_core::fmbase;
use clap::Args;

use crate::commands::{load_dataset, sampler_override};
use crate::config::{pick, ExperimentConfig};
use crate::errors::CliError;
use crate::lockfile::LockGuard;
use crate::output::{ensure_fresh_dir, write_train_log};
use crate::presets::Scale;

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Which model to train: afm (autoregressive) or fm (fixed-horizon
    /// baseline)
    #[arg(long, value_parser = ["afm", "fm"])]
    pub model: String,
    /// Dataset directory written by `afm simulate`
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Output directory for the model bundle and training log
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Network/optimizer scale preset (default: full)
    #[arg(long, value_enum)]
    pub scale: Option<Scale>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam learning rate
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Context window w of the autoregressive model
    #[arg(long, value_name = "W")]
    pub context_window: Option<usize>,
    /// Context length l of the baseline
    #[arg(long, value_name = "L")]
    pub fm_context: Option<usize>,
    /// Interpolant noise of the autoregressive flow path
    #[arg(long)]
    pub sigma_path: Option<f64>,
    /// Training-context jitter of the autoregressive model (standardized
    /// units)
    #[arg(long)]
    pub sigma_context: Option<f64>,
    /// Bridge noise of the baseline flow path
    #[arg(long)]
    pub sigma_bridge: Option<f64>,
    /// Weight the baseline regression by the inverse path covariance
    #[arg(long)]
    pub weighted_loss: Option<bool>,
    /// ODE sampler recorded in the bundle: euler | midpoint
    #[arg(long)]
    pub ode_method: Option<String>,
    #[arg(long)]
    pub ode_steps: Option<usize>,
    /// Overwrite an existing non-empty output directory
    #[arg(long)]
    pub force: bool,
    /// JSON experiment config supplying defaults for any flag
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn run(args: TrainArgs) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load_opt(args.config.as_ref())?;
    let dataset_dir = args
        .dataset
        .or(cfg.dataset.clone())
        .ok_or_else(|| CliError::validation("--dataset is required"))?;
    let out = args
        .out
        .or(cfg.out.clone())
        .ok_or_else(|| CliError::validation("--out is required"))?;
    let preset = args.scale.or(cfg.scale).unwrap_or(Scale::Full).preset();
    let dataset = load_dataset(&dataset_dir)?;
    let split = dataset.meta.split;
    let dim = dataset.meta.dim;
    let seed = pick(args.seed, cfg.seed, 0);

    ensure_fresh_dir(&out, args.force)?;
    let _lock = LockGuard::acquire(&out)?;
    let records = match args.model.as_str() {
        "afm" => {
            let mut arch = preset.afm_arch(dim, &split);
            if let Some(w) = args.context_window.or(cfg.context_window) {
                arch.w = w;
            }
            let mut train_cfg = preset.afm_config(seed);
            train_cfg.batch_size = pick(args.batch_size, cfg.batch_size, train_cfg.batch_size);
            train_cfg.lr = pick(args.lr, cfg.learning_rate, train_cfg.lr);
            train_cfg.max_steps = pick(args.max_steps, cfg.max_steps, train_cfg.max_steps);
            train_cfg.flow.sigma_path =
                pick(args.sigma_path, cfg.sigma_path, train_cfg.flow.sigma_path);
            train_cfg.sigma_context =
                pick(args.sigma_context, cfg.sigma_context, train_cfg.sigma_context);
            train_cfg.sampler = sampler_override(
                train_cfg.sampler,
                args.ode_method.clone().or(cfg.ode_method.clone()),
                args.ode_steps.or(cfg.ode_steps),
            )?;
            let (model, records) = afm::train(&dataset, &arch, &train_cfg)
                .map_err(|e| CliError::from_core("training afm", e))?;
            save_afm(&out, &dataset.meta.system, seed, &model)
                .map_err(|e| CliError::from_core("writing bundle", e))?;
            records
        }
        "fm" => {
            let mut arch = preset.fm_arch(dim, &split);
            if let Some(l) = args.fm_context.or(cfg.fm_context) {
                arch.l = l;
            }
            let mut train_cfg = preset.fm_config(seed);
            train_cfg.batch_size = pick(args.batch_size, cfg.batch_size, train_cfg.batch_size);
            train_cfg.lr = pick(args.lr, cfg.learning_rate, train_cfg.lr);
            train_cfg.max_steps = pick(args.max_steps, cfg.max_steps, train_cfg.max_steps);
            train_cfg.sigma_bridge =
                pick(args.sigma_bridge, cfg.sigma_bridge, train_cfg.sigma_bridge);
            train_cfg.weighted_loss =
                pick(args.weighted_loss, cfg.weighted_loss, train_cfg.weighted_loss);
            train_cfg.sampler = sampler_override(
                train_cfg.sampler,
                args.ode_method.clone().or(cfg.ode_method.clone()),
                args.ode_steps.or(cfg.ode_steps),
            )?;
            let (model, records) = fmbase::fm_train(&dataset, &arch, &train_cfg)
                .map_err(|e| CliError::from_core("training fm", e))?;
            save_fm(&out, &dataset.meta.system, seed, &model)
                .map_err(|e| CliError::from_core("writing bundle", e))?;
            records
        }
        other => return Err(CliError::validation(format!("unknown model kind '{other}'"))),
    };
    write_train_log(&out.join("train_log.csv"), &records)?;
    let last = records.last().expect("at least one training step");
    println!(
        "wrote {}: model={} system={} steps={} final_loss={:.6} wall_time={:.1}s",
        out.display(),
        args.model,
        dataset.meta.system,
        records.len(),
        last.loss,
        last.wall_time
    );
    Ok(())
}
