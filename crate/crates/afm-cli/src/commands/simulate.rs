//! `afm simulate`: generate a benchmark dataset directory.

use std::path::PathBuf;

use afm_core::dynsys::{generate_dataset, SimOptions, SystemKind};
use clap::Args;

use crate::config::{pick, ExperimentConfig};
use crate::errors::CliError;
use crate::lockfile::LockGuard;
use crate::output::ensure_fresh_dir;
use crate::presets::Scale;

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// System to simulate: lorenz | fitzhugh_nagumo | lotka_volterra |
    /// brusselator | van_der_pol
    #[arg(long)]
    pub system: Option<String>,
    /// Output dataset directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Training-trajectory count (default: 2000)
    #[arg(long, value_name = "N")]
    pub train: Option<usize>,
    /// Test-trajectory count (default: 400)
    #[arg(long, value_name = "N")]
    pub test: Option<usize>,
    /// Master seed for initial conditions and noise
    #[arg(long)]
    pub seed: Option<u64>,
    /// Diffusion scale multiplier applied to the per-system noise levels
    #[arg(long)]
    pub noise_scale: Option<f64>,
    /// Take trajectory counts from a scale preset instead of the full defaults
    #[arg(long, value_enum)]
    pub scale: Option<Scale>,
    /// Overwrite an existing non-empty output directory
    #[arg(long)]
    pub force: bool,
    /// JSON experiment config supplying defaults for any flag
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn run(args: SimulateArgs) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load_opt(args.config.as_ref())?;
    let system = args
        .system
        .or(cfg.system.clone())
        .ok_or_else(|| CliError::validation("--system is required"))?;
    let out = args
        .out
        .or(cfg.out.clone())
        .ok_or_else(|| CliError::validation("--out is required"))?;
    let kind = SystemKind::parse(&system).map_err(|e| CliError::from_core("simulate", e))?;
    let scale = args.scale.or(cfg.scale);
    let preset = scale.unwrap_or(Scale::Full).preset();
    let n_train = pick(args.train, cfg.n_train, preset.n_train);
    let n_test = pick(args.test, cfg.n_test, preset.n_test);
    let seed = pick(args.seed, cfg.seed, 0);
    let mut opts = SimOptions::default();
    opts.noise_scale = pick(args.noise_scale, cfg.noise_scale, opts.noise_scale);
    if !(opts.noise_scale.is_finite() && opts.noise_scale >= 0.0) {
        return Err(CliError::validation(format!(
            "noise_scale must be >= 0, got {}",
            opts.noise_scale
        )));
    }

    ensure_fresh_dir(&out, args.force)?;
    let _lock = LockGuard::acquire(&out)?;
    let dataset = generate_dataset(kind, n_train, n_test, seed, &opts)
        .map_err(|e| CliError::from_core("simulate", e))?;
    dataset
        .save_dir(&out)
        .map_err(|e| CliError::from_core("writing dataset", e))?;
    let meta = &dataset.meta;
    println!(
        "wrote {}: system={} dim={} steps={} split={}/{}/{} train={} test={} \
         rejected={} seed={}",
        out.display(),
        meta.system,
        meta.dim,
        meta.steps,
        meta.split.observe,
        meta.split.predict,
        meta.split.extrapolate,
        meta.n_train,
        meta.n_test,
        meta.rejected,
        meta.seed
    );
    Ok(())
}
