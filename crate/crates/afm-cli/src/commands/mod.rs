//! The five subcommands and their shared plumbing.

pub mod evaluate;
pub mod forecast;
pub mod repro;
pub mod simulate;
pub mod train;

use std::path::Path;

use afm_core::bundle::{LoadedModel, ModelBundle};
use afm_core::dynsys::ForecastDataset;
use afm_core::flowpath::{OdeMethod, OdeSamplerConfig};

use crate::errors::CliError;

pub(crate) fn load_dataset(dir: &Path) -> Result<ForecastDataset, CliError> {
    ForecastDataset::load_dir(dir).map_err(|e| CliError::from_core("loading dataset", e))
}

pub(crate) fn load_bundle(dir: &Path) -> Result<ModelBundle, CliError> {
    afm_core::bundle::load_model(dir).map_err(|e| CliError::from_core("loading model", e))
}

/// A model may only forecast the dataset it was trained for: same system,
/// same dimension, same normalization statistics.
pub(crate) fn check_compat(
    bundle: &ModelBundle,
    ds: &ForecastDataset,
) -> Result<(), CliError> {
    let (norm, dim) = match &bundle.model {
        LoadedModel::Afm(m) => (&m.norm, m.arch.n),
        LoadedModel::Fm(m) => (&m.norm, m.arch.n),
    };
    if bundle.system != ds.meta.system {
        return Err(CliError::validation(format!(
            "model was trained on '{}', dataset is '{}'",
            bundle.system, ds.meta.system
        )));
    }
    if dim != ds.meta.dim {
        return Err(CliError::validation(format!(
            "model dimension {dim} != dataset dimension {}",
            ds.meta.dim
        )));
    }
    if *norm != ds.meta.normalization {
        return Err(CliError::validation(
            "model normalization statistics do not match the dataset \
             (was it trained on a different simulation run?)"
                .to_string(),
        ));
    }
    Ok(())
}

/// Assemble an ODE sampler config from optional method/step overrides.
pub(crate) fn sampler_override(
    base: OdeSamplerConfig,
    method: Option<String>,
    steps: Option<usize>,
) -> Result<OdeSamplerConfig, CliError> {
    let method = match method.as_deref() {
        None => base.method,
        Some("euler") => OdeMethod::Euler,
        Some("midpoint") => OdeMethod::Midpoint,
        Some(other) => {
            return Err(CliError::validation(format!(
                "unknown ode method '{other}' (euler|midpoint)"
            )))
        }
    };
    Ok(OdeSamplerConfig { method, n_steps: steps.unwrap_or(base.n_steps) })
}
