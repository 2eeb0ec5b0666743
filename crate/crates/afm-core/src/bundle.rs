//! Model persistence: a `model.json` manifest (hyperparameters, sampler and
//! normalization settings, parameter layout) next to `params.bin`, the flat
//! 64-bit little-endian parameter values in manifest-declared order.
//!
//! A `model_kind` tag distinguishes the autoregressive model from the
//! fixed-horizon baseline; both share this format.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::afm::{init_params, AfmArch, AfmModel};
use crate::dynsys::NormStats;
use crate::error::CoreError;
use crate::flowpath::{FlowPathConfig, OdeSamplerConfig};
use crate::fmbase::{init_fm_params, BrownianCov, FmArch, FmModel};
use crate::numcore::ParamSet;

/// Parameter block shapes in canonical (declaration) order.
pub type ParamLayout = Vec<(String, usize, usize)>;

/// The `model.json` manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model_kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelManifest {
    Afm {
        system: String,
        train_seed: u64,
        arch: AfmArch,
        flow: FlowPathConfig,
        sampler: OdeSamplerConfig,
        normalization: NormStats,
        param_layout: ParamLayout,
    },
    Fm {
        system: String,
        train_seed: u64,
        arch: FmArch,
        sigma_bridge: f64,
        sampler: OdeSamplerConfig,
        normalization: NormStats,
        param_layout: ParamLayout,
    },
}

/// A model read back from disk.
#[derive(Debug, Clone)]
pub enum LoadedModel {
    Afm(AfmModel),
    Fm(FmModel),
}

impl LoadedModel {
    pub fn kind(&self) -> &'static str {
        match self {
            LoadedModel::Afm(_) => "afm",
            LoadedModel::Fm(_) => "fm",
        }
    }
}

/// A loaded bundle: the model plus the provenance recorded beside it.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub system: String,
    pub train_seed: u64,
    pub model: LoadedModel,
}

fn write_bundle(
    dir: &Path,
    manifest: &ModelManifest,
    params: &ParamSet,
) -> Result<(), CoreError> {
    fs::create_dir_all(dir).map_err(|e| CoreError::io(dir.display().to_string(), e))?;
    let manifest_path = dir.join("model.json");
    let text = serde_json::to_string_pretty(manifest)
        .map_err(|e| CoreError::json(manifest_path.display().to_string(), e))?;
    fs::write(&manifest_path, text + "\n")
        .map_err(|e| CoreError::io(manifest_path.display().to_string(), e))?;
    let bin_path = dir.join("params.bin");
    let flat = params.flatten();
    let mut bytes = Vec::with_capacity(flat.len() * 8);
    for v in &flat {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&bin_path, bytes).map_err(|e| CoreError::io(bin_path.display().to_string(), e))
}

/// Save an autoregressive model under `dir` (`model.json` + `params.bin`).
pub fn save_afm(
    dir: &Path,
    system: &str,
    train_seed: u64,
    model: &AfmModel,
) -> Result<(), CoreError> {
    let manifest = ModelManifest::Afm {
        system: system.into(),
        train_seed,
        arch: model.arch,
        flow: model.flow,
        sampler: model.sampler,
        normalization: model.norm.clone(),
        param_layout: model.params.layout(),
    };
    write_bundle(dir, &manifest, &model.params)
}

/// Save a baseline model under `dir` (`model.json` + `params.bin`).
pub fn save_fm(
    dir: &Path,
    system: &str,
    train_seed: u64,
    model: &FmModel,
) -> Result<(), CoreError> {
    let manifest = ModelManifest::Fm {
        system: system.into(),
        train_seed,
        arch: model.arch,
        sigma_bridge: model.sigma_bridge,
        sampler: model.sampler,
        normalization: model.norm.clone(),
        param_layout: model.params.layout(),
    };
    write_bundle(dir, &manifest, &model.params)
}

/// Rebuild a parameter set: zeros in the manifest-declared layout, filled
/// from `params.bin`, then cross-checked against the architecture's own
/// declaration order.
fn read_params(
    dir: &Path,
    layout: &ParamLayout,
    expected: &ParamLayout,
) -> Result<ParamSet, CoreError> {
    if layout != expected {
        return Err(CoreError::Bundle(format!(
            "manifest parameter layout does not match its architecture: \
             {} declared blocks vs {} expected",
            layout.len(),
            expected.len()
        )));
    }
    let bin_path = dir.join("params.bin");
    let bytes =
        fs::read(&bin_path).map_err(|e| CoreError::io(bin_path.display().to_string(), e))?;
    let n_scalars: usize = layout.iter().map(|(_, r, c)| r * c).sum();
    if bytes.len() != n_scalars * 8 {
        return Err(CoreError::Bundle(format!(
            "params.bin holds {} bytes, manifest declares {} scalars ({} bytes)",
            bytes.len(),
            n_scalars,
            n_scalars * 8
        )));
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunks_exact yields 8 bytes")))
        .collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::Bundle("params.bin contains non-finite values".into()));
    }
    let mut ps = ParamSet::new();
    for (name, rows, cols) in layout {
        ps.insert_zeros(name.clone(), *rows, *cols);
    }
    ps.load_flat(&flat).map_err(CoreError::Bundle)?;
    Ok(ps)
}

/// Load a bundle written by [`save_afm`] or [`save_fm`].
pub fn load_model(dir: &Path) -> Result<ModelBundle, CoreError> {
    let manifest_path = dir.join("model.json");
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| CoreError::io(manifest_path.display().to_string(), e))?;
    let manifest: ModelManifest = serde_json::from_str(&text)
        .map_err(|e| CoreError::json(manifest_path.display().to_string(), e))?;
    match manifest {
        ModelManifest::Afm {
            system,
            train_seed,
            arch,
            flow,
            sampler,
            normalization,
            param_layout,
        } => {
            arch.validate()?;
            let expected = init_params(&arch, 0).layout();
            let params = read_params(dir, &param_layout, &expected)?;
            Ok(ModelBundle {
                system,
                train_seed,
                model: LoadedModel::Afm(AfmModel {
                    arch,
                    flow,
                    sampler,
                    norm: normalization,
                    params,
                }),
            })
        }
        ModelManifest::Fm {
            system,
            train_seed,
            arch,
            sigma_bridge,
            sampler,
            normalization,
            param_layout,
        } => {
            arch.validate()?;
            let expected = init_fm_params(&arch, 0).layout();
            let params = read_params(dir, &param_layout, &expected)?;
            Ok(ModelBundle {
                system,
                train_seed,
                model: LoadedModel::Fm(FmModel {
                    arch,
                    sigma_bridge,
                    sampler,
                    norm: normalization,
                    params,
                    cov: BrownianCov::new(arch.f)?,
                }),
            })
        }
    }
}
