//! Experiment configuration files: one JSON object per experiment, flat
//! keys, unknown keys rejected. Command-line flags override config values;
//! config values override the scale preset; the preset supplies the
//! published defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::errors::CliError;
use crate::presets::Scale;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    // Scope.
    pub system: Option<String>,
    pub systems: Option<Vec<String>>,
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub scale: Option<Scale>,
    pub seed: Option<u64>,
    /// Seed count for multi-seed reproduction runs.
    pub seeds: Option<usize>,
    // Simulation.
    pub n_train: Option<usize>,
    pub n_test: Option<usize>,
    pub noise_scale: Option<f64>,
    // Training.
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub max_steps: Option<usize>,
    /// Autoregressive context window w.
    pub context_window: Option<usize>,
    /// Baseline context length l.
    pub fm_context: Option<usize>,
    pub sigma_path: Option<f64>,
    pub sigma_context: Option<f64>,
    pub sigma_bridge: Option<f64>,
    pub weighted_loss: Option<bool>,
    // Sampling and evaluation.
    pub samples: Option<usize>,
    pub horizon: Option<usize>,
    pub ode_method: Option<String>,
    pub ode_steps: Option<usize>,
    pub max_instances: Option<usize>,
    pub quantile_levels: Option<Vec<f64>>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::validation(format!("cannot read config {}: {e}", path.display()))
        })?;
        let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| {
            CliError::validation(format!("invalid config {}: {e}", path.display()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// No config file means an empty overlay.
    pub fn load_opt(path: Option<&PathBuf>) -> Result<Self, CliError> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    /// Range checks, run before any compute.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Validation(msg));
        if let Some(v) = self.learning_rate {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("learning_rate must be positive and finite, got {v}"));
            }
        }
        for (name, v) in [
            ("noise_scale", self.noise_scale),
            ("sigma_path", self.sigma_path),
            ("sigma_context", self.sigma_context),
            ("sigma_bridge", self.sigma_bridge),
        ] {
            if let Some(v) = v {
                if !(v.is_finite() && v >= 0.0) {
                    return bad(format!("{name} must be >= 0 and finite, got {v}"));
                }
            }
        }
        for (name, v, lo) in [
            ("batch_size", self.batch_size, 1usize),
            ("max_steps", self.max_steps, 1),
            ("context_window", self.context_window, 1),
            ("fm_context", self.fm_context, 1),
            ("samples", self.samples, 2),
            ("horizon", self.horizon, 1),
            ("ode_steps", self.ode_steps, 1),
            ("max_instances", self.max_instances, 1),
            ("seeds", self.seeds, 1),
            ("n_train", self.n_train, 1),
            ("n_test", self.n_test, 1),
        ] {
            if let Some(v) = v {
                if v < lo {
                    return bad(format!("{name} must be >= {lo}, got {v}"));
                }
            }
        }
        if let Some(m) = &self.ode_method {
            if m != "euler" && m != "midpoint" {
                return bad(format!("ode_method must be euler or midpoint, got '{m}'"));
            }
        }
        if let Some(levels) = &self.quantile_levels {
            let ok = !levels.is_empty()
                && levels.windows(2).all(|w| w[0] < w[1])
                && levels.iter().all(|l| *l > 0.0 && *l < 1.0);
            if !ok {
                return bad(
                    "quantile_levels must be strictly increasing and inside (0,1)".into(),
                );
            }
        }
        Ok(())
    }
}

/// Three-way precedence: explicit flag, then config file, then preset value.
pub fn pick<T: Clone>(flag: Option<T>, cfg: Option<T>, preset: T) -> T {
    flag.or(cfg).unwrap_or(preset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_cfg(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let f = write_cfg(r#"{"batch_size": 8, "bogus_knob": 3}"#);
        let err = ExperimentConfig::load(f.path()).unwrap_err();
        assert!(err.to_string().contains("bogus_knob"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn out_of_range_values_are_rejected() {
        for text in [
            r#"{"learning_rate": -0.1}"#,
            r#"{"batch_size": 0}"#,
            r#"{"samples": 1}"#,
            r#"{"ode_method": "rk4"}"#,
            r#"{"quantile_levels": [0.5, 0.5]}"#,
            r#"{"quantile_levels": [0.0, 0.5]}"#,
            r#"{"sigma_bridge": -1.0}"#,
        ] {
            let f = write_cfg(text);
            assert!(ExperimentConfig::load(f.path()).is_err(), "accepted: {text}");
        }
    }

    #[test]
    fn valid_config_round_trips() {
        let f = write_cfg(
            r#"{"system": "lorenz", "scale": "desk", "batch_size": 16,
                "quantile_levels": [0.1, 0.5, 0.9], "weighted_loss": false}"#,
        );
        let cfg = ExperimentConfig::load(f.path()).unwrap();
        assert_eq!(cfg.system.as_deref(), Some("lorenz"));
        assert_eq!(cfg.scale, Some(Scale::Desk));
        assert_eq!(cfg.batch_size, Some(16));
        assert_eq!(cfg.weighted_loss, Some(false));
    }

    #[test]
    fn precedence_is_flag_config_preset() {
        assert_eq!(pick(Some(1), Some(2), 3), 1);
        assert_eq!(pick(None, Some(2), 3), 2);
        assert_eq!(pick::<usize>(None, None, 3), 3);
    }
}
