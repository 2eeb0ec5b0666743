//! Three built-in experiment scales.
//!
//! `full` matches the published experimental setup (2000/400 trajectories,
//! two-layer bidirectional LSTM encoder with 64 hidden units projected to a
//! 64-dim context, three 64-wide MLP hidden layers, 16-dim Fourier step
//! features, batch 128, 20k optimizer steps, 100-sample ensembles; the
//! trajectory-level baseline uses a 4-layer bidirectional LSTM with 128
//! hidden units). `desk` shrinks networks and step counts so the whole
//! two-system comparison fits in tens of minutes on one laptop core, and
//! `smoke` is only meant to exercise the pipeline in tests.

use afm_core::afm::{AfmArch, AfmConfig};
use afm_core::dynsys::SplitSpec;
use afm_core::flowpath::{FlowPathConfig, OdeMethod, OdeSamplerConfig};
use afm_core::fmbase::{FmArch, FmConfig};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Smoke,
    Desk,
    Full,
}

impl Scale {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scale::Smoke => "smoke",
            Scale::Desk => "desk",
            Scale::Full => "full",
        }
    }
}

impl std::str::FromStr for Scale {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "smoke" => Ok(Scale::Smoke),
            "desk" => Ok(Scale::Desk),
            "full" => Ok(Scale::Full),
            other => Err(format!("unknown scale '{other}' (smoke|desk|full)")),
        }
    }
}

/// Everything a scale pins down.
#[derive(Debug, Clone, Copy)]
pub struct Preset {
    pub n_train: usize,
    pub n_test: usize,
    /// Markov context window of the autoregressive model.
    pub afm_w: usize,
    pub afm_enc_hidden: usize,
    pub afm_enc_layers: usize,
    pub afm_h_dim: usize,
    pub afm_mlp_hidden: usize,
    pub afm_mlp_depth: usize,
    pub afm_batch: usize,
    pub afm_steps: usize,
    /// Context jitter σ for autoregressive training (standardized units).
    pub afm_sigma_context: f64,
    /// Context length of the fixed-horizon baseline.
    pub fm_l: usize,
    pub fm_enc_hidden: usize,
    pub fm_enc_layers: usize,
    pub fm_h_dim: usize,
    pub fm_vel_hidden: usize,
    pub fm_vel_layers: usize,
    pub fm_batch: usize,
    pub fm_steps: usize,
    pub fourier_dim: usize,
    pub lr: f64,
    pub samples: usize,
    pub ode: OdeSamplerConfig,
    /// Default seed count for end-to-end reproduction runs.
    pub seeds: usize,
}

impl Scale {
    pub fn preset(self) -> Preset {
        match self {
            Scale::Full => Preset {
                n_train: 2000,
                n_test: 400,
                afm_w: 75,
                afm_enc_hidden: 64,
                afm_enc_layers: 2,
                afm_h_dim: 64,
                afm_mlp_hidden: 64,
                afm_mlp_depth: 3,
                afm_batch: 128,
                afm_steps: 20_000,
                afm_sigma_context: 0.0,
                fm_l: 75,
                fm_enc_hidden: 64,
                fm_enc_layers: 2,
                fm_h_dim: 64,
                fm_vel_hidden: 128,
                fm_vel_layers: 4,
                fm_batch: 128,
                fm_steps: 20_000,
                fourier_dim: 16,
                lr: 0.003,
                samples: 100,
                ode: OdeSamplerConfig { method: OdeMethod::Euler, n_steps: 16 },
                seeds: 5,
            },
            Scale::Desk => Preset {
                n_train: 400,
                n_test: 80,
                afm_w: 6,
                afm_enc_hidden: 32,
                afm_enc_layers: 1,
                afm_h_dim: 32,
                afm_mlp_hidden: 64,
                afm_mlp_depth: 3,
                afm_batch: 64,
                afm_steps: 16_000,
                afm_sigma_context: 0.01,
                fm_l: 75,
                fm_enc_hidden: 32,
                fm_enc_layers: 1,
                fm_h_dim: 32,
                fm_vel_hidden: 32,
                fm_vel_layers: 1,
                fm_batch: 16,
                fm_steps: 1200,
                fourier_dim: 16,
                lr: 0.003,
                samples: 16,
                ode: OdeSamplerConfig { method: OdeMethod::Euler, n_steps: 16 },
                seeds: 3,
            },
            Scale::Smoke => Preset {
                n_train: 8,
                n_test: 2,
                afm_w: 4,
                afm_enc_hidden: 8,
                afm_enc_layers: 1,
                afm_h_dim: 8,
                afm_mlp_hidden: 16,
                afm_mlp_depth: 2,
                afm_batch: 8,
                afm_steps: 25,
                afm_sigma_context: 0.0,
                fm_l: 10,
                fm_enc_hidden: 8,
                fm_enc_layers: 1,
                fm_h_dim: 8,
                fm_vel_hidden: 8,
                fm_vel_layers: 1,
                fm_batch: 4,
                fm_steps: 10,
                fourier_dim: 4,
                lr: 0.003,
                samples: 4,
                ode: OdeSamplerConfig { method: OdeMethod::Euler, n_steps: 4 },
                seeds: 1,
            },
        }
    }
}

impl Preset {
    /// Autoregressive architecture for a dataset of dimension `dim`; the
    /// context window never exceeds the observed segment.
    pub fn afm_arch(&self, dim: usize, split: &SplitSpec) -> AfmArch {
        AfmArch {
            n: dim,
            w: self.afm_w.min(split.observe),
            enc_hidden: self.afm_enc_hidden,
            enc_layers: self.afm_enc_layers,
            h_dim: self.afm_h_dim,
            mlp_hidden: self.afm_mlp_hidden,
            mlp_depth: self.afm_mlp_depth,
            fourier_dim: self.fourier_dim,
        }
    }

    pub fn afm_config(&self, seed: u64) -> AfmConfig {
        AfmConfig {
            batch_size: self.afm_batch,
            lr: self.lr,
            max_steps: self.afm_steps,
            seed,
            flow: FlowPathConfig::default(),
            sigma_context: self.afm_sigma_context,
            sampler: self.ode,
            n_samples: self.samples,
        }
    }

    /// Baseline architecture: the trained horizon is the prediction window.
    pub fn fm_arch(&self, dim: usize, split: &SplitSpec) -> FmArch {
        FmArch {
            n: dim,
            f: split.predict,
            l: self.fm_l.min(split.observe),
            enc_hidden: self.fm_enc_hidden,
            enc_layers: self.fm_enc_layers,
            h_dim: self.fm_h_dim,
            vel_hidden: self.fm_vel_hidden,
            vel_layers: self.fm_vel_layers,
            fourier_dim: self.fourier_dim,
        }
    }

    pub fn fm_config(&self, seed: u64) -> FmConfig {
        FmConfig {
            batch_size: self.fm_batch,
            lr: self.lr,
            max_steps: self.fm_steps,
            seed,
            sigma_bridge: 0.1,
            weighted_loss: true,
            sampler: self.ode,
            n_samples: self.samples,
        }
    }
}
