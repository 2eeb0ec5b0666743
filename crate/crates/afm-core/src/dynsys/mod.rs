//! The five stochastic dynamical-system benchmarks, the Euler–Heun
//! integrator, and forecasting-dataset generation.

pub mod dataset;
pub mod integrate;
pub mod systems;

pub use dataset::{generate_dataset, DatasetMeta, ForecastDataset, NormStats, SplitSpec};
pub use integrate::{euler_heun_step, simulate, SimOptions, Trajectory, DIVERGENCE_THRESHOLD};
pub use systems::{drift, SystemKind, SystemSpec};
