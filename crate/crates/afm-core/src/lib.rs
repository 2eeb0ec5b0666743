//! Probabilistic multivariate time-series forecasting with autoregressive
//! flow matching.
//!
//! The crate is organized bottom-up:
//!
//! - [`numcore`]: dense `f64` matrices, a reverse-mode gradient tape over a
//!   fixed operation set, and the Adam optimizer.
//! - [`dynsys`]: five stochastic dynamical-system benchmarks, an Euler–Heun
//!   integrator, and forecasting-dataset generation.
//! - [`nets`]: the context encoder (bidirectional LSTM) and velocity network
//!   (MLP), written against an evaluation-context trait so the same code runs
//!   on the gradient tape during training and on plain matrices at inference.
//! - [`flowpath`]: straight-path interpolants, conditional velocity targets,
//!   and fixed-step ODE samplers.
//! - [`afm`]: autoregressive flow-matching training and rolling-window
//!   ensemble forecasting.
//! - [`fmbase`]: the non-autoregressive baseline that models the whole future
//!   window jointly with a Brownian-bridge conditional path.
//! - [`metrics`]: CRPS and NRMSE evaluation over prediction/extrapolation
//!   regimes.
//! - [`bundle`]: model persistence (JSON manifest + flat binary parameters).

pub mod afm;
pub mod bundle;
pub mod dynsys;
pub mod error;
pub mod flowpath;
pub mod fmbase;
pub mod metrics;
pub mod nets;
pub mod numcore;
pub mod parutil;
pub mod protocol;
pub mod rngstream;

pub use error::CoreError;
