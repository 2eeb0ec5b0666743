//! Euler–Heun predictor–corrector integration with additive noise.
//!
//! Additive diffusion makes the Itô and Stratonovich readings coincide, so the
//! predictor–corrector scheme below is unambiguous. Trajectories are
//! integrated on a grid `refine`× finer than the saved grid and every
//! `refine`-th state is kept.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::CoreError;
use crate::numcore::Matrix;
use crate::dynsys::systems::{drift, SystemKind};

/// Any state component exceeding this magnitude marks the trajectory divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

/// One saved trajectory on the uniform grid.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Strictly increasing, uniformly spaced times (t1-t0)/(steps-1) apart.
    pub times: Vec<f64>,
    /// steps × dim state matrix.
    pub states: Matrix,
}

/// Simulation options. `noise_scale` multiplies the Brownian increments, so
/// the effective diffusion is `noise_scale · sigma_diff` per unit time.
#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    pub n_steps: usize,
    pub refine: usize,
    pub noise_scale: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { n_steps: 200, refine: 4, noise_scale: 0.003 }
    }
}

/// One Euler–Heun step: predictor `x̃ = x + f(x)dt + σ⊙dW`, then corrector
/// `x' = x + ½(f(x)+f(x̃))dt + σ⊙dW` with the same noise increment reused.
///
/// `dw` is the raw Brownian increment (N(0, dt·I) draws, possibly rescaled by
/// the caller); the system's per-dimension `sigma_diff` is applied inside.
pub fn euler_heun_step(kind: SystemKind, x: &[f64], dt: f64, dw: &[f64]) -> Vec<f64> {
    let spec = kind.spec();
    let mut out = vec![0.0; x.len()];
    let mut bufs = StepBufs::new(x.len());
    heun_step_with(
        |x, o| drift(kind, x, o),
        x,
        dt,
        &spec.sigma_diff,
        dw,
        spec.clamp_floor,
        &mut bufs,
        &mut out,
    );
    out
}

/// Scratch buffers so the inner loop does not allocate.
pub(crate) struct StepBufs {
    f0: Vec<f64>,
    f1: Vec<f64>,
    xt: Vec<f64>,
}

impl StepBufs {
    pub(crate) fn new(dim: usize) -> Self {
        StepBufs { f0: vec![0.0; dim], f1: vec![0.0; dim], xt: vec![0.0; dim] }
    }
}

/// Generic Euler–Heun step over an arbitrary drift; used by [`simulate`] and
/// directly testable against hand-evaluated schemes.
#[allow(clippy::too_many_arguments)]
pub(crate) fn heun_step_with(
    f: impl Fn(&[f64], &mut [f64]),
    x: &[f64],
    dt: f64,
    sigma: &[f64],
    dw: &[f64],
    clamp_floor: Option<f64>,
    bufs: &mut StepBufs,
    out: &mut [f64],
) {
    f(x, &mut bufs.f0);
    for i in 0..x.len() {
        bufs.xt[i] = x[i] + bufs.f0[i] * dt + sigma[i] * dw[i];
    }
    if let Some(floor) = clamp_floor {
        for v in bufs.xt.iter_mut() {
            *v = v.max(floor);
        }
    }
    f(&bufs.xt, &mut bufs.f1);
    for i in 0..x.len() {
        out[i] = x[i] + 0.5 * (bufs.f0[i] + bufs.f1[i]) * dt + sigma[i] * dw[i];
    }
    if let Some(floor) = clamp_floor {
        for v in out.iter_mut() {
            *v = v.max(floor);
        }
    }
}

/// Integrate one trajectory from `x0`. Deterministic given the RNG state.
///
/// Returns [`CoreError::Divergence`] (tagged with `traj_index`) if any state
/// exceeds [`DIVERGENCE_THRESHOLD`]; the caller decides whether to resample.
pub fn simulate(
    kind: SystemKind,
    x0: &[f64],
    rng: &mut impl Rng,
    opts: &SimOptions,
    traj_index: usize,
) -> Result<Trajectory, CoreError> {
    let spec = kind.spec();
    assert_eq!(x0.len(), spec.dim, "simulate: x0 dimension");
    assert!(opts.n_steps >= 2 && opts.refine >= 1);

    let dt_save = (spec.t1 - spec.t0) / (opts.n_steps - 1) as f64;
    let dt = dt_save / opts.refine as f64;
    let sqrt_dt = dt.sqrt();

    let mut states = Matrix::zeros(opts.n_steps, spec.dim);
    let mut times = Vec::with_capacity(opts.n_steps);
    let mut x = x0.to_vec();
    let mut next = vec![0.0; spec.dim];
    let mut dw = vec![0.0; spec.dim];
    let mut bufs = StepBufs::new(spec.dim);

    states.row_mut(0).copy_from_slice(&x);
    times.push(spec.t0);

    for save_idx in 1..opts.n_steps {
        for _ in 0..opts.refine {
            for d in dw.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *d = z * sqrt_dt * opts.noise_scale;
            }
            heun_step_with(
                |x, o| drift(kind, x, o),
                &x,
                dt,
                &spec.sigma_diff,
                &dw,
                spec.clamp_floor,
                &mut bufs,
                &mut next,
            );
            std::mem::swap(&mut x, &mut next);
            if x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_THRESHOLD) {
                return Err(CoreError::Divergence {
                    index: traj_index,
                    threshold: DIVERGENCE_THRESHOLD,
                });
            }
        }
        states.row_mut(save_idx).copy_from_slice(&x);
        times.push(spec.t0 + dt_save * save_idx as f64);
    }
    Ok(Trajectory { times, states })
}
