//! Non-autoregressive flow-matching baseline: one joint flow over the whole
//! future window, with a Brownian-bridge conditional path.
//!
//! The flow state is the full f-step future trajectory, flattened step-major
//! (step 0's dimensions first — identical to the row-major layout of an f×n
//! matrix). The base distribution is N(0, Σ) with Σ block-diagonal per
//! dimension, each block the Brownian-motion covariance Σ_ij = min(i+1, j+1)·Δ.
//! The conditional path between trajectories Y⁰ and Y¹ is the bridge
//! N((1−s)Y⁰ + sY¹, σ_b²·s(1−s)·Σ), whose matched velocity is
//!   u = Y¹ − Y⁰ + (σ_b²(1−2s)/2)·Σ⁻¹(Y − m_s),
//! which reduces to the straight-path velocity as σ_b → 0.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::afm::{reduce_shards, run_adam_loop, ForecastEnsemble, TrainRecord};
use crate::dynsys::{ForecastDataset, NormStats};
use crate::error::CoreError;
use crate::flowpath::{ode_sample_flagged, OdeSamplerConfig};
use crate::nets::{
    encode_context, fourier_rows, init_encoder, init_lstm, lstm_forward, EncoderCfg, LstmSpec,
};
use crate::numcore::{EvalCtx, Matrix, OpCtx, ParamSet, TapeCtx};
use crate::parutil;
use crate::rngstream::Purpose;

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(a: &Matrix) -> Result<Matrix, CoreError> {
    assert_eq!(a.rows(), a.cols(), "cholesky: square matrix required");
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if d <= 1e-12 {
            return Err(CoreError::CholeskyFailure { pivot: j });
        }
        let dj = d.sqrt();
        l.set(j, j, dj);
        for i in j + 1..n {
            let mut v = a.get(i, j);
            for k in 0..j {
                v -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, v / dj);
        }
    }
    Ok(l)
}

/// Solve (L Lᵀ) x = b by forward then backward substitution.
fn chol_solve(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    assert_eq!(b.len(), n, "chol_solve: length mismatch");
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= l.get(i, k) * y[k];
        }
        y[i] = v / l.get(i, i);
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut v = y[i];
        for k in i + 1..n {
            v -= l.get(k, i) * x[k];
        }
        x[i] = v / l.get(i, i);
    }
    x
}

/// Per-dimension Brownian-motion covariance over the f future steps, with
/// its Cholesky factor and explicit inverse.
#[derive(Debug, Clone)]
pub struct BrownianCov {
    pub f: usize,
    pub delta: f64,
    sigma: Matrix,
    chol: Matrix,
    inv: Matrix,
}

impl BrownianCov {
    /// Standard scale: Δ = 2/(f+1), which makes diag(Σ) = Δ·(1..f) average
    /// exactly 1 so base samples are comparable to standardized data.
    pub fn new(f: usize) -> Result<Self, CoreError> {
        Self::with_delta(f, 2.0 / (f as f64 + 1.0))
    }

    pub fn with_delta(f: usize, delta: f64) -> Result<Self, CoreError> {
        if f < 1 || delta <= 0.0 {
            return Err(CoreError::InvalidConfig(
                "Brownian covariance needs f >= 1 and delta > 0".into(),
            ));
        }
        let sigma = Matrix::from_fn(f, f, |i, j| (i.min(j) + 1) as f64 * delta);
        let chol = cholesky(&sigma)?;
        let mut inv = Matrix::zeros(f, f);
        let mut e = vec![0.0; f];
        for j in 0..f {
            e[j] = 1.0;
            let col = chol_solve(&chol, &e);
            e[j] = 0.0;
            for i in 0..f {
                inv.set(i, j, col[i]);
            }
        }
        // Symmetrize away round-off.
        let inv = Matrix::from_fn(f, f, |i, j| 0.5 * (inv.get(i, j) + inv.get(j, i)));
        Ok(BrownianCov { f, delta, sigma, chol, inv })
    }

    pub fn sigma(&self) -> &Matrix {
        &self.sigma
    }

    pub fn chol(&self) -> &Matrix {
        &self.chol
    }

    pub fn inv(&self) -> &Matrix {
        &self.inv
    }

    /// Σ⁻¹ expanded to the step-major trajectory space of n dimensions:
    /// W[t·n+d, t'·n+d'] = Σ⁻¹[t,t']·1{d=d'}.
    pub fn expand_inv(&self, n: usize) -> Matrix {
        Matrix::from_fn(self.f * n, self.f * n, |r, c| {
            if r % n == c % n {
                self.inv.get(r / n, c / n)
            } else {
                0.0
            }
        })
    }

    /// One N(0, Σ)-distributed trajectory in the step-major layout: per
    /// dimension, f standard normals pushed through the Cholesky factor.
    pub fn sample_base_row(&self, n: usize, rng: &mut impl Rng) -> Vec<f64> {
        let f = self.f;
        let mut out = vec![0.0; f * n];
        let mut z = vec![0.0; f];
        for d in 0..n {
            for v in z.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            for t in 0..f {
                let mut acc = 0.0;
                for k in 0..=t {
                    acc += self.chol.get(t, k) * z[k];
                }
                out[t * n + d] = acc;
            }
        }
        out
    }
}

/// Flatten an f×n trajectory block into its step-major row form. (The
/// row-major storage of an f×n matrix already is step-major, so this is a
/// reshape.)
pub fn flatten_traj(m: &Matrix) -> Matrix {
    Matrix::row_vec(m.data().to_vec())
}

/// Inverse of [`flatten_traj`].
pub fn unflatten_traj(row: &[f64], f: usize, n: usize) -> Matrix {
    Matrix::from_vec(f, n, row.to_vec())
}

/// Sample the bridge Y^s ~ N((1−s)Y⁰ + sY¹, σ_b²·s(1−s)·Σ) for one f×n
/// trajectory pair.
pub fn bridge_sample(
    y0: &Matrix,
    y1: &Matrix,
    s: f64,
    sigma_bridge: f64,
    cov: &BrownianCov,
    rng: &mut impl Rng,
) -> Matrix {
    assert_eq!(y0.shape(), y1.shape(), "bridge_sample: endpoint shapes");
    assert_eq!(y0.rows(), cov.f, "bridge_sample: f mismatch");
    assert!((0.0..=1.0).contains(&s), "bridge_sample: s in [0,1]");
    let n = y0.cols();
    let coef = sigma_bridge * (s * (1.0 - s)).sqrt();
    let noise = cov.sample_base_row(n, rng);
    Matrix::from_fn(cov.f, n, |t, d| {
        (1.0 - s) * y0.get(t, d) + s * y1.get(t, d) + coef * noise[t * n + d]
    })
}

/// The bridge-matched conditional velocity for one f×n trajectory:
/// u = Y¹ − Y⁰ + (σ_b²(1−2s)/2)·Σ⁻¹(Y − m_s).
pub fn fm_velocity_target(
    y: &Matrix,
    y0: &Matrix,
    y1: &Matrix,
    s: f64,
    sigma_bridge: f64,
    cov: &BrownianCov,
) -> Matrix {
    assert_eq!(y.shape(), y0.shape(), "fm_velocity_target: shapes");
    assert_eq!(y0.shape(), y1.shape(), "fm_velocity_target: shapes");
    let base = y1.sub(y0);
    if sigma_bridge == 0.0 {
        return base;
    }
    let m_s = Matrix::from_fn(y.rows(), y.cols(), |t, d| {
        (1.0 - s) * y0.get(t, d) + s * y1.get(t, d)
    });
    let d = y.sub(&m_s);
    let coef = sigma_bridge * sigma_bridge * (1.0 - 2.0 * s) / 2.0;
    base.add(&cov.inv().matmul(&d).scale(coef))
}

/// Network architecture of the baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FmArch {
    /// Data dimension.
    pub n: usize,
    /// Fixed forecast length (the trained horizon).
    pub f: usize,
    /// Context length fed to the encoder.
    pub l: usize,
    pub enc_hidden: usize,
    pub enc_layers: usize,
    pub h_dim: usize,
    /// Velocity LSTM width and depth (runs over the f future steps).
    pub vel_hidden: usize,
    pub vel_layers: usize,
    pub fourier_dim: usize,
}

impl FmArch {
    pub fn encoder_cfg(&self) -> EncoderCfg {
        EncoderCfg {
            input: self.n,
            hidden: self.enc_hidden,
            layers: self.enc_layers,
            h_dim: self.h_dim,
        }
    }

    pub fn vel_spec(&self) -> LstmSpec {
        LstmSpec {
            input: self.n + self.h_dim + self.fourier_dim,
            hidden: self.vel_hidden,
            layers: self.vel_layers,
        }
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        let bad = |msg: &str| Err(CoreError::InvalidConfig(msg.into()));
        if self.n < 1 || self.f < 1 || self.l < 1 {
            return bad("n, f and l must all be >= 1");
        }
        if self.enc_hidden < 1 || self.enc_layers < 1 || self.h_dim < 1 {
            return bad("encoder sizes must be >= 1");
        }
        if self.vel_hidden < 1 || self.vel_layers < 1 {
            return bad("velocity LSTM sizes must be >= 1");
        }
        if self.fourier_dim < 2 || self.fourier_dim % 2 != 0 {
            return bad("fourier_dim must be even and >= 2");
        }
        Ok(())
    }
}

/// Training configuration of the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FmConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub max_steps: usize,
    pub seed: u64,
    /// Bridge noise scale σ_b.
    pub sigma_bridge: f64,
    /// Use the Σ⁻¹-weighted regression (the unweighted switch exists for
    /// ablations).
    pub weighted_loss: bool,
    pub sampler: OdeSamplerConfig,
    /// Ensemble size S used at inference.
    pub n_samples: usize,
}

impl Default for FmConfig {
    fn default() -> Self {
        FmConfig {
            batch_size: 128,
            lr: 0.003,
            max_steps: 20_000,
            seed: 0,
            sigma_bridge: 0.1,
            weighted_loss: true,
            sampler: OdeSamplerConfig::default(),
            n_samples: 100,
        }
    }
}

/// A trained baseline model.
#[derive(Debug, Clone)]
pub struct FmModel {
    pub arch: FmArch,
    pub sigma_bridge: f64,
    pub sampler: OdeSamplerConfig,
    pub norm: NormStats,
    pub params: ParamSet,
    pub cov: BrownianCov,
}

/// Initialize context encoder ("enc.…") and velocity LSTM + zero head
/// ("vel.…").
pub fn init_fm_params(arch: &FmArch, seed: u64) -> ParamSet {
    let mut ps = ParamSet::new();
    let mut rng = crate::rngstream::stream(seed, Purpose::ParamInit, 0);
    init_encoder(&mut ps, "enc", &arch.encoder_cfg(), &mut rng);
    init_lstm(&mut ps, "vel", &arch.vel_spec(), &mut rng);
    ps.insert_zeros("vel.head.w", 2 * arch.vel_hidden, arch.n);
    ps.insert_zeros("vel.head.b", 1, arch.n);
    ps
}

/// Velocity network over the flattened trajectory state: the LSTM reads one
/// step of Y per timestep (alongside h and the fourier features of s) and a
/// shared linear head maps each step's output back to n dimensions.
pub(crate) fn fm_velocity<C: OpCtx>(
    ctx: &mut C,
    arch: &FmArch,
    y: &C::Val,
    h: &C::Val,
    svals: &[f64],
) -> C::Val {
    let four = fourier_rows(svals, arch.fourier_dim).expect("flow step outside [0,1]");
    let four = ctx.constant(four);
    let mut step_inputs = Vec::with_capacity(arch.f);
    for t in 0..arch.f {
        let yt = ctx.slice_cols(y, t * arch.n, (t + 1) * arch.n);
        step_inputs.push(ctx.concat_cols(&[yt, h.clone(), four.clone()]));
    }
    let out = lstm_forward(ctx, "vel", &arch.vel_spec(), &step_inputs);
    let w = ctx.param("vel.head.w");
    let b = ctx.param("vel.head.b");
    let per: Vec<C::Val> = out
        .per_step
        .iter()
        .map(|o| {
            let lin = ctx.matmul(o, &w);
            ctx.add_row(&lin, &b)
        })
        .collect();
    ctx.concat_cols(&per)
}

/// One assembled baseline batch (randomness drawn up front).
pub(crate) struct FmBatch {
    /// l matrices of shape B×n: the true context, oldest first.
    pub context: Vec<Matrix>,
    /// B×(f·n) step-major endpoints and interpolants.
    pub ys: Matrix,
    pub target: Matrix,
    pub s: Vec<f64>,
    /// Kept for the σ_b → 0 limit check (asserted on in tests).
    #[allow(dead_code)]
    pub y0: Matrix,
    #[allow(dead_code)]
    pub y1: Matrix,
}

pub(crate) fn assemble_fm_batch(
    trajs: &[Matrix],
    arch: &FmArch,
    cov: &BrownianCov,
    w_inv: &Matrix,
    sigma_bridge: f64,
    batch_size: usize,
    anchor: usize,
    rng: &mut ChaCha8Rng,
) -> FmBatch {
    let (n, f, l) = (arch.n, arch.f, arch.l);
    let steps = trajs[0].rows();
    debug_assert!(l <= anchor && anchor + f <= steps);
    let mut picks = Vec::with_capacity(batch_size);
    let mut s = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let traj = rng.gen_range(0..trajs.len());
        // τ = anchor: first forecast step. The context is the tail of the
        // observed segment (τ−l..τ−1) and the future is τ..τ+f−1 — the model
        // learns exactly the observed-segment → prediction-window task it is
        // scored on, so re-conditioning it elsewhere on a trajectory is
        // deliberately outside its training distribution.
        picks.push((traj, anchor));
        s.push(rng.gen::<f64>());
    }
    let context: Vec<Matrix> = (0..l)
        .map(|j| {
            Matrix::from_fn(batch_size, n, |i, d| {
                let (traj, tau) = picks[i];
                trajs[traj].get(tau - l + j, d)
            })
        })
        .collect();
    let y1 = Matrix::from_fn(batch_size, f * n, |i, c| {
        let (traj, tau) = picks[i];
        trajs[traj].get(tau + c / n, c % n)
    });
    let mut y0 = Matrix::zeros(batch_size, f * n);
    for i in 0..batch_size {
        y0.row_mut(i).copy_from_slice(&cov.sample_base_row(n, rng));
    }
    let m_s = Matrix::from_fn(batch_size, f * n, |i, c| {
        (1.0 - s[i]) * y0.get(i, c) + s[i] * y1.get(i, c)
    });
    let mut ys = m_s.clone();
    for i in 0..batch_size {
        let coef = sigma_bridge * (s[i] * (1.0 - s[i])).sqrt();
        let noise = cov.sample_base_row(n, rng);
        for (c, nz) in noise.iter().enumerate() {
            ys.row_mut(i)[c] += coef * nz;
        }
    }
    let coefs: Vec<f64> = s
        .iter()
        .map(|si| sigma_bridge * sigma_bridge * (1.0 - 2.0 * si) / 2.0)
        .collect();
    let correction = ys.sub(&m_s).matmul(w_inv).scale_rows(&coefs);
    let target = y1.sub(&y0).add(&correction);
    FmBatch { context, ys, target, s, y0, y1 }
}

/// Forward + backward on one row range of the batch.
pub(crate) fn fm_shard_loss_grads(
    params: &ParamSet,
    arch: &FmArch,
    batch: &FmBatch,
    w_inv: &Matrix,
    weighted: bool,
    r0: usize,
    r1: usize,
) -> Result<(f64, usize, HashMap<String, Matrix>), CoreError> {
    let mut ctx = TapeCtx::new(params);
    let context_vals: Vec<_> = batch
        .context
        .iter()
        .map(|m| ctx.constant(m.slice_rows(r0, r1)))
        .collect();
    let h = encode_context(&mut ctx, "enc", &arch.encoder_cfg(), &context_vals);
    let ys = ctx.constant(batch.ys.slice_rows(r0, r1));
    let pred = fm_velocity(&mut ctx, arch, &ys, &h, &batch.s[r0..r1]);
    let target = ctx.constant(batch.target.slice_rows(r0, r1));
    let resid = ctx.sub(&target, &pred);
    let loss = if weighted {
        let w = ctx.constant(w_inv.clone());
        let z = ctx.matmul(&resid, &w);
        let quad = ctx.hadamard(&z, &resid);
        let tot = ctx.sum(&quad);
        let norm = 1.0 / ((r1 - r0) * arch.f * arch.n) as f64;
        ctx.scale(&tot, norm)
    } else {
        ctx.mean_square(&resid)
    };
    let loss_val = ctx.value(&loss).scalar();
    let grads = ctx.grads(loss)?;
    Ok((loss_val, r1 - r0, grads))
}

fn validate_fm_inputs(
    dataset: &ForecastDataset,
    arch: &FmArch,
    cfg: &FmConfig,
) -> Result<(), CoreError> {
    arch.validate()?;
    let bad = |msg: String| Err(CoreError::InvalidConfig(msg));
    if arch.n != dataset.meta.dim {
        return bad(format!(
            "architecture dimension {} != dataset dimension {}",
            arch.n, dataset.meta.dim
        ));
    }
    let observe = dataset.meta.split.observe;
    if arch.l > observe {
        return bad(format!(
            "context length {} exceeds the observed segment {observe}",
            arch.l
        ));
    }
    if observe + arch.f > dataset.meta.steps {
        return bad(format!(
            "horizon {} from the observe boundary {observe} exceeds trajectory length {}",
            arch.f, dataset.meta.steps
        ));
    }
    if cfg.sigma_bridge < 0.0 {
        return bad("sigma_bridge must be >= 0".into());
    }
    if cfg.batch_size < 1 || cfg.max_steps < 1 {
        return bad("batch_size and max_steps must be >= 1".into());
    }
    if dataset.train.is_empty() {
        return bad("dataset has no training trajectories".into());
    }
    Ok(())
}

/// Train the baseline: joint flow over the f-step prediction window,
/// Σ⁻¹-weighted velocity regression, every window anchored at the dataset's
/// observe/predict boundary.
pub fn fm_train(
    dataset: &ForecastDataset,
    arch: &FmArch,
    cfg: &FmConfig,
) -> Result<(FmModel, Vec<TrainRecord>), CoreError> {
    validate_fm_inputs(dataset, arch, cfg)?;
    let anchor = dataset.meta.split.observe;
    let cov = BrownianCov::new(arch.f)?;
    let w_inv = cov.expand_inv(arch.n);
    let norm = dataset.meta.normalization.clone();
    let trajs: Vec<Matrix> =
        dataset.train.iter().map(|t| norm.normalize_rows(&t.states)).collect();

    let mut params = init_fm_params(arch, cfg.seed);
    let layout = params.layout();
    let threads = parutil::thread_budget();
    let n_shards = parutil::shard_count(cfg.batch_size);
    let ranges = parutil::shard_ranges(cfg.batch_size, n_shards);

    let records =
        run_adam_loop(&mut params, cfg.lr, cfg.max_steps, cfg.seed, |params, _, batch_seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(batch_seed);
            let batch = assemble_fm_batch(
                &trajs,
                arch,
                &cov,
                &w_inv,
                cfg.sigma_bridge,
                cfg.batch_size,
                anchor,
                &mut rng,
            );
            let shard_results = parutil::run_shards(n_shards, threads, |k| {
                fm_shard_loss_grads(
                    params,
                    arch,
                    &batch,
                    &w_inv,
                    cfg.weighted_loss,
                    ranges[k].start,
                    ranges[k].end,
                )
            });
            let mut shards = Vec::with_capacity(n_shards);
            for r in shard_results {
                shards.push(r?);
            }
            Ok(reduce_shards(&layout, &shards, cfg.batch_size))
        })?;

    Ok((
        FmModel {
            arch: *arch,
            sigma_bridge: cfg.sigma_bridge,
            sampler: cfg.sampler,
            norm,
            params,
            cov,
        },
        records,
    ))
}

/// Forecast with the baseline: one joint ODE solve in (f·n)-dimensional
/// space per sample path. The output length is fixed at the trained horizon
/// f; the context is the last l rows of `history` (raw units, newest last).
pub fn fm_forecast(
    model: &FmModel,
    history: &Matrix,
    s_count: usize,
    seed: u64,
    instance: usize,
) -> Result<ForecastEnsemble, CoreError> {
    let arch = &model.arch;
    arch.validate()?;
    let bad = |msg: String| Err(CoreError::InvalidConfig(msg));
    if history.cols() != arch.n {
        return bad(format!(
            "history has {} dimensions, model expects {}",
            history.cols(),
            arch.n
        ));
    }
    if history.rows() < arch.l {
        return bad(format!(
            "history length {} is shorter than context l={}",
            history.rows(),
            arch.l
        ));
    }
    if s_count < 1 {
        return bad("sample count must be >= 1".into());
    }
    if s_count >= 1 << 20 {
        return bad("sample count must be < 2^20".into());
    }

    let hist = model.norm.normalize_rows(history);
    let context_rows: Vec<Matrix> = (history.rows() - arch.l..history.rows())
        .map(|r| Matrix::from_fn(s_count, arch.n, |_, d| hist.get(r, d)))
        .collect();
    let mut ctx = EvalCtx::new(&model.params);
    let context_vals: Vec<_> =
        context_rows.iter().map(|m| ctx.constant(m.clone())).collect();
    let h = encode_context(&mut ctx, "enc", &arch.encoder_cfg(), &context_vals);
    let h = ctx.value(&h).clone();

    let mut path_rngs: Vec<ChaCha8Rng> = (0..s_count)
        .map(|p| {
            crate::rngstream::stream(
                seed,
                Purpose::ForecastPath,
                ((instance as u64) << 20) | p as u64,
            )
        })
        .collect();
    let mut y0 = Matrix::zeros(s_count, arch.f * arch.n);
    for (p, rng) in path_rngs.iter_mut().enumerate() {
        y0.row_mut(p).copy_from_slice(&model.cov.sample_base_row(arch.n, rng));
    }

    let field = |y: &Matrix, s: f64| {
        let mut ctx = EvalCtx::new(&model.params);
        let yv = ctx.constant(y.clone());
        let hv = ctx.constant(h.clone());
        let v = fm_velocity(&mut ctx, arch, &yv, &hv, &vec![s; y.rows()]);
        ctx.value(&v).clone()
    };
    let mut valid = vec![true; s_count];
    let mut y1 = ode_sample_flagged(field, y0, &model.sampler, &mut valid);
    for p in 0..s_count {
        if !valid[p] {
            y1.row_mut(p).fill(0.0);
        }
    }
    let steps: Vec<Matrix> = (0..arch.f)
        .map(|t| model.norm.denormalize_rows(&y1.slice_cols(t * arch.n, (t + 1) * arch.n)))
        .collect();

    Ok(ForecastEnsemble { start_step: history.rows(), steps, valid, seed, instance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::{generate_dataset, SimOptions, SplitSpec, SystemKind, Trajectory};
    use crate::rngstream::stream;
    use approx::assert_abs_diff_eq;

    #[test]
    fn brownian_cholesky_hand_case() {
        let cov = BrownianCov::with_delta(2, 1.0).unwrap();
        assert_eq!(cov.sigma().data(), &[1.0, 1.0, 1.0, 2.0]);
        let l = cov.chol();
        assert_abs_diff_eq!(l.get(0, 0), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l.get(1, 0), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l.get(1, 1), 1.0, epsilon = 1e-12);
        assert_eq!(l.get(0, 1), 0.0);
    }

    #[test]
    fn cholesky_rejects_indefinite_matrices() {
        let a = Matrix::from_vec(2, 2, vec![1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(cholesky(&a), Err(CoreError::CholeskyFailure { pivot: 1 })));
    }

    #[test]
    fn default_delta_makes_diagonal_average_one() {
        for f in [1, 2, 5, 75] {
            let cov = BrownianCov::new(f).unwrap();
            let mean_diag: f64 =
                (0..f).map(|i| cov.sigma().get(i, i)).sum::<f64>() / f as f64;
            assert_abs_diff_eq!(mean_diag, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn sigma_roundtrips_through_its_inverse() {
        let cov = BrownianCov::new(75).unwrap();
        let mut rng = stream(31, Purpose::TrainBatch, 0);
        let x = Matrix::from_fn(1, 75, |_, _| rng.gen_range(-2.0..2.0));
        let back = x.matmul(cov.sigma()).matmul(cov.inv());
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn brownian_inverse_is_the_discrete_laplacian() {
        // Σ⁻¹·Δ is tridiagonal: 2 on the diagonal (1 at the last entry),
        // −1 on the off-diagonals.
        let f = 6;
        let cov = BrownianCov::with_delta(f, 0.37).unwrap();
        for i in 0..f {
            for j in 0..f {
                let got = cov.inv().get(i, j) * cov.delta;
                let want = match (i == j, i.abs_diff(j)) {
                    (true, _) if i == f - 1 => 1.0,
                    (true, _) => 2.0,
                    (false, 1) => -1.0,
                    _ => 0.0,
                };
                assert_abs_diff_eq!(got, want, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn expanded_inverse_interleaves_dimensions() {
        let cov = BrownianCov::with_delta(3, 0.5).unwrap();
        let w = cov.expand_inv(2);
        assert_eq!(w.shape(), (6, 6));
        for t in 0..3 {
            for u in 0..3 {
                for d in 0..2 {
                    for e in 0..2 {
                        let want =
                            if d == e { cov.inv().get(t, u) } else { 0.0 };
                        assert_abs_diff_eq!(
                            w.get(t * 2 + d, u * 2 + e),
                            want,
                            epsilon = 1e-12
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn bridge_is_pinned_at_its_endpoints() {
        let cov = BrownianCov::new(4).unwrap();
        let mut rng = stream(32, Purpose::TrainBatch, 0);
        let y0 = Matrix::from_fn(4, 2, |t, d| (t as f64) - (d as f64));
        let y1 = Matrix::from_fn(4, 2, |t, d| (t * d) as f64 + 0.5);
        assert_eq!(bridge_sample(&y0, &y1, 0.0, 0.7, &cov, &mut rng), y0);
        assert_eq!(bridge_sample(&y0, &y1, 1.0, 0.7, &cov, &mut rng), y1);
    }

    #[test]
    fn bridge_variance_follows_the_law() {
        let f = 4;
        let cov = BrownianCov::new(f).unwrap();
        let (s, sigma_b) = (0.3, 0.5);
        let y0 = Matrix::zeros(f, 1);
        let y1 = Matrix::zeros(f, 1);
        let mut rng = stream(33, Purpose::TrainBatch, 0);
        let m = 20_000;
        let mut acc = vec![0.0; f];
        for _ in 0..m {
            let y = bridge_sample(&y0, &y1, s, sigma_b, &cov, &mut rng);
            for t in 0..f {
                acc[t] += y.get(t, 0) * y.get(t, 0);
            }
        }
        for t in 0..f {
            let want = sigma_b * sigma_b * s * (1.0 - s) * cov.sigma().get(t, t);
            let got = acc[t] / m as f64;
            // Var of a variance estimate ≈ 2σ⁴/m; 3σ band.
            let band = 3.0 * (2.0 / m as f64).sqrt() * want;
            assert!((got - want).abs() < band, "step {t}: {got} vs {want}");
        }
    }

    #[test]
    fn base_samples_follow_the_brownian_variance_law() {
        let f = 5;
        let n = 2;
        let cov = BrownianCov::new(f).unwrap();
        let mut rng = stream(34, Purpose::TrainBatch, 0);
        let m = 10_000;
        let mut acc = vec![0.0; f * n];
        for _ in 0..m {
            let row = cov.sample_base_row(n, &mut rng);
            for (c, v) in row.iter().enumerate() {
                acc[c] += v * v;
            }
        }
        for t in 0..f {
            for d in 0..n {
                let want = (t + 1) as f64 * cov.delta;
                let got = acc[t * n + d] / m as f64;
                let band = 3.0 * (2.0 / m as f64).sqrt() * want;
                assert!(
                    (got - want).abs() < band,
                    "index ({t},{d}): {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn velocity_target_limits() {
        let cov = BrownianCov::new(3).unwrap();
        let mut rng = stream(35, Purpose::TrainBatch, 0);
        let rand_traj = |rng: &mut rand_chacha::ChaCha8Rng| {
            Matrix::from_fn(3, 2, |_, _| rng.gen_range(-1.0..1.0))
        };
        let y0 = rand_traj(&mut rng);
        let y1 = rand_traj(&mut rng);
        let y = rand_traj(&mut rng);
        let straight = y1.sub(&y0);
        // σ_b = 0 → straight-path velocity, exactly.
        assert_eq!(fm_velocity_target(&y, &y0, &y1, 0.3, 0.0, &cov), straight);
        // Y = m_s → correction vanishes for any σ_b.
        let s = 0.4;
        let m_s = Matrix::from_fn(3, 2, |t, d| {
            (1.0 - s) * y0.get(t, d) + s * y1.get(t, d)
        });
        let at_mean = fm_velocity_target(&m_s, &y0, &y1, s, 0.8, &cov);
        for (a, b) in at_mean.data().iter().zip(straight.data()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        // s = ½ → (1−2s) kills the correction regardless of Y.
        let mid = fm_velocity_target(&y, &y0, &y1, 0.5, 0.8, &cov);
        for (a, b) in mid.data().iter().zip(straight.data()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    fn constant_traj(value: f64, steps: usize) -> Trajectory {
        Trajectory {
            times: (0..steps).map(|k| k as f64).collect(),
            states: Matrix::from_fn(steps, 1, |_, _| value),
        }
    }

    fn constant_dataset() -> ForecastDataset {
        let steps = 12;
        let train: Vec<Trajectory> =
            (0..30).map(|i| constant_traj(-2.0 + 4.0 * i as f64 / 29.0, steps)).collect();
        let test: Vec<Trajectory> =
            (0..3).map(|i| constant_traj(-1.0 + i as f64, steps)).collect();
        ForecastDataset::from_trajectories(
            "constant",
            SplitSpec { observe: 4, predict: 8, extrapolate: 0 },
            train,
            test,
            7,
        )
        .unwrap()
    }

    fn tiny_fm_arch() -> FmArch {
        FmArch {
            n: 1,
            f: 6,
            l: 3,
            enc_hidden: 12,
            enc_layers: 1,
            h_dim: 12,
            vel_hidden: 24,
            vel_layers: 1,
            fourier_dim: 4,
        }
    }

    #[test]
    fn sigma_zero_training_target_is_the_straight_path() {
        let ds = constant_dataset();
        let arch = tiny_fm_arch();
        let cov = BrownianCov::new(arch.f).unwrap();
        let w_inv = cov.expand_inv(arch.n);
        let trajs: Vec<Matrix> = ds
            .train
            .iter()
            .map(|t| ds.meta.normalization.normalize_rows(&t.states))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let batch =
            assemble_fm_batch(&trajs, &arch, &cov, &w_inv, 0.0, 16, ds.meta.split.observe, &mut rng);
        assert_eq!(batch.target, batch.y1.sub(&batch.y0));
    }

    #[test]
    fn weighted_loss_reduces_to_unweighted_for_identity_sigma() {
        // f = 1 gives Δ = 1 and Σ = [1], so the weighted quadratic form is
        // the plain mean square.
        let ds = constant_dataset();
        let arch = FmArch { f: 1, ..tiny_fm_arch() };
        let cov = BrownianCov::new(1).unwrap();
        let w_inv = cov.expand_inv(arch.n);
        let trajs: Vec<Matrix> = ds
            .train
            .iter()
            .map(|t| ds.meta.normalization.normalize_rows(&t.states))
            .collect();
        let params = init_fm_params(&arch, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let batch =
            assemble_fm_batch(&trajs, &arch, &cov, &w_inv, 0.1, 8, ds.meta.split.observe, &mut rng);
        let (lw, _, _) =
            fm_shard_loss_grads(&params, &arch, &batch, &w_inv, true, 0, 8).unwrap();
        let (lu, _, _) =
            fm_shard_loss_grads(&params, &arch, &batch, &w_inv, false, 0, 8).unwrap();
        assert_abs_diff_eq!(lw, lu, epsilon = 1e-12);
    }

    #[test]
    fn initial_loss_is_finite_on_all_five_systems() {
        for kind in SystemKind::ALL {
            let opts = SimOptions::default();
            let ds = generate_dataset(kind, 2, 1, 40, &opts).unwrap();
            let arch = FmArch {
                n: ds.meta.dim,
                f: 20,
                l: 10,
                enc_hidden: 8,
                enc_layers: 1,
                h_dim: 8,
                vel_hidden: 12,
                vel_layers: 1,
                fourier_dim: 4,
            };
            let cov = BrownianCov::new(arch.f).unwrap();
            let w_inv = cov.expand_inv(arch.n);
            let trajs: Vec<Matrix> = ds
                .train
                .iter()
                .map(|t| ds.meta.normalization.normalize_rows(&t.states))
                .collect();
            let params = init_fm_params(&arch, 1);
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            let batch =
            assemble_fm_batch(&trajs, &arch, &cov, &w_inv, 0.1, 8, ds.meta.split.observe, &mut rng);
            let (loss, _, _) =
                fm_shard_loss_grads(&params, &arch, &batch, &w_inv, true, 0, 8).unwrap();
            assert!(loss.is_finite(), "{kind:?}: non-finite init loss");
            assert!(loss < 100.0, "{kind:?}: implausible init loss {loss}");
        }
    }

    #[test]
    fn constant_process_mean_forecast_tracks_truth() {
        let ds = constant_dataset();
        let arch = tiny_fm_arch();
        let cfg = FmConfig {
            batch_size: 32,
            max_steps: 2500,
            seed: 6,
            n_samples: 48,
            ..FmConfig::default()
        };
        let (model, records) = fm_train(&ds, &arch, &cfg).unwrap();
        assert!(records.iter().all(|r| r.loss.is_finite()));
        let sigma = model.norm.std[0];
        for (i, traj) in ds.test.iter().enumerate() {
            let c = traj.states.get(0, 0);
            let history = traj.states.slice_rows(0, 4);
            let ens = fm_forecast(&model, &history, cfg.n_samples, 88, i).unwrap();
            assert_eq!(ens.horizon(), arch.f, "output length is fixed at f");
            assert_eq!(ens.n_valid(), cfg.n_samples);
            let mean = ens.mean_path().unwrap();
            for t in 0..arch.f {
                let err = (mean.get(t, 0) - c).abs() / sigma;
                assert!(err < 0.1, "constant {c}, step {t}: mean err {err}");
            }
        }
    }

    #[test]
    fn forecasts_are_fixed_length_reproducible_and_seeded() {
        let ds = constant_dataset();
        let arch = tiny_fm_arch();
        let cfg =
            FmConfig { batch_size: 8, max_steps: 3, seed: 9, ..FmConfig::default() };
        let (model, _) = fm_train(&ds, &arch, &cfg).unwrap();
        let history = ds.test[0].states.slice_rows(0, 5);
        let a = fm_forecast(&model, &history, 3, 4, 2).unwrap();
        let b = fm_forecast(&model, &history, 3, 4, 2).unwrap();
        assert_eq!(a.steps, b.steps);
        assert_eq!(a.horizon(), arch.f);
        let c = fm_forecast(&model, &history, 3, 5, 2).unwrap();
        assert_ne!(a.steps, c.steps);
    }

    #[test]
    fn training_is_reproducible() {
        let ds = constant_dataset();
        let arch = tiny_fm_arch();
        let cfg =
            FmConfig { batch_size: 8, max_steps: 4, seed: 10, ..FmConfig::default() };
        let (m1, r1) = fm_train(&ds, &arch, &cfg).unwrap();
        let (m2, r2) = fm_train(&ds, &arch, &cfg).unwrap();
        assert_eq!(m1.params.flatten(), m2.params.flatten());
        let l1: Vec<f64> = r1.iter().map(|r| r.loss).collect();
        let l2: Vec<f64> = r2.iter().map(|r| r.loss).collect();
        assert_eq!(l1, l2);
    }

    #[test]
    fn invalid_configurations_are_rejected() {
        let ds = constant_dataset(); // 12 steps
        let cfg = FmConfig { batch_size: 4, max_steps: 1, ..FmConfig::default() };
        let mut arch = tiny_fm_arch();
        arch.f = 10; // l=3 + f=10 > 12
        assert!(matches!(fm_train(&ds, &arch, &cfg), Err(CoreError::InvalidConfig(_))));
        arch.f = 6;
        arch.n = 2;
        assert!(matches!(fm_train(&ds, &arch, &cfg), Err(CoreError::InvalidConfig(_))));
    }

    #[test]
    fn flatten_roundtrip() {
        let m = Matrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64);
        let row = flatten_traj(&m);
        assert_eq!(row.shape(), (1, 12));
        // Step-major: step 0's dims first.
        assert_eq!(&row.data()[..3], &[0.0, 1.0, 2.0]);
        assert_eq!(unflatten_traj(row.data(), 4, 3), m);
    }
}
