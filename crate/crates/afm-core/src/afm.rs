//! Autoregressive flow-matching model: teacher-forced training and
//! rolling-window ensemble inference.
//!
//! Training regresses the velocity network ν on the straight-path target
//! y¹ − y⁰, conditioning on a context h encoded from the w true steps before
//! the target (teacher forcing). Inference rolls the model forward: each new
//! step is sampled by integrating the learned field from a fresh N(0, I)
//! draw, conditioned on the last w entries of the running trajectory, which
//! after the first step are the model's own samples.

use std::collections::{HashMap, VecDeque};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynsys::{ForecastDataset, NormStats};
use crate::error::CoreError;
use crate::flowpath::{
    interpolant_sample_rows, ode_sample_flagged, velocity_target, FlowPathConfig,
    OdeSamplerConfig,
};
use crate::nets::{encode_context, fourier_rows, init_encoder, init_mlp, mlp_forward, EncoderCfg, MlpCfg};
use crate::numcore::{Adam, EvalCtx, Matrix, OpCtx, ParamSet, TapeCtx};
use crate::parutil;
use crate::rngstream::{derive_seed, Purpose};

/// Default quantile levels reported alongside forecasts.
pub const DEFAULT_QUANTILE_LEVELS: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

/// Network architecture of the autoregressive model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AfmArch {
    /// Data dimension.
    pub n: usize,
    /// Markov window: number of past steps the context encoder sees.
    pub w: usize,
    pub enc_hidden: usize,
    pub enc_layers: usize,
    pub h_dim: usize,
    pub mlp_hidden: usize,
    pub mlp_depth: usize,
    pub fourier_dim: usize,
}

impl AfmArch {
    pub fn encoder_cfg(&self) -> EncoderCfg {
        EncoderCfg {
            input: self.n,
            hidden: self.enc_hidden,
            layers: self.enc_layers,
            h_dim: self.h_dim,
        }
    }

    pub fn mlp_cfg(&self) -> MlpCfg {
        MlpCfg {
            input: self.n + self.h_dim + self.fourier_dim,
            hidden: self.mlp_hidden,
            depth: self.mlp_depth,
            output: self.n,
        }
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        let bad = |msg: &str| Err(CoreError::InvalidConfig(msg.into()));
        if self.n < 1 {
            return bad("data dimension must be >= 1");
        }
        if self.w < 1 {
            return bad("window w must be >= 1");
        }
        if self.enc_hidden < 1 || self.enc_layers < 1 || self.h_dim < 1 {
            return bad("encoder sizes must be >= 1");
        }
        if self.mlp_hidden < 1 || self.mlp_depth < 1 {
            return bad("velocity MLP sizes must be >= 1");
        }
        if self.fourier_dim < 2 || self.fourier_dim % 2 != 0 {
            return bad("fourier_dim must be even and >= 2");
        }
        Ok(())
    }
}

/// Training configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AfmConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub max_steps: usize,
    pub seed: u64,
    pub flow: FlowPathConfig,
    /// Context-window jitter σ (standardized units) applied to training
    /// contexts only — never to targets. Rollouts feed the model its own
    /// slightly-off-manifold outputs; training against jittered contexts
    /// supervises the velocity field on exactly that neighborhood instead of
    /// only the teacher-forced manifold, which otherwise destabilizes long
    /// rollouts once the fit sharpens.
    #[serde(default)]
    pub sigma_context: f64,
    pub sampler: OdeSamplerConfig,
    /// Ensemble size S used at inference.
    pub n_samples: usize,
}

impl Default for AfmConfig {
    fn default() -> Self {
        AfmConfig {
            batch_size: 128,
            lr: 0.003,
            max_steps: 20_000,
            seed: 0,
            flow: FlowPathConfig::default(),
            sigma_context: 0.0,
            sampler: OdeSamplerConfig::default(),
            n_samples: 100,
        }
    }
}

/// One optimizer step's bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub loss: f64,
    /// Seconds since training started.
    pub wall_time: f64,
}

/// A trained autoregressive model: parameters plus everything needed to run
/// them.
#[derive(Debug, Clone)]
pub struct AfmModel {
    pub arch: AfmArch,
    pub flow: FlowPathConfig,
    pub sampler: OdeSamplerConfig,
    pub norm: NormStats,
    pub params: ParamSet,
}

/// Initialize encoder ("enc.…") and velocity ("vel.…") parameters.
pub fn init_params(arch: &AfmArch, seed: u64) -> ParamSet {
    let mut ps = ParamSet::new();
    let mut rng = crate::rngstream::stream(seed, Purpose::ParamInit, 0);
    init_encoder(&mut ps, "enc", &arch.encoder_cfg(), &mut rng);
    init_mlp(&mut ps, "vel", &arch.mlp_cfg(), &mut rng);
    ps
}

/// ν(y, h, s): the velocity network on rows [y ‖ h ‖ fourier(s)].
pub fn velocity<C: OpCtx>(
    ctx: &mut C,
    arch: &AfmArch,
    y: &C::Val,
    h: &C::Val,
    svals: &[f64],
) -> C::Val {
    let four = fourier_rows(svals, arch.fourier_dim).expect("flow step outside [0,1]");
    let four = ctx.constant(four);
    let x = ctx.concat_cols(&[y.clone(), h.clone(), four]);
    mlp_forward(ctx, "vel", &arch.mlp_cfg(), &x)
}

/// One assembled training batch (all randomness drawn up front so gradient
/// sharding cannot affect results).
pub(crate) struct TrainBatch {
    /// w matrices of shape B×n: the true window steps, oldest first.
    pub windows: Vec<Matrix>,
    /// B×n interpolant samples y^s.
    pub ys: Matrix,
    /// B×n regression targets y¹ − y⁰.
    pub target: Matrix,
    /// Per-row flow steps s.
    pub s: Vec<f64>,
    /// (trajectory, target step) provenance per row (asserted on in tests).
    #[allow(dead_code)]
    pub pairs: Vec<(usize, usize)>,
}

/// Sample a batch: trajectories uniform, target steps uniform over the
/// prediction window, y⁰ ~ N(0, I), s ~ U(0, 1), y^s from the interpolant.
pub(crate) fn assemble_batch(
    trajs: &[Matrix],
    arch: &AfmArch,
    t_lo: usize,
    t_hi: usize,
    flow: &FlowPathConfig,
    sigma_context: f64,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> TrainBatch {
    let n = arch.n;
    let mut pairs = Vec::with_capacity(batch_size);
    let mut s = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let traj = rng.gen_range(0..trajs.len());
        let t = loop {
            let t = rng.gen_range(t_lo..t_hi);
            if t >= arch.w {
                break t;
            }
        };
        pairs.push((traj, t));
        s.push(rng.gen::<f64>());
    }
    let mut windows: Vec<Matrix> = (0..arch.w)
        .map(|j| {
            Matrix::from_fn(batch_size, n, |i, d| {
                let (traj, t) = pairs[i];
                trajs[traj].get(t - arch.w + j, d)
            })
        })
        .collect();
    if sigma_context > 0.0 {
        for w in &mut windows {
            for v in w.data_mut() {
                *v += sigma_context * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    let y1 = Matrix::from_fn(batch_size, n, |i, d| {
        let (traj, t) = pairs[i];
        trajs[traj].get(t, d)
    });
    let y0 = Matrix::from_fn(batch_size, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let ys = interpolant_sample_rows(&y0, &y1, &s, flow, rng);
    let target = velocity_target(&y0, &y1);
    TrainBatch { windows, ys, target, s, pairs }
}

/// Forward + backward on one row range of the batch. Returns the shard's
/// mean-square loss, its row count, and its parameter gradients.
pub(crate) fn shard_loss_grads(
    params: &ParamSet,
    arch: &AfmArch,
    batch: &TrainBatch,
    r0: usize,
    r1: usize,
) -> Result<(f64, usize, HashMap<String, Matrix>), CoreError> {
    let mut ctx = TapeCtx::new(params);
    let window_vals: Vec<_> = batch
        .windows
        .iter()
        .map(|m| ctx.constant(m.slice_rows(r0, r1)))
        .collect();
    let h = encode_context(&mut ctx, "enc", &arch.encoder_cfg(), &window_vals);
    let ys = ctx.constant(batch.ys.slice_rows(r0, r1));
    let pred = velocity(&mut ctx, arch, &ys, &h, &batch.s[r0..r1]);
    let target = ctx.constant(batch.target.slice_rows(r0, r1));
    let resid = ctx.sub(&target, &pred);
    let loss = ctx.mean_square(&resid);
    let loss_val = ctx.value(&loss).scalar();
    let grads = ctx.grads(loss)?;
    Ok((loss_val, r1 - r0, grads))
}

fn validate_train_inputs(
    dataset: &ForecastDataset,
    arch: &AfmArch,
    cfg: &AfmConfig,
) -> Result<(), CoreError> {
    arch.validate()?;
    let bad = |msg: String| Err(CoreError::InvalidConfig(msg));
    if arch.n != dataset.meta.dim {
        return bad(format!(
            "architecture dimension {} != dataset dimension {}",
            arch.n, dataset.meta.dim
        ));
    }
    let split = &dataset.meta.split;
    if arch.w > split.observe {
        return bad(format!(
            "window w={} exceeds observation length {}",
            arch.w, split.observe
        ));
    }
    if split.predict < 1 {
        return bad("dataset has an empty prediction window".into());
    }
    if cfg.batch_size < 1 || cfg.max_steps < 1 {
        return bad("batch_size and max_steps must be >= 1".into());
    }
    if dataset.train.is_empty() {
        return bad("dataset has no training trajectories".into());
    }
    Ok(())
}

/// Reduce per-shard (loss, rows, grads) results into the batch loss and
/// batch gradients. The reduction runs name-major in canonical parameter
/// order with shards visited in shard order, so it is bit-identical for any
/// thread count.
pub(crate) fn reduce_shards(
    layout: &[(String, usize, usize)],
    shards: &[(f64, usize, HashMap<String, Matrix>)],
    total_rows: usize,
) -> (f64, HashMap<String, Matrix>) {
    let total = total_rows as f64;
    let loss: f64 = shards.iter().map(|(l, rows, _)| l * *rows as f64 / total).sum();
    let mut grads: HashMap<String, Matrix> = HashMap::new();
    for (name, _, _) in layout {
        let mut acc: Option<Matrix> = None;
        for (_, rows, shard_grads) in shards {
            if let Some(g) = shard_grads.get(name) {
                let wgt = *rows as f64 / total;
                match &mut acc {
                    None => acc = Some(g.scale(wgt)),
                    Some(a) => a.axpy(wgt, g),
                }
            }
        }
        if let Some(a) = acc {
            grads.insert(name.clone(), a);
        }
    }
    (loss, grads)
}

/// Shared Adam loop. Per step, `step_fn(params, step, batch_seed)` produces
/// the batch loss and gradients; the loop applies Adam under a cosine
/// learning-rate decay (from `lr` down to `lr`/100), records progress,
/// tracks the loss smoothed over a 100-step window, and finally restores the
/// parameters from the best-smoothed-loss checkpoint.
pub(crate) fn run_adam_loop(
    params: &mut ParamSet,
    lr: f64,
    max_steps: usize,
    seed: u64,
    mut step_fn: impl FnMut(
        &ParamSet,
        usize,
        u64,
    ) -> Result<(f64, HashMap<String, Matrix>), CoreError>,
) -> Result<Vec<TrainRecord>, CoreError> {
    let mut adam = Adam::new(lr, params.n_scalars());
    let started = Instant::now();
    let mut records = Vec::with_capacity(max_steps);
    let mut recent = VecDeque::with_capacity(100);
    let mut recent_sum = 0.0;
    let mut best_smoothed = f64::INFINITY;
    let mut best_params = params.flatten();

    for step in 0..max_steps {
        let batch_seed = derive_seed(seed, Purpose::TrainBatch, step as u64);
        let (loss, grads) = step_fn(params, step, batch_seed)?;
        if !loss.is_finite() {
            return Err(CoreError::NonFiniteLoss { step: step as u64, seed: batch_seed });
        }
        let progress = step as f64 / max_steps.max(1) as f64;
        adam.lr = lr * (0.01 + 0.99 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
        adam.step(params, &grads)?;

        records.push(TrainRecord { step, loss, wall_time: started.elapsed().as_secs_f64() });
        recent_sum += loss;
        recent.push_back(loss);
        if recent.len() > 100 {
            recent_sum -= recent.pop_front().expect("non-empty window");
        }
        let smoothed = recent_sum / recent.len() as f64;
        if smoothed < best_smoothed {
            best_smoothed = smoothed;
            best_params = params.flatten();
        }
    }
    params
        .load_flat(&best_params)
        .expect("checkpoint has the layout it was flattened from");
    Ok(records)
}

/// Train the autoregressive model. Returns the model with the
/// best-smoothed-loss parameters (window of 100 steps) and the full loss
/// history.
pub fn train(
    dataset: &ForecastDataset,
    arch: &AfmArch,
    cfg: &AfmConfig,
) -> Result<(AfmModel, Vec<TrainRecord>), CoreError> {
    validate_train_inputs(dataset, arch, cfg)?;
    let norm = dataset.meta.normalization.clone();
    let trajs: Vec<Matrix> =
        dataset.train.iter().map(|t| norm.normalize_rows(&t.states)).collect();
    let split = &dataset.meta.split;
    let (t_lo, t_hi) = (split.observe, split.observe + split.predict);

    let mut params = init_params(arch, cfg.seed);
    let layout = params.layout();
    let threads = parutil::thread_budget();
    let n_shards = parutil::shard_count(cfg.batch_size);
    let ranges = parutil::shard_ranges(cfg.batch_size, n_shards);

    let records = run_adam_loop(&mut params, cfg.lr, cfg.max_steps, cfg.seed, |params, _, batch_seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(batch_seed);
        let batch = assemble_batch(
            &trajs,
            arch,
            t_lo,
            t_hi,
            &cfg.flow,
            cfg.sigma_context,
            cfg.batch_size,
            &mut rng,
        );
        let shard_results = parutil::run_shards(n_shards, threads, |k| {
            shard_loss_grads(params, arch, &batch, ranges[k].start, ranges[k].end)
        });
        let mut shards = Vec::with_capacity(n_shards);
        for r in shard_results {
            shards.push(r?);
        }
        Ok(reduce_shards(&layout, &shards, cfg.batch_size))
    })?;

    Ok((
        AfmModel { arch: *arch, flow: cfg.flow, sampler: cfg.sampler, norm, params },
        records,
    ))
}

/// Forecast ensemble: S sample paths rolled over `horizon` steps.
#[derive(Debug, Clone)]
pub struct ForecastEnsemble {
    /// Absolute index of the first forecast step (= history length).
    pub start_step: usize,
    /// One S×n matrix of denormalized samples per forecast step.
    pub steps: Vec<Matrix>,
    /// Per path: false if it went non-finite and was excluded.
    pub valid: Vec<bool>,
    /// Master seed the path streams were derived from.
    pub seed: u64,
    /// Instance tag (test-trajectory index) used in stream derivation.
    pub instance: usize,
}

impl ForecastEnsemble {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn n_samples(&self) -> usize {
        self.valid.len()
    }

    pub fn n_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Values of valid paths at one (forecast step, dimension) cell.
    pub fn cell(&self, step: usize, dim: usize) -> Vec<f64> {
        let m = &self.steps[step];
        (0..m.rows()).filter(|&p| self.valid[p]).map(|p| m.get(p, dim)).collect()
    }

    /// Ensemble mean over valid paths: horizon×n point forecast.
    pub fn mean_path(&self) -> Result<Matrix, CoreError> {
        let nv = self.n_valid();
        if nv == 0 {
            return Err(CoreError::TooFewSamples(0));
        }
        let n = self.steps[0].cols();
        let mut out = Matrix::zeros(self.horizon(), n);
        for (k, m) in self.steps.iter().enumerate() {
            for p in 0..m.rows() {
                if self.valid[p] {
                    for d in 0..n {
                        out.row_mut(k)[d] += m.get(p, d);
                    }
                }
            }
            for d in 0..n {
                out.row_mut(k)[d] /= nv as f64;
            }
        }
        Ok(out)
    }
}

/// Roll the model forward `horizon` steps with `s_count` independent sample
/// paths. `history` is raw (unnormalized) observations, newest last, at least
/// w rows. Path p draws from the stream indexed `instance·2²⁰ + p`, so paths
/// and instances never share randomness (requires s_count < 2²⁰).
pub fn forecast(
    model: &AfmModel,
    history: &Matrix,
    horizon: usize,
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
    if history.rows() < arch.w {
        return bad(format!(
            "history length {} is shorter than window w={}",
            history.rows(),
            arch.w
        ));
    }
    if horizon < 1 || s_count < 1 {
        return bad("horizon and sample count must be >= 1".into());
    }
    if s_count >= 1 << 20 {
        return bad("sample count must be < 2^20".into());
    }

    let hist = model.norm.normalize_rows(history);
    // Window buffer, oldest first; every path starts from the same true tail.
    let mut window: VecDeque<Matrix> = (history.rows() - arch.w..history.rows())
        .map(|r| {
            Matrix::from_fn(s_count, arch.n, |_, d| hist.get(r, d))
        })
        .collect();

    let mut path_rngs: Vec<ChaCha8Rng> = (0..s_count)
        .map(|p| {
            crate::rngstream::stream(
                seed,
                Purpose::ForecastPath,
                ((instance as u64) << 20) | p as u64,
            )
        })
        .collect();

    let mut valid = vec![true; s_count];
    let mut steps = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let mut ctx = EvalCtx::new(&model.params);
        let window_vals: Vec<_> = window.iter().map(|m| ctx.constant(m.clone())).collect();
        let h = encode_context(&mut ctx, "enc", &arch.encoder_cfg(), &window_vals);
        let h = ctx.value(&h).clone();

        let y0 = Matrix::from_fn(s_count, arch.n, |p, _| {
            path_rngs[p].sample::<f64, _>(StandardNormal)
        });
        let field = |y: &Matrix, s: f64| {
            let mut ctx = EvalCtx::new(&model.params);
            let yv = ctx.constant(y.clone());
            let hv = ctx.constant(h.clone());
            let v = velocity(&mut ctx, arch, &yv, &hv, &vec![s; y.rows()]);
            ctx.value(&v).clone()
        };
        let mut y1 = ode_sample_flagged(field, y0, &model.sampler, &mut valid);
        for p in 0..s_count {
            if !valid[p] {
                y1.row_mut(p).fill(0.0);
            }
        }
        steps.push(model.norm.denormalize_rows(&y1));
        window.pop_front();
        window.push_back(y1);
    }

    Ok(ForecastEnsemble { start_step: history.rows(), steps, valid, seed, instance })
}

/// Empirical quantile by linear interpolation of order statistics;
/// `sorted` ascending, level in (0, 1).
pub fn quantile_sorted(sorted: &[f64], level: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let pos = level * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 >= sorted.len() {
        sorted[sorted.len() - 1]
    } else {
        sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
    }
}

/// Per-(step, dim, level) quantile table of an ensemble.
#[derive(Debug, Clone)]
pub struct QuantileTable {
    pub levels: Vec<f64>,
    /// values[step][dim][level index]
    pub values: Vec<Vec<Vec<f64>>>,
}

/// Empirical quantiles of the ensemble at the given levels (in (0,1),
/// ascending). Requires at least two valid paths.
pub fn quantiles(ens: &ForecastEnsemble, levels: &[f64]) -> Result<QuantileTable, CoreError> {
    if levels.is_empty() {
        return Err(CoreError::InvalidConfig("no quantile levels given".into()));
    }
    for pair in levels.windows(2) {
        if pair[1] < pair[0] {
            return Err(CoreError::InvalidConfig("quantile levels must be sorted".into()));
        }
    }
    if levels.iter().any(|&l| !(0.0..1.0).contains(&l) || l == 0.0) {
        return Err(CoreError::InvalidConfig("quantile levels must lie in (0,1)".into()));
    }
    let nv = ens.n_valid();
    if nv < 2 {
        return Err(CoreError::TooFewQuantileSamples(nv));
    }
    let n = ens.steps[0].cols();
    let mut values = Vec::with_capacity(ens.horizon());
    for step in 0..ens.horizon() {
        let mut per_dim = Vec::with_capacity(n);
        for dim in 0..n {
            let mut cell = ens.cell(step, dim);
            cell.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
            per_dim.push(levels.iter().map(|&l| quantile_sorted(&cell, l)).collect());
        }
        values.push(per_dim);
    }
    Ok(QuantileTable { levels: levels.to_vec(), values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::{SplitSpec, Trajectory};
    use crate::rngstream::stream;

    fn constant_traj(value: f64, steps: usize) -> Trajectory {
        Trajectory {
            times: (0..steps).map(|k| k as f64).collect(),
            states: Matrix::from_fn(steps, 1, |_, _| value),
        }
    }

    fn tiny_arch(w: usize) -> AfmArch {
        AfmArch {
            n: 1,
            w,
            enc_hidden: 12,
            enc_layers: 1,
            h_dim: 8,
            mlp_hidden: 32,
            mlp_depth: 2,
            fourier_dim: 4,
        }
    }

    fn constant_dataset() -> ForecastDataset {
        let steps = 12;
        let train: Vec<Trajectory> =
            (0..30).map(|i| constant_traj(-2.0 + 4.0 * i as f64 / 29.0, steps)).collect();
        let test: Vec<Trajectory> =
            (0..4).map(|i| constant_traj(-1.5 + i as f64, steps)).collect();
        ForecastDataset::from_trajectories(
            "constant",
            SplitSpec { observe: 2, predict: 10, extrapolate: 0 },
            train,
            test,
            7,
        )
        .unwrap()
    }

    /// Stationary AR(1) with phi=0.5 driven by unit-variance-ish noise.
    fn ar1_dataset(n_train: usize, steps: usize) -> ForecastDataset {
        let make = |seed_idx: u64, count: usize| -> Vec<Trajectory> {
            (0..count)
                .map(|i| {
                    let mut rng = stream(99, Purpose::SimTrain, seed_idx * 1000 + i as u64);
                    let mut y = 0.0f64;
                    let states = Matrix::from_fn(steps, 1, |_, _| {
                        y = 0.5 * y + rng.sample::<f64, _>(StandardNormal);
                        y
                    });
                    Trajectory { times: (0..steps).map(|k| k as f64).collect(), states }
                })
                .collect()
        };
        let train = make(0, n_train);
        let test = make(1, 2);
        ForecastDataset::from_trajectories(
            "ar1",
            SplitSpec { observe: 4, predict: steps - 4, extrapolate: 0 },
            train,
            test,
            11,
        )
        .unwrap()
    }

    #[test]
    fn initial_loss_matches_base_coupling_expectation() {
        // With the zero-initialized output layer the field is identically 0,
        // so the batch loss is the mean square of y1 - y0 with y0 ~ N(0,1)
        // and y1 standardized data: per entry ≈ Var(y1) + 1 ≈ 2.
        let ds = ar1_dataset(24, 40);
        let arch = tiny_arch(3);
        let cfg = AfmConfig { batch_size: 10_000, ..AfmConfig::default() };
        let norm = ds.meta.normalization.clone();
        let trajs: Vec<Matrix> = ds.train.iter().map(|t| norm.normalize_rows(&t.states)).collect();
        let params = init_params(&arch, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(0, Purpose::TrainBatch, 0));
        let batch = assemble_batch(
            &trajs,
            &arch,
            ds.meta.split.observe,
            ds.meta.split.observe + ds.meta.split.predict,
            &FlowPathConfig::default(),
            0.0,
            cfg.batch_size,
            &mut rng,
        );
        let (loss, rows, _) =
            shard_loss_grads(&params, &arch, &batch, 0, cfg.batch_size).unwrap();
        assert_eq!(rows, cfg.batch_size);
        assert!((loss - 2.0).abs() < 0.2, "init loss {loss}, expected ≈ 2");
    }

    #[test]
    fn teacher_forced_windows_are_truth_slices() {
        let ds = ar1_dataset(6, 24);
        let arch = tiny_arch(4);
        let norm = ds.meta.normalization.clone();
        let trajs: Vec<Matrix> = ds.train.iter().map(|t| norm.normalize_rows(&t.states)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(3, Purpose::TrainBatch, 0));
        let batch = assemble_batch(
            &trajs,
            &arch,
            ds.meta.split.observe,
            ds.meta.split.observe + ds.meta.split.predict,
            &FlowPathConfig::default(),
            0.0,
            32,
            &mut rng,
        );
        for (i, &(traj, t)) in batch.pairs.iter().enumerate() {
            assert!(t >= arch.w);
            assert!(t >= ds.meta.split.observe && t < ds.meta.split.observe + ds.meta.split.predict);
            for j in 0..arch.w {
                assert_eq!(
                    batch.windows[j].get(i, 0),
                    trajs[traj].get(t - arch.w + j, 0),
                    "window step {j} of row {i} is not the true history"
                );
            }
        }
    }

    #[test]
    fn constant_process_forecasts_collapse_to_the_constant() {
        let ds = constant_dataset();
        let arch = AfmArch { enc_hidden: 16, h_dim: 16, mlp_hidden: 48, ..tiny_arch(2) };
        let cfg = AfmConfig {
            batch_size: 64,
            max_steps: 4000,
            seed: 5,
            n_samples: 64,
            sampler: OdeSamplerConfig {
                method: crate::flowpath::OdeMethod::Midpoint,
                n_steps: 32,
            },
            ..AfmConfig::default()
        };
        let (model, records) = train(&ds, &arch, &cfg).unwrap();
        assert_eq!(records.len(), 4000);
        assert!(records.iter().all(|r| r.loss.is_finite()));
        // Smoothed loss must have improved over the run.
        let early: f64 = records[..50].iter().map(|r| r.loss).sum::<f64>() / 50.0;
        let late: f64 = records[3950..].iter().map(|r| r.loss).sum::<f64>() / 50.0;
        assert!(late < early * 0.2, "loss barely moved: {early} → {late}");

        let sigma = model.norm.std[0];
        for traj in &ds.test {
            let c = traj.states.get(0, 0);
            let history = traj.states.slice_rows(0, 2);
            let ens = forecast(&model, &history, 1, cfg.n_samples, 77, 0).unwrap();
            assert_eq!(ens.n_valid(), cfg.n_samples);
            // One-step samples sit on the constant in normalized units.
            let mean_abs: f64 = ens
                .cell(0, 0)
                .iter()
                .map(|v| (v - c).abs() / sigma)
                .sum::<f64>()
                / cfg.n_samples as f64;
            assert!(mean_abs < 0.05, "constant {c}: mean |err| {mean_abs}");
        }
    }

    #[test]
    fn markov_context_ignores_steps_older_than_w() {
        let ds = ar1_dataset(8, 24);
        let arch = tiny_arch(3);
        let cfg =
            AfmConfig { batch_size: 8, max_steps: 3, seed: 1, ..AfmConfig::default() };
        let (model, _) = train(&ds, &arch, &cfg).unwrap();
        let long = ds.test[0].states.slice_rows(0, 10);
        let mut mangled = long.clone();
        for r in 0..7 {
            for d in 0..1 {
                mangled.set(r, d, 1e3 * (r as f64 + 1.0));
            }
        }
        let a = forecast(&model, &long, 3, 5, 42, 0).unwrap();
        let b = forecast(&model, &mangled, 3, 5, 42, 0).unwrap();
        for (x, y) in a.steps.iter().zip(&b.steps) {
            assert_eq!(x, y, "history older than w leaked into the forecast");
        }
    }

    #[test]
    fn forecasts_are_reproducible_and_seed_sensitive() {
        let ds = ar1_dataset(8, 24);
        let arch = tiny_arch(3);
        let cfg =
            AfmConfig { batch_size: 8, max_steps: 3, seed: 2, ..AfmConfig::default() };
        let (model, _) = train(&ds, &arch, &cfg).unwrap();
        let history = ds.test[0].states.slice_rows(0, 6);
        let a = forecast(&model, &history, 2, 3, 9, 1).unwrap();
        let b = forecast(&model, &history, 2, 3, 9, 1).unwrap();
        assert_eq!(a.steps, b.steps);
        let c = forecast(&model, &history, 2, 3, 10, 1).unwrap();
        assert_ne!(a.steps, c.steps);
        // Single path, single step: also bitwise stable.
        let d = forecast(&model, &history, 1, 1, 9, 1).unwrap();
        let e = forecast(&model, &history, 1, 1, 9, 1).unwrap();
        assert_eq!(d.steps, e.steps);
    }

    #[test]
    fn training_is_reproducible() {
        let ds = ar1_dataset(6, 24);
        let arch = tiny_arch(2);
        let cfg =
            AfmConfig { batch_size: 8, max_steps: 5, seed: 3, ..AfmConfig::default() };
        let (m1, r1) = train(&ds, &arch, &cfg).unwrap();
        let (m2, r2) = train(&ds, &arch, &cfg).unwrap();
        assert_eq!(m1.params.flatten(), m2.params.flatten());
        let l1: Vec<f64> = r1.iter().map(|r| r.loss).collect();
        let l2: Vec<f64> = r2.iter().map(|r| r.loss).collect();
        assert_eq!(l1, l2);
    }

    #[test]
    fn gradient_sharding_is_thread_invariant() {
        // Same training run under different AFM_THREADS settings. The
        // reduction is defined to be shard-ordered, so results agree bitwise.
        let ds = ar1_dataset(6, 24);
        let arch = tiny_arch(2);
        let cfg =
            AfmConfig { batch_size: 16, max_steps: 4, seed: 8, ..AfmConfig::default() };
        std::env::set_var("AFM_THREADS", "1");
        let (m1, _) = train(&ds, &arch, &cfg).unwrap();
        std::env::set_var("AFM_THREADS", "4");
        let (m4, _) = train(&ds, &arch, &cfg).unwrap();
        std::env::remove_var("AFM_THREADS");
        assert_eq!(m1.params.flatten(), m4.params.flatten());
    }

    #[test]
    fn invalid_configurations_are_rejected() {
        let ds = ar1_dataset(4, 24);
        let mut arch = tiny_arch(3);
        let cfg = AfmConfig { batch_size: 4, max_steps: 1, ..AfmConfig::default() };
        arch.w = 5; // observe = 4
        assert!(matches!(
            train(&ds, &arch, &cfg),
            Err(CoreError::InvalidConfig(_))
        ));
        arch.w = 3;
        arch.fourier_dim = 3;
        assert!(matches!(
            train(&ds, &arch, &cfg),
            Err(CoreError::InvalidConfig(_))
        ));
        arch.fourier_dim = 4;
        arch.n = 2;
        assert!(matches!(
            train(&ds, &arch, &cfg),
            Err(CoreError::InvalidConfig(_))
        ));
    }

    #[test]
    fn poisoned_parameters_flag_every_path() {
        let ds = ar1_dataset(4, 24);
        let arch = tiny_arch(2);
        let cfg =
            AfmConfig { batch_size: 4, max_steps: 1, seed: 4, ..AfmConfig::default() };
        let (mut model, _) = train(&ds, &arch, &cfg).unwrap();
        let w = model.params.get_mut("vel.out.w");
        for v in w.data_mut() {
            *v = 1e308;
        }
        let history = ds.test[0].states.slice_rows(0, 4);
        let ens = forecast(&model, &history, 2, 5, 1, 0).unwrap();
        assert_eq!(ens.n_valid(), 0);
        assert!(ens.valid.iter().all(|&v| !v));
        assert!(matches!(
            quantiles(&ens, &DEFAULT_QUANTILE_LEVELS),
            Err(CoreError::TooFewQuantileSamples(0))
        ));
        assert!(matches!(ens.mean_path(), Err(CoreError::TooFewSamples(0))));
    }

    #[test]
    fn quantile_oracles() {
        let sorted = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&sorted, 0.5), 3.0);
        assert_eq!(quantile_sorted(&sorted, 0.25), 2.0);
        // Interpolation between order statistics.
        assert!((quantile_sorted(&sorted, 0.3) - 2.2).abs() < 1e-12);
        let same = [7.0; 9];
        for l in [0.05, 0.5, 0.95] {
            assert_eq!(quantile_sorted(&same, l), 7.0);
        }
    }

    #[test]
    fn gaussian_tail_quantiles_match_the_table() {
        let mut rng = stream(21, Purpose::ForecastPath, 0);
        let mut draws: Vec<f64> =
            (0..10_000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((quantile_sorted(&draws, 0.05) - (-1.645)).abs() < 0.07);
        assert!((quantile_sorted(&draws, 0.95) - 1.645).abs() < 0.07);
    }

    #[test]
    fn quantile_table_is_monotone_and_validated() {
        let mut rng = stream(22, Purpose::ForecastPath, 0);
        let steps: Vec<Matrix> = (0..4)
            .map(|_| Matrix::from_fn(24, 2, |_, _| rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let ens = ForecastEnsemble {
            start_step: 10,
            steps,
            valid: vec![true; 24],
            seed: 0,
            instance: 0,
        };
        let tab = quantiles(&ens, &DEFAULT_QUANTILE_LEVELS).unwrap();
        for step in 0..4 {
            for dim in 0..2 {
                let v = &tab.values[step][dim];
                for pair in v.windows(2) {
                    assert!(pair[1] >= pair[0], "quantiles not monotone");
                }
            }
        }
        assert!(quantiles(&ens, &[]).is_err());
        assert!(quantiles(&ens, &[0.9, 0.1]).is_err());
        assert!(quantiles(&ens, &[0.0, 0.5]).is_err());
        assert!(quantiles(&ens, &[0.5, 1.0]).is_err());
    }
}
