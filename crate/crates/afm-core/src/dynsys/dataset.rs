//! Forecasting datasets: generation from the benchmark systems, per-dimension
//! normalization statistics, and the on-disk layout
//! (`meta.json` + `train.csv` + `test.csv`).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynsys::integrate::{simulate, SimOptions, Trajectory};
use crate::dynsys::systems::SystemKind;
use crate::error::CoreError;
use crate::numcore::Matrix;
use crate::rngstream::{stream, Purpose};
use rand::Rng;

/// Observation / prediction / extrapolation window lengths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub observe: usize,
    pub predict: usize,
    pub extrapolate: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { observe: 75, predict: 75, extrapolate: 50 }
    }
}

impl SplitSpec {
    pub fn total(&self) -> usize {
        self.observe + self.predict + self.extrapolate
    }
}

/// Per-dimension standardization statistics (computed on training data only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Sample statistics over all steps of the given trajectories.
    pub fn from_trajectories(trajs: &[Trajectory], dim: usize) -> Self {
        let mut mean = vec![0.0; dim];
        let mut count = 0usize;
        for t in trajs {
            for i in 0..t.states.rows() {
                for (d, m) in mean.iter_mut().enumerate() {
                    *m += t.states.get(i, d);
                }
                count += 1;
            }
        }
        for m in mean.iter_mut() {
            *m /= count as f64;
        }
        let mut var = vec![0.0; dim];
        for t in trajs {
            for i in 0..t.states.rows() {
                for (d, v) in var.iter_mut().enumerate() {
                    let e = t.states.get(i, d) - mean[d];
                    *v += e * e;
                }
            }
        }
        let denom = (count.max(2) - 1) as f64;
        let std = var.iter().map(|v| (v / denom).sqrt().max(1e-12)).collect();
        NormStats { mean, std }
    }

    pub fn normalize_rows(&self, m: &Matrix) -> Matrix {
        Matrix::from_fn(m.rows(), m.cols(), |i, j| (m.get(i, j) - self.mean[j]) / self.std[j])
    }

    pub fn denormalize_rows(&self, m: &Matrix) -> Matrix {
        Matrix::from_fn(m.rows(), m.cols(), |i, j| m.get(i, j) * self.std[j] + self.mean[j])
    }
}

/// Dataset manifest written to `meta.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub system: String,
    pub dim: usize,
    pub params: Vec<(String, f64)>,
    pub sigma_diff: Vec<f64>,
    pub noise_scale: f64,
    pub t0: f64,
    pub t1: f64,
    pub steps: usize,
    pub split: SplitSpec,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub rejected: usize,
    pub normalization: NormStats,
}

/// A full forecasting dataset held in memory.
#[derive(Debug, Clone)]
pub struct ForecastDataset {
    pub meta: DatasetMeta,
    pub train: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
}

/// Generate `n_train + n_test` trajectories of `kind` with independent
/// per-trajectory noise streams. Divergent trajectories are resampled with a
/// fresh initial condition from the same stream; if more than 1% of all
/// attempts diverge the generation aborts.
pub fn generate_dataset(
    kind: SystemKind,
    n_train: usize,
    n_test: usize,
    seed: u64,
    opts: &SimOptions,
) -> Result<ForecastDataset, CoreError> {
    assert!(n_train > 0 && n_test > 0, "trajectory counts must be positive");
    let spec = kind.spec();
    let mut rejected = 0usize;

    let mut gen_split = |purpose: Purpose, count: usize| -> Result<Vec<Trajectory>, CoreError> {
        let mut out = Vec::with_capacity(count);
        for idx in 0..count {
            let mut rng = stream(seed, purpose, idx as u64);
            // Retry with fresh initial conditions from the same stream; the
            // cap only guards against a pathologically explosive setup.
            const MAX_ATTEMPTS: usize = 100;
            let mut done = false;
            for _ in 0..MAX_ATTEMPTS {
                let x0: Vec<f64> =
                    (0..spec.dim).map(|_| rng.gen_range(spec.init_lo..spec.init_hi)).collect();
                match simulate(kind, &x0, &mut rng, opts, idx) {
                    Ok(t) => {
                        out.push(t);
                        done = true;
                        break;
                    }
                    Err(CoreError::Divergence { .. }) => {
                        rejected += 1;
                    }
                    Err(e) => return Err(e),
                }
            }
            if !done {
                return Err(CoreError::TooManyRejections {
                    rejected,
                    attempted: out.len() + rejected,
                });
            }
        }
        Ok(out)
    };

    let train = gen_split(Purpose::SimTrain, n_train)?;
    let test = gen_split(Purpose::SimTest, n_test)?;
    let attempted = n_train + n_test + rejected;
    if rejected * 100 > attempted {
        return Err(CoreError::TooManyRejections { rejected, attempted });
    }

    let normalization = NormStats::from_trajectories(&train, spec.dim);
    let meta = DatasetMeta {
        system: kind.name().to_string(),
        dim: spec.dim,
        params: spec.params.iter().map(|(n, v)| (n.to_string(), *v)).collect(),
        sigma_diff: spec.sigma_diff.clone(),
        noise_scale: opts.noise_scale,
        t0: spec.t0,
        t1: spec.t1,
        steps: opts.n_steps,
        split: SplitSpec::default(),
        n_train,
        n_test,
        seed,
        rejected,
        normalization,
    };
    Ok(ForecastDataset { meta, train, test })
}

impl ForecastDataset {
    /// Build a dataset from externally constructed trajectories (synthetic
    /// processes in tests and the generic CSV ingestion path). Normalization
    /// is computed from the training split.
    pub fn from_trajectories(
        name: &str,
        split: SplitSpec,
        train: Vec<Trajectory>,
        test: Vec<Trajectory>,
        seed: u64,
    ) -> Result<Self, CoreError> {
        if train.is_empty() || test.is_empty() {
            return Err(CoreError::Dataset("train and test must be non-empty".into()));
        }
        let steps = train[0].states.rows();
        let dim = train[0].states.cols();
        for t in train.iter().chain(&test) {
            if t.states.rows() != steps || t.states.cols() != dim || t.times.len() != steps {
                return Err(CoreError::Dataset("inconsistent trajectory shapes".into()));
            }
        }
        if split.total() != steps {
            return Err(CoreError::Dataset(format!(
                "split {}+{}+{} != step count {steps}",
                split.observe, split.predict, split.extrapolate
            )));
        }
        let normalization = NormStats::from_trajectories(&train, dim);
        let meta = DatasetMeta {
            system: name.to_string(),
            dim,
            params: vec![],
            sigma_diff: vec![],
            noise_scale: 0.0,
            t0: train[0].times[0],
            t1: *train[0].times.last().unwrap(),
            steps,
            split,
            n_train: train.len(),
            n_test: test.len(),
            seed,
            rejected: 0,
            normalization,
        };
        Ok(ForecastDataset { meta, train, test })
    }

    /// Write `meta.json`, `train.csv`, `test.csv` into `dir` (created if
    /// missing).
    pub fn save_dir(&self, dir: &Path) -> Result<(), CoreError> {
        fs::create_dir_all(dir).map_err(|e| CoreError::io(dir.display().to_string(), e))?;
        let meta_path = dir.join("meta.json");
        let json = serde_json::to_string_pretty(&self.meta)
            .map_err(|e| CoreError::json(meta_path.display().to_string(), e))?;
        fs::write(&meta_path, json).map_err(|e| CoreError::io(meta_path.display().to_string(), e))?;
        write_split(&dir.join("train.csv"), &self.train)?;
        write_split(&dir.join("test.csv"), &self.test)?;
        Ok(())
    }

    /// Load a dataset directory written by [`ForecastDataset::save_dir`].
    pub fn load_dir(dir: &Path) -> Result<Self, CoreError> {
        let meta_path = dir.join("meta.json");
        let raw = fs::read_to_string(&meta_path)
            .map_err(|e| CoreError::io(meta_path.display().to_string(), e))?;
        let meta: DatasetMeta = serde_json::from_str(&raw)
            .map_err(|e| CoreError::json(meta_path.display().to_string(), e))?;
        let train = read_split(&dir.join("train.csv"), meta.steps, meta.dim, meta.n_train)?;
        let test = read_split(&dir.join("test.csv"), meta.steps, meta.dim, meta.n_test)?;
        Ok(ForecastDataset { meta, train, test })
    }
}

fn write_split(path: &Path, trajs: &[Trajectory]) -> Result<(), CoreError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CoreError::csv(path.display().to_string(), e))?;
    let dim = trajs.first().map_or(0, |t| t.states.cols());
    let mut header = vec!["trajectory_id".to_string(), "step_index".to_string(), "t".to_string()];
    for d in 0..dim {
        header.push(format!("x_{}", d + 1));
    }
    w.write_record(&header).map_err(|e| CoreError::csv(path.display().to_string(), e))?;
    let mut record = Vec::with_capacity(3 + dim);
    for (id, t) in trajs.iter().enumerate() {
        for i in 0..t.states.rows() {
            record.clear();
            record.push(id.to_string());
            record.push(i.to_string());
            record.push(t.times[i].to_string());
            for d in 0..dim {
                record.push(t.states.get(i, d).to_string());
            }
            w.write_record(&record).map_err(|e| CoreError::csv(path.display().to_string(), e))?;
        }
    }
    w.flush().map_err(|e| CoreError::io(path.display().to_string(), e))?;
    Ok(())
}

fn read_split(
    path: &Path,
    steps: usize,
    dim: usize,
    expected: usize,
) -> Result<Vec<Trajectory>, CoreError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CoreError::csv(path.display().to_string(), e))?;
    let mut trajs: Vec<Trajectory> = Vec::with_capacity(expected);
    for rec in r.records() {
        let rec = rec.map_err(|e| CoreError::csv(path.display().to_string(), e))?;
        if rec.len() != 3 + dim {
            return Err(CoreError::Dataset(format!(
                "{}: expected {} columns, found {}",
                path.display(),
                3 + dim,
                rec.len()
            )));
        }
        let parse = |s: &str| -> Result<f64, CoreError> {
            s.parse::<f64>().map_err(|_| {
                CoreError::Dataset(format!("{}: bad float '{s}'", path.display()))
            })
        };
        let id: usize = rec[0]
            .parse()
            .map_err(|_| CoreError::Dataset(format!("{}: bad id '{}'", path.display(), &rec[0])))?;
        let step: usize = rec[1]
            .parse()
            .map_err(|_| CoreError::Dataset(format!("{}: bad step '{}'", path.display(), &rec[1])))?;
        if id == trajs.len() && step == 0 {
            trajs.push(Trajectory { times: Vec::with_capacity(steps), states: Matrix::zeros(steps, dim) });
        }
        let t = trajs
            .get_mut(id)
            .ok_or_else(|| CoreError::Dataset(format!("{}: out-of-order trajectory id {id}", path.display())))?;
        if step != t.times.len() || step >= steps {
            return Err(CoreError::Dataset(format!(
                "{}: out-of-order step {step} for trajectory {id}",
                path.display()
            )));
        }
        t.times.push(parse(&rec[2])?);
        for d in 0..dim {
            t.states.set(step, d, parse(&rec[3 + d])?);
        }
    }
    if trajs.len() != expected || trajs.iter().any(|t| t.times.len() != steps) {
        return Err(CoreError::Dataset(format!(
            "{}: expected {expected} trajectories of {steps} steps",
            path.display()
        )));
    }
    Ok(trajs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small_opts() -> SimOptions {
        SimOptions::default()
    }

    #[test]
    fn minimal_dataset_generates_with_disjoint_streams() {
        let ds = generate_dataset(SystemKind::VanDerPol, 1, 1, 3, &small_opts()).unwrap();
        assert_eq!(ds.train.len(), 1);
        assert_eq!(ds.test.len(), 1);
        // SimTrain and SimTest streams must differ.
        assert_ne!(ds.train[0].states, ds.test[0].states);
        assert_eq!(ds.meta.split.total(), 200);
    }

    #[test]
    fn same_seed_gives_identical_datasets() {
        let a = generate_dataset(SystemKind::Brusselator, 3, 2, 11, &small_opts()).unwrap();
        let b = generate_dataset(SystemKind::Brusselator, 3, 2, 11, &small_opts()).unwrap();
        for (x, y) in a.train.iter().zip(&b.train) {
            assert_eq!(x.states, y.states);
        }
        assert_eq!(a.meta.normalization, b.meta.normalization);
    }

    #[test]
    fn normalization_uses_train_split_only() {
        let ds = generate_dataset(SystemKind::VanDerPol, 4, 2, 5, &small_opts()).unwrap();
        let stats = NormStats::from_trajectories(&ds.train, 2);
        assert_eq!(ds.meta.normalization, stats);
        let with_test =
            NormStats::from_trajectories(&[ds.train.clone(), ds.test.clone()].concat(), 2);
        assert_ne!(ds.meta.normalization, with_test);
    }

    #[test]
    fn normalize_denormalize_roundtrip() {
        let stats = NormStats { mean: vec![1.0, -2.0], std: vec![0.5, 3.0] };
        let m = Matrix::from_vec(2, 2, vec![0.0, 1.0, 2.0, -5.0]);
        let back = stats.denormalize_rows(&stats.normalize_rows(&m));
        for (a, b) in back.data().iter().zip(m.data()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn save_load_roundtrip_preserves_values() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_dataset(SystemKind::LotkaVolterra, 2, 1, 7, &small_opts()).unwrap();
        ds.save_dir(dir.path()).unwrap();
        let back = ForecastDataset::load_dir(dir.path()).unwrap();
        assert_eq!(back.train.len(), 2);
        for (a, b) in ds.train.iter().zip(&back.train) {
            assert_eq!(a.states, b.states, "CSV roundtrip must be exact (shortest-roundtrip floats)");
            assert_eq!(a.times, b.times);
        }
        assert_eq!(ds.meta.normalization, back.meta.normalization);
    }

    #[test]
    fn byte_identical_serialization_for_same_seed() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        generate_dataset(SystemKind::VanDerPol, 2, 1, 9, &small_opts())
            .unwrap()
            .save_dir(d1.path())
            .unwrap();
        generate_dataset(SystemKind::VanDerPol, 2, 1, 9, &small_opts())
            .unwrap()
            .save_dir(d2.path())
            .unwrap();
        for f in ["meta.json", "train.csv", "test.csv"] {
            let a = fs::read(d1.path().join(f)).unwrap();
            let b = fs::read(d2.path().join(f)).unwrap();
            assert_eq!(a, b, "{f} differs between identical runs");
        }
    }

    #[test]
    fn from_trajectories_validates_split() {
        let t = Trajectory { times: vec![0.0, 1.0], states: Matrix::zeros(2, 1) };
        let err = ForecastDataset::from_trajectories(
            "toy",
            SplitSpec { observe: 1, predict: 1, extrapolate: 1 },
            vec![t.clone()],
            vec![t],
            0,
        );
        assert!(err.is_err());
    }
}
