//! Probability-path construction and ODE sampling.
//!
//! The conditional path between a base draw y⁰ and a data point y¹ is the
//! straight line N((1−s)y⁰ + s·y¹, σ²I); its regression target is the
//! constant field y¹ − y⁰. Samples are pushed from s=0 to s=1 with fixed-step
//! explicit integrators.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::numcore::Matrix;

/// Straight-path configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowPathConfig {
    /// Path noise σ (≥ 0); the interpolant is exactly linear at 0.
    pub sigma_path: f64,
}

impl Default for FlowPathConfig {
    fn default() -> Self {
        FlowPathConfig { sigma_path: 1e-4 }
    }
}

/// Fixed-step explicit ODE integrators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OdeMethod {
    Euler,
    Midpoint,
}

/// ODE sampler configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OdeSamplerConfig {
    pub method: OdeMethod,
    pub n_steps: usize,
}

impl Default for OdeSamplerConfig {
    fn default() -> Self {
        OdeSamplerConfig { method: OdeMethod::Euler, n_steps: 16 }
    }
}

/// Sample the interpolant y^s ~ N((1−s)y⁰ + s·y¹, σ²I) for a whole batch,
/// with an independent flow step per row.
pub fn interpolant_sample_rows(
    y0: &Matrix,
    y1: &Matrix,
    s: &[f64],
    cfg: &FlowPathConfig,
    rng: &mut impl Rng,
) -> Matrix {
    assert_eq!(y0.shape(), y1.shape(), "interpolant: endpoint shapes");
    assert_eq!(y0.rows(), s.len(), "interpolant: one flow step per row");
    Matrix::from_fn(y0.rows(), y0.cols(), |i, j| {
        let mean = (1.0 - s[i]) * y0.get(i, j) + s[i] * y1.get(i, j);
        if cfg.sigma_path == 0.0 {
            mean
        } else {
            let z: f64 = rng.sample(StandardNormal);
            mean + cfg.sigma_path * z
        }
    })
}

/// Single-vector convenience wrapper.
pub fn interpolant_sample(
    y0: &[f64],
    y1: &[f64],
    s: f64,
    cfg: &FlowPathConfig,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let m0 = Matrix::row_vec(y0.to_vec());
    let m1 = Matrix::row_vec(y1.to_vec());
    interpolant_sample_rows(&m0, &m1, &[s], cfg, rng).data().to_vec()
}

/// The conditional velocity target of the straight path: y¹ − y⁰ (s-free).
pub fn velocity_target(y0: &Matrix, y1: &Matrix) -> Matrix {
    y1.sub(y0)
}

/// Integrate `dy/ds = vfield(y, s)` from s=0 to s=1 on a batch of states.
///
/// Euler: y ← y + Δs·v(y, s).
/// Midpoint: y ← y + Δs·v(y + ½Δs·v(y,s), s + ½Δs).
pub fn ode_sample(
    mut vfield: impl FnMut(&Matrix, f64) -> Matrix,
    y0: Matrix,
    cfg: &OdeSamplerConfig,
) -> Result<Matrix, CoreError> {
    assert!(cfg.n_steps >= 1, "ode_sample: n_steps >= 1");
    let ds = 1.0 / cfg.n_steps as f64;
    let mut y = y0;
    for k in 0..cfg.n_steps {
        let s = k as f64 * ds;
        let v = match cfg.method {
            OdeMethod::Euler => vfield(&y, s),
            OdeMethod::Midpoint => {
                let v1 = vfield(&y, s);
                let mut mid = y.clone();
                mid.axpy(0.5 * ds, &v1);
                vfield(&mid, s + 0.5 * ds)
            }
        };
        y.axpy(ds, &v);
        if !y.all_finite() {
            return Err(CoreError::NonFiniteOdeState { step: k });
        }
    }
    Ok(y)
}

/// Like [`ode_sample`], but tolerant of per-row failure: a row that turns
/// non-finite has its `valid` flag cleared and its state zeroed (keeping the
/// rest of the batch numerically healthy); already-invalid rows stay zeroed.
/// Rows that remain valid take exactly the trajectory [`ode_sample`] would
/// give them.
pub fn ode_sample_flagged(
    mut vfield: impl FnMut(&Matrix, f64) -> Matrix,
    y0: Matrix,
    cfg: &OdeSamplerConfig,
    valid: &mut [bool],
) -> Matrix {
    assert!(cfg.n_steps >= 1, "ode_sample_flagged: n_steps >= 1");
    assert_eq!(y0.rows(), valid.len(), "ode_sample_flagged: one flag per row");
    let ds = 1.0 / cfg.n_steps as f64;
    let mut y = y0;
    let scrub = |y: &mut Matrix, valid: &mut [bool]| {
        for i in 0..y.rows() {
            if !valid[i] || y.row(i).iter().any(|v| !v.is_finite()) {
                valid[i] = false;
                y.row_mut(i).fill(0.0);
            }
        }
    };
    scrub(&mut y, valid);
    for k in 0..cfg.n_steps {
        let s = k as f64 * ds;
        let v = match cfg.method {
            OdeMethod::Euler => vfield(&y, s),
            OdeMethod::Midpoint => {
                let mut mid = y.clone();
                let v1 = vfield(&y, s);
                mid.axpy(0.5 * ds, &v1);
                scrub(&mut mid, valid);
                vfield(&mid, s + 0.5 * ds)
            }
        };
        y.axpy(ds, &v);
        scrub(&mut y, valid);
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rngstream::{stream, Purpose};
    use approx::assert_abs_diff_eq;

    fn no_noise() -> FlowPathConfig {
        FlowPathConfig { sigma_path: 0.0 }
    }

    #[test]
    fn endpoints_exact_without_path_noise() {
        let mut rng = stream(0, Purpose::TrainBatch, 0);
        let y0 = vec![1.0, -2.0];
        let y1 = vec![3.0, 5.0];
        assert_eq!(interpolant_sample(&y0, &y1, 0.0, &no_noise(), &mut rng), y0);
        assert_eq!(interpolant_sample(&y0, &y1, 1.0, &no_noise(), &mut rng), y1);
    }

    #[test]
    fn midpoint_of_linear_interpolation() {
        let mut rng = stream(0, Purpose::TrainBatch, 0);
        let y = interpolant_sample(&[0.0, 0.0], &[2.0, 4.0], 0.5, &no_noise(), &mut rng);
        assert_eq!(y, vec![1.0, 2.0]);
    }

    #[test]
    fn velocity_target_is_difference() {
        let y0 = Matrix::row_vec(vec![1.0, 1.0]);
        let y1 = Matrix::row_vec(vec![3.0, 0.0]);
        assert_eq!(velocity_target(&y0, &y1).data(), &[2.0, -1.0]);
        assert!(velocity_target(&y1, &y1).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn interpolant_derivative_matches_target_field() {
        // With sigma_path = 0 the path is generated by its own target field:
        // d/ds [(1-s)y0 + s y1] = y1 - y0 for all s.
        let mut rng = stream(0, Purpose::TrainBatch, 0);
        let y0 = vec![0.5, -1.5, 2.0];
        let y1 = vec![-0.5, 3.0, 1.0];
        let h = 1e-6;
        for s in [0.1, 0.5, 0.9] {
            let a = interpolant_sample(&y0, &y1, s - h, &no_noise(), &mut rng);
            let b = interpolant_sample(&y0, &y1, s + h, &no_noise(), &mut rng);
            for d in 0..3 {
                let deriv = (b[d] - a[d]) / (2.0 * h);
                assert_abs_diff_eq!(deriv, y1[d] - y0[d], epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn zero_field_is_identity_flow() {
        let y0 = Matrix::row_vec(vec![1.0, 2.0]);
        let out = ode_sample(|_, _| Matrix::zeros(1, 2), y0.clone(), &OdeSamplerConfig::default())
            .unwrap();
        assert_eq!(out, y0);
    }

    #[test]
    fn constant_field_lands_exactly_for_any_step_count() {
        let target = [3.0, -1.0];
        for n_steps in [1, 2, 7, 16] {
            for method in [OdeMethod::Euler, OdeMethod::Midpoint] {
                let cfg = OdeSamplerConfig { method, n_steps };
                let out = ode_sample(
                    |_, _| Matrix::row_vec(target.to_vec()),
                    Matrix::zeros(1, 2),
                    &cfg,
                )
                .unwrap();
                assert_abs_diff_eq!(out.data()[0], 3.0, epsilon = 1e-12);
                assert_abs_diff_eq!(out.data()[1], -1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn integrating_velocity_target_reaches_y1() {
        let y0 = Matrix::row_vec(vec![0.3, -0.8]);
        let y1 = Matrix::row_vec(vec![1.3, 0.4]);
        let v = velocity_target(&y0, &y1);
        let out = ode_sample(|_, _| v.clone(), y0, &OdeSamplerConfig::default()).unwrap();
        for (a, b) in out.data().iter().zip(y1.data()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn exponential_growth_converges_to_e() {
        let cfg = OdeSamplerConfig { method: OdeMethod::Euler, n_steps: 1000 };
        let out = ode_sample(|y, _| y.clone(), Matrix::row_vec(vec![1.0]), &cfg).unwrap();
        assert!((out.data()[0] - std::f64::consts::E).abs() < 0.002);
    }

    #[test]
    fn integrator_orders_euler_one_midpoint_two() {
        // Richardson slopes on y' = y over s in [0,1].
        let run = |method, n| {
            let cfg = OdeSamplerConfig { method, n_steps: n };
            ode_sample(|y: &Matrix, _| y.clone(), Matrix::row_vec(vec![1.0]), &cfg)
                .unwrap()
                .data()[0]
        };
        for (method, nominal) in [(OdeMethod::Euler, 1.0), (OdeMethod::Midpoint, 2.0)] {
            let e = std::f64::consts::E;
            let err1 = (run(method, 20) - e).abs();
            let err2 = (run(method, 40) - e).abs();
            let order = (err1 / err2).log2();
            assert!(
                (order - nominal).abs() <= 0.3,
                "{method:?}: observed order {order:.3}"
            );
        }
    }

    #[test]
    fn non_finite_state_reports_step_index() {
        let res = ode_sample(
            |_, _| Matrix::row_vec(vec![f64::INFINITY]),
            Matrix::row_vec(vec![0.0]),
            &OdeSamplerConfig::default(),
        );
        assert!(matches!(res, Err(CoreError::NonFiniteOdeState { step: 0 })));
    }

    #[test]
    fn flagged_sampler_matches_strict_on_healthy_rows() {
        let field = |y: &Matrix, s: f64| y.map(|v| v * (1.0 - s) + 0.3);
        let y0 = Matrix::from_vec(3, 2, vec![0.1, -0.4, 0.8, 0.2, -1.0, 0.5]);
        let cfg = OdeSamplerConfig { method: OdeMethod::Midpoint, n_steps: 8 };
        let strict = ode_sample(field, y0.clone(), &cfg).unwrap();
        let mut valid = vec![true; 3];
        let flagged = ode_sample_flagged(field, y0, &cfg, &mut valid);
        assert_eq!(valid, vec![true; 3]);
        assert_eq!(flagged, strict);
    }

    #[test]
    fn poisoned_row_is_flagged_and_zeroed_without_hurting_others() {
        // Row 1 of the field blows up; rows 0 and 2 must be untouched.
        let field = |y: &Matrix, _s: f64| {
            Matrix::from_fn(y.rows(), y.cols(), |i, _| if i == 1 { f64::NAN } else { 1.0 })
        };
        let y0 = Matrix::from_vec(3, 1, vec![0.0, 0.0, 0.0]);
        let cfg = OdeSamplerConfig::default();
        let mut valid = vec![true; 3];
        let out = ode_sample_flagged(field, y0, &cfg, &mut valid);
        assert_eq!(valid, vec![true, false, true]);
        assert_eq!(out.get(1, 0), 0.0);
        assert_abs_diff_eq!(out.get(0, 0), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.get(2, 0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn perfectly_learned_gaussian_field_recovers_target_moments() {
        // For base N(0,1), target N(mu, sig^2), independent coupling and
        // sigma_path -> 0, the marginal field of the straight path is exact:
        // y^s ~ N(s*mu, (1-s)^2 + s^2 sig^2) and
        //   v(y,s) = [(s*sig^2 - (1-s)) / ((1-s)^2 + s^2 sig^2)]*(y - s*mu) + mu.
        // Integrating it must push N(0,1) onto N(mu, sig^2).
        let mu = 2.0;
        let sig = 0.5;
        let v = move |y: &Matrix, s: f64| {
            let var = (1.0 - s) * (1.0 - s) + s * s * sig * sig;
            let coef = (s * sig * sig - (1.0 - s)) / var;
            y.map(|yv| coef * (yv - s * mu) + mu)
        };
        let mut rng = stream(5, Purpose::ForecastPath, 0);
        let n = 10_000;
        let y0 = Matrix::from_fn(n, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let cfg = OdeSamplerConfig { method: OdeMethod::Midpoint, n_steps: 64 };
        let out = ode_sample(v, y0, &cfg).unwrap();
        let mean: f64 = out.data().iter().sum::<f64>() / n as f64;
        let var: f64 =
            out.data().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        // 3-sigma Monte Carlo bands.
        let mean_tol = 3.0 * sig / (n as f64).sqrt();
        assert!((mean - mu).abs() < mean_tol + 0.01, "mean {mean}");
        assert!((var.sqrt() - sig).abs() < 0.02, "std {}", var.sqrt());
    }
}
