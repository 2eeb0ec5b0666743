//! Adam with bias correction, operating on a [`ParamSet`] with gradients
//! keyed by parameter name.

use std::collections::HashMap;

use crate::error::CoreError;
use crate::numcore::matrix::Matrix;
use crate::numcore::params::ParamSet;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, n_scalars: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n_scalars],
            v: vec![0.0; n_scalars],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update in place. Parameter blocks without a gradient
    /// entry are treated as having gradient zero (their moments still decay).
    pub fn step(
        &mut self,
        params: &mut ParamSet,
        grads: &HashMap<String, Matrix>,
    ) -> Result<(), CoreError> {
        for (name, g) in grads {
            if !g.all_finite() {
                return Err(CoreError::NonFiniteGradient { name: name.clone() });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);

        let names: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
        let mut off = 0;
        for name in &names {
            let p = params.get_mut(name);
            let n = p.data().len();
            let grad = grads.get(name.as_str());
            let m = &mut self.m[off..off + n];
            let v = &mut self.v[off..off + n];
            let pd = p.data_mut();
            for i in 0..n {
                let g = grad.map_or(0.0, |g| g.data()[i]);
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                pd[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            off += n;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(x: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.insert("x", Matrix::from_vec(1, 1, vec![x]));
        ps
    }

    fn grad_of(ps: &ParamSet, g: f64) -> HashMap<String, Matrix> {
        let _ = ps;
        let mut m = HashMap::new();
        m.insert("x".to_string(), Matrix::from_vec(1, 1, vec![g]));
        m
    }

    #[test]
    fn first_step_moves_by_almost_exactly_lr() {
        // Bias correction makes m_hat/sqrt(v_hat) = g/|g| at t=1, so the step
        // is lr/(1 + eps/|g|-ish): within [0.00299, 0.003] for g=1, lr=0.003.
        let mut ps = scalar_param(1.0);
        let mut opt = Adam::new(0.003, ps.n_scalars());
        let g = grad_of(&ps, 1.0);
        opt.step(&mut ps, &g).unwrap();
        let delta = (1.0 - ps.get("x").scalar()).abs();
        assert!((0.00299..=0.003).contains(&delta), "delta = {delta}");
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged_but_increments_step() {
        let mut ps = scalar_param(0.7);
        let mut opt = Adam::new(0.003, ps.n_scalars());
        let g = grad_of(&ps, 0.0);
        opt.step(&mut ps, &g).unwrap();
        assert_eq!(ps.get("x").scalar(), 0.7);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn missing_gradient_entry_means_zero() {
        let mut ps = scalar_param(0.7);
        let mut opt = Adam::new(0.003, ps.n_scalars());
        opt.step(&mut ps, &HashMap::new()).unwrap();
        assert_eq!(ps.get("x").scalar(), 0.7);
    }

    #[test]
    fn converges_on_scalar_quadratic() {
        // f(x) = x^2 from x=1: |x| < 1e-2 after 1000 steps.
        let mut ps = scalar_param(1.0);
        let mut opt = Adam::new(0.003, ps.n_scalars());
        for _ in 0..1000 {
            let x = ps.get("x").scalar();
            let g = grad_of(&ps, 2.0 * x);
            opt.step(&mut ps, &g).unwrap();
        }
        assert!(ps.get("x").scalar().abs() < 1e-2);
    }

    #[test]
    fn monotone_loss_on_convex_quadratic_over_500_steps() {
        let mut ps = scalar_param(2.0);
        let mut opt = Adam::new(0.003, ps.n_scalars());
        let loss = |x: f64| 3.0 * x * x;
        let initial = loss(ps.get("x").scalar());
        for _ in 0..500 {
            let x = ps.get("x").scalar();
            let g = grad_of(&ps, 6.0 * x);
            opt.step(&mut ps, &g).unwrap();
        }
        assert!(loss(ps.get("x").scalar()) < initial);
    }

    #[test]
    fn non_finite_gradient_names_the_block() {
        let mut ps = scalar_param(1.0);
        let mut opt = Adam::new(0.003, ps.n_scalars());
        let g = grad_of(&ps, f64::NAN);
        match opt.step(&mut ps, &g) {
            Err(CoreError::NonFiniteGradient { name }) => assert_eq!(name, "x"),
            other => panic!("expected NonFiniteGradient, got {other:?}"),
        }
    }
}
