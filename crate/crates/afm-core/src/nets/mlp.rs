//! Velocity network: an MLP with tanh hidden layers and a zero-initialized
//! linear output layer, so the initial velocity field is identically zero.

use rand::Rng;

use crate::numcore::{OpCtx, ParamSet};

/// MLP architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct MlpCfg {
    pub input: usize,
    pub hidden: usize,
    /// Number of hidden layers.
    pub depth: usize,
    pub output: usize,
}

/// Register MLP parameters under `prefix`. Hidden weights use fan-in uniform
/// initialization; the output layer starts at exactly zero.
pub fn init_mlp(ps: &mut ParamSet, prefix: &str, cfg: &MlpCfg, rng: &mut impl Rng) {
    let mut fan_in = cfg.input;
    for layer in 0..cfg.depth {
        ps.insert_fan_in(format!("{prefix}.fc{layer}.w"), fan_in, cfg.hidden, rng);
        ps.insert_zeros(format!("{prefix}.fc{layer}.b"), 1, cfg.hidden);
        fan_in = cfg.hidden;
    }
    ps.insert_zeros(format!("{prefix}.out.w"), fan_in, cfg.output);
    ps.insert_zeros(format!("{prefix}.out.b"), 1, cfg.output);
}

/// Forward pass on a batch×input matrix.
pub fn mlp_forward<C: OpCtx>(ctx: &mut C, prefix: &str, cfg: &MlpCfg, x: &C::Val) -> C::Val {
    let mut h = x.clone();
    for layer in 0..cfg.depth {
        let w = ctx.param(&format!("{prefix}.fc{layer}.w"));
        let b = ctx.param(&format!("{prefix}.fc{layer}.b"));
        let lin = ctx.matmul(&h, &w);
        let biased = ctx.add_row(&lin, &b);
        h = ctx.tanh(&biased);
    }
    let w = ctx.param(&format!("{prefix}.out.w"));
    let b = ctx.param(&format!("{prefix}.out.b"));
    let lin = ctx.matmul(&h, &w);
    ctx.add_row(&lin, &b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{EvalCtx, Matrix};
    use crate::rngstream::{stream, Purpose};

    fn setup(input: usize, output: usize) -> (ParamSet, MlpCfg) {
        let cfg = MlpCfg { input, hidden: 8, depth: 3, output };
        let mut ps = ParamSet::new();
        let mut rng = stream(0, Purpose::ParamInit, 0);
        init_mlp(&mut ps, "vel", &cfg, &mut rng);
        (ps, cfg)
    }

    #[test]
    fn zero_initialized_output_layer_gives_zero_field() {
        let (ps, cfg) = setup(5, 3);
        let mut ctx = EvalCtx::new(&ps);
        let x = Matrix::from_fn(4, 5, |i, j| (i as f64 - j as f64) * 0.63);
        let y = mlp_forward(&mut ctx, "vel", &cfg, &x);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_dimension_matches_for_small_n() {
        for n in [1, 2, 3] {
            let (ps, cfg) = setup(4, n);
            let mut ctx = EvalCtx::new(&ps);
            let x = Matrix::zeros(2, 4);
            let y = mlp_forward(&mut ctx, "vel", &cfg, &x);
            assert_eq!(y.shape(), (2, n));
        }
    }

    #[test]
    fn lipschitz_smoke_small_perturbation_small_change() {
        let (mut ps, cfg) = setup(4, 2);
        // Randomize the output layer so the test is not trivially 0 == 0.
        let mut rng = stream(1, Purpose::ParamInit, 1);
        let hidden = cfg.hidden;
        ps.get_mut("vel.out.w")
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = rng.gen_range(-1.0 / (hidden as f64).sqrt()..1.0 / (hidden as f64).sqrt()));
        let mut ctx = EvalCtx::new(&ps);
        let x = Matrix::from_fn(1, 4, |_, j| 0.3 * j as f64);
        let mut x2 = x.clone();
        x2.data_mut()[1] += 1e-6;
        let y1 = mlp_forward(&mut ctx, "vel", &cfg, &x);
        let y2 = mlp_forward(&mut ctx, "vel", &cfg, &x2);
        let delta: f64 = y1
            .data()
            .iter()
            .zip(y2.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(delta < 1e-2, "delta = {delta}");
    }
}
