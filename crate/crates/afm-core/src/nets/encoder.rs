//! Context encoder: bidirectional LSTM over the observation window, with the
//! two final last-layer states concatenated and linearly projected to a
//! fixed-size context vector.

use rand::Rng;

use crate::numcore::{OpCtx, ParamSet};
use crate::nets::lstm::{init_lstm, lstm_forward, LstmSpec};

/// Encoder architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct EncoderCfg {
    /// Per-step input width (observation dim + covariate dim).
    pub input: usize,
    pub hidden: usize,
    pub layers: usize,
    /// Output context width.
    pub h_dim: usize,
}

impl EncoderCfg {
    fn lstm_spec(&self) -> LstmSpec {
        LstmSpec { input: self.input, hidden: self.hidden, layers: self.layers }
    }
}

/// Register encoder parameters under `prefix`.
pub fn init_encoder(ps: &mut ParamSet, prefix: &str, cfg: &EncoderCfg, rng: &mut impl Rng) {
    init_lstm(ps, prefix, &cfg.lstm_spec(), rng);
    ps.insert_fan_in(format!("{prefix}.proj.w"), 2 * cfg.hidden, cfg.h_dim, rng);
    ps.insert_zeros(format!("{prefix}.proj.b"), 1, cfg.h_dim);
}

/// Encode a window (one batch×input matrix per step, oldest first) into a
/// batch×h_dim context.
pub fn encode_context<C: OpCtx>(
    ctx: &mut C,
    prefix: &str,
    cfg: &EncoderCfg,
    window: &[C::Val],
) -> C::Val {
    assert!(!window.is_empty(), "encode_context: empty window");
    let out = lstm_forward(ctx, prefix, &cfg.lstm_spec(), window);
    let cat = ctx.concat_cols(&[out.final_fwd, out.final_bwd]);
    let w = ctx.param(&format!("{prefix}.proj.w"));
    let b = ctx.param(&format!("{prefix}.proj.b"));
    let proj = ctx.matmul(&cat, &w);
    ctx.add_row(&proj, &b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{EvalCtx, Matrix, TapeCtx};
    use crate::rngstream::{stream, Purpose};

    fn setup(h_dim: usize) -> (ParamSet, EncoderCfg) {
        let cfg = EncoderCfg { input: 2, hidden: 5, layers: 2, h_dim };
        let mut ps = ParamSet::new();
        let mut rng = stream(0, Purpose::ParamInit, 0);
        init_encoder(&mut ps, "enc", &cfg, &mut rng);
        (ps, cfg)
    }

    fn window(w: usize, shift: f64) -> Vec<Matrix> {
        (0..w)
            .map(|t| Matrix::from_fn(3, 2, |i, j| ((t * 7 + i * 3 + j) as f64 * 0.21 + shift).cos()))
            .collect()
    }

    #[test]
    fn output_dim_independent_of_window_length() {
        let (ps, cfg) = setup(6);
        let mut ctx = EvalCtx::new(&ps);
        for w in [1, 3, 9] {
            let h = encode_context(&mut ctx, "enc", &cfg, &window(w, 0.0));
            assert_eq!(h.shape(), (3, 6));
        }
    }

    #[test]
    fn deterministic_for_identical_windows() {
        let (ps, cfg) = setup(4);
        let mut ctx = EvalCtx::new(&ps);
        let a = encode_context(&mut ctx, "enc", &cfg, &window(4, 0.3));
        let b = encode_context(&mut ctx, "enc", &cfg, &window(4, 0.3));
        assert_eq!(a, b);
    }

    #[test]
    fn permuting_time_order_changes_context() {
        let (ps, cfg) = setup(4);
        let mut ctx = EvalCtx::new(&ps);
        let win = window(4, 0.0);
        let a = encode_context(&mut ctx, "enc", &cfg, &win);
        let mut rev = win.clone();
        rev.reverse();
        let b = encode_context(&mut ctx, "enc", &cfg, &rev);
        assert_ne!(a, b);
    }

    #[test]
    fn gradient_of_context_norm_matches_finite_differences() {
        // loss = mean_square(h); check a weight deep in layer 0 and the
        // projection, through the tape.
        let (ps, cfg) = setup(3);
        let win = window(3, 0.1);

        let loss_at = |ps: &ParamSet| {
            let mut ctx = EvalCtx::new(ps);
            let w: Vec<Matrix> = win.clone();
            let h = encode_context(&mut ctx, "enc", &cfg, &w);
            h.mean_square().scalar()
        };

        let mut tctx = TapeCtx::new(&ps);
        let tin: Vec<_> = win.iter().map(|m| tctx.constant(m.clone())).collect();
        let h = encode_context(&mut tctx, "enc", &cfg, &tin);
        let loss = tctx.mean_square(&h);
        let grads = tctx.grads(loss).unwrap();

        for name in ["enc.l0.fwd.w_ih", "enc.l1.bwd.w_hh", "enc.proj.w", "enc.l0.bwd.b"] {
            let g = grads.get(name).unwrap_or_else(|| panic!("no grad for {name}"));
            // Probe three entries of each block.
            let block = ps.get(name).clone();
            let n = block.data().len();
            for &idx in &[0, n / 2, n - 1] {
                let h_step = 1e-5;
                let mut plus = ps.clone();
                plus.get_mut(name).data_mut()[idx] += h_step;
                let mut minus = ps.clone();
                minus.get_mut(name).data_mut()[idx] -= h_step;
                let num = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h_step);
                let ana = g.data()[idx];
                let err = (ana - num).abs();
                let rel = err / num.abs().max(1e-8);
                assert!(
                    err <= 1e-8 || rel < 1e-4,
                    "{name}[{idx}]: analytic {ana} vs numeric {num}"
                );
            }
        }
    }
}
