//! Stacked bidirectional LSTM, generic over the evaluation context.
//!
//! Activations are row-major batches: each timestep input is a batch×input
//! matrix, `y = x·W + b` with weights stored input×output. Gate blocks are
//! laid out `[i | f | g | o]` along the 4H columns.

use rand::Rng;

use crate::numcore::{OpCtx, ParamSet};

/// Architecture of one (always bidirectional) stacked LSTM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmSpec {
    pub input: usize,
    pub hidden: usize,
    pub layers: usize,
}

impl LstmSpec {
    fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input
        } else {
            2 * self.hidden
        }
    }

    /// Output width of the per-step sequence (both directions concatenated).
    pub fn out_width(&self) -> usize {
        2 * self.hidden
    }
}

const DIRS: [&str; 2] = ["fwd", "bwd"];

fn pname(prefix: &str, layer: usize, dir: &str, which: &str) -> String {
    format!("{prefix}.l{layer}.{dir}.{which}")
}

/// Register all parameter blocks under `prefix` (fan-in uniform weights,
/// zero biases).
pub fn init_lstm(ps: &mut ParamSet, prefix: &str, spec: &LstmSpec, rng: &mut impl Rng) {
    for layer in 0..spec.layers {
        let input = spec.layer_input(layer);
        for dir in DIRS {
            ps.insert_fan_in(pname(prefix, layer, dir, "w_ih"), input, 4 * spec.hidden, rng);
            ps.insert_fan_in(pname(prefix, layer, dir, "w_hh"), spec.hidden, 4 * spec.hidden, rng);
            ps.insert_zeros(pname(prefix, layer, dir, "b"), 1, 4 * spec.hidden);
        }
    }
}

/// Result of a bidirectional forward pass.
pub struct LstmOut<V> {
    /// Last-layer output per timestep: batch × 2H (forward ‖ backward).
    pub per_step: Vec<V>,
    /// Final hidden state of the last layer's forward direction (batch × H).
    pub final_fwd: V,
    /// Final hidden state of the last layer's backward direction (batch × H).
    pub final_bwd: V,
}

/// Run the stacked bidirectional LSTM over `inputs` (one batch×input matrix
/// per timestep, at least one step).
pub fn lstm_forward<C: OpCtx>(
    ctx: &mut C,
    prefix: &str,
    spec: &LstmSpec,
    inputs: &[C::Val],
) -> LstmOut<C::Val> {
    assert!(!inputs.is_empty(), "lstm_forward: empty input sequence");
    assert!(spec.layers >= 1, "lstm_forward: zero layers");
    let batch = ctx.value(&inputs[0]).rows();

    let mut seq: Vec<C::Val> = inputs.to_vec();
    let mut final_fwd = None;
    let mut final_bwd = None;

    for layer in 0..spec.layers {
        let (fwd_seq, fwd_last) = run_direction(ctx, prefix, spec, layer, "fwd", &seq, batch, false);
        let (bwd_seq, bwd_last) = run_direction(ctx, prefix, spec, layer, "bwd", &seq, batch, true);
        seq = fwd_seq
            .iter()
            .zip(&bwd_seq)
            .map(|(f, b)| ctx.concat_cols(&[f.clone(), b.clone()]))
            .collect();
        final_fwd = Some(fwd_last);
        final_bwd = Some(bwd_last);
    }

    LstmOut {
        per_step: seq,
        final_fwd: final_fwd.expect("layers >= 1"),
        final_bwd: final_bwd.expect("layers >= 1"),
    }
}

/// One direction of one layer. Returns per-step hidden states (in input time
/// order regardless of direction) and the final hidden state.
#[allow(clippy::too_many_arguments)]
fn run_direction<C: OpCtx>(
    ctx: &mut C,
    prefix: &str,
    spec: &LstmSpec,
    layer: usize,
    dir: &str,
    seq: &[C::Val],
    batch: usize,
    reverse: bool,
) -> (Vec<C::Val>, C::Val) {
    let h_dim = spec.hidden;
    let w_ih = ctx.param(&pname(prefix, layer, dir, "w_ih"));
    let w_hh = ctx.param(&pname(prefix, layer, dir, "w_hh"));
    let b = ctx.param(&pname(prefix, layer, dir, "b"));

    let mut h = ctx.constant(crate::numcore::Matrix::zeros(batch, h_dim));
    let mut c = ctx.constant(crate::numcore::Matrix::zeros(batch, h_dim));
    let mut out: Vec<Option<C::Val>> = vec![None; seq.len()];

    let order: Vec<usize> = if reverse {
        (0..seq.len()).rev().collect()
    } else {
        (0..seq.len()).collect()
    };
    for t in order {
        let xw = ctx.matmul(&seq[t], &w_ih);
        let hw = ctx.matmul(&h, &w_hh);
        let z0 = ctx.add(&xw, &hw);
        let z = ctx.add_row(&z0, &b);
        let i_gate = {
            let s = ctx.slice_cols(&z, 0, h_dim);
            ctx.sigmoid(&s)
        };
        let f_gate = {
            let s = ctx.slice_cols(&z, h_dim, 2 * h_dim);
            ctx.sigmoid(&s)
        };
        let g_gate = {
            let s = ctx.slice_cols(&z, 2 * h_dim, 3 * h_dim);
            ctx.tanh(&s)
        };
        let o_gate = {
            let s = ctx.slice_cols(&z, 3 * h_dim, 4 * h_dim);
            ctx.sigmoid(&s)
        };
        let fc = ctx.hadamard(&f_gate, &c);
        let ig = ctx.hadamard(&i_gate, &g_gate);
        c = ctx.add(&fc, &ig);
        let tc = ctx.tanh(&c);
        h = ctx.hadamard(&o_gate, &tc);
        out[t] = Some(h.clone());
    }
    let per_step: Vec<C::Val> = out.into_iter().map(|v| v.expect("all steps visited")).collect();
    (per_step, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{EvalCtx, Matrix, TapeCtx};
    use crate::rngstream::{stream, Purpose};

    fn toy_setup(seed: u64) -> (ParamSet, LstmSpec, Vec<Matrix>) {
        let spec = LstmSpec { input: 3, hidden: 4, layers: 2 };
        let mut ps = ParamSet::new();
        let mut rng = stream(seed, Purpose::ParamInit, 0);
        init_lstm(&mut ps, "enc", &spec, &mut rng);
        let inputs: Vec<Matrix> = (0..5)
            .map(|t| Matrix::from_fn(2, 3, |i, j| ((t + i + j) as f64 * 0.37).sin()))
            .collect();
        (ps, spec, inputs)
    }

    #[test]
    fn tape_and_eval_forward_agree_exactly() {
        let (ps, spec, inputs) = toy_setup(1);

        let mut ectx = EvalCtx::new(&ps);
        let eout = lstm_forward(&mut ectx, "enc", &spec, &inputs);

        let mut tctx = TapeCtx::new(&ps);
        let tin: Vec<_> = inputs.iter().map(|m| tctx.constant(m.clone())).collect();
        let tout = lstm_forward(&mut tctx, "enc", &spec, &tin);

        assert_eq!(eout.final_fwd, *tctx.value(&tout.final_fwd));
        assert_eq!(eout.final_bwd, *tctx.value(&tout.final_bwd));
        for (a, b) in eout.per_step.iter().zip(&tout.per_step) {
            assert_eq!(a, tctx.value(b));
        }
    }

    #[test]
    fn output_shapes() {
        let (ps, spec, inputs) = toy_setup(2);
        let mut ctx = EvalCtx::new(&ps);
        let out = lstm_forward(&mut ctx, "enc", &spec, &inputs);
        assert_eq!(out.per_step.len(), 5);
        assert_eq!(out.per_step[0].shape(), (2, 8));
        assert_eq!(out.final_fwd.shape(), (2, 4));
        assert_eq!(out.final_bwd.shape(), (2, 4));
    }

    #[test]
    fn time_order_sensitivity() {
        // Reversing a non-constant input sequence must change the output.
        let (ps, spec, inputs) = toy_setup(3);
        let mut ctx = EvalCtx::new(&ps);
        let fwd = lstm_forward(&mut ctx, "enc", &spec, &inputs);
        let mut rev_inputs = inputs.clone();
        rev_inputs.reverse();
        let rev = lstm_forward(&mut ctx, "enc", &spec, &rev_inputs);
        assert_ne!(fwd.final_fwd, rev.final_fwd);
    }

    #[test]
    fn single_step_sequence_works() {
        let (ps, spec, inputs) = toy_setup(4);
        let mut ctx = EvalCtx::new(&ps);
        let out = lstm_forward(&mut ctx, "enc", &spec, &inputs[..1]);
        assert_eq!(out.per_step.len(), 1);
    }
}
