//! Evaluation contexts: the same network code runs in training mode (values
//! recorded on a [`Tape`] for backward) and inference mode (plain matrices,
//! no recording) by being generic over [`OpCtx`].

use std::collections::HashMap;

use crate::error::CoreError;
use crate::numcore::matrix::Matrix;
use crate::numcore::params::ParamSet;
use crate::numcore::tape::{NodeId, Tape};

/// The operation set networks are written against.
pub trait OpCtx {
    type Val: Clone;

    /// Fetch a named parameter block from the backing [`ParamSet`].
    fn param(&mut self, name: &str) -> Self::Val;
    /// Introduce a non-parameter input.
    fn constant(&mut self, m: Matrix) -> Self::Val;

    fn matmul(&mut self, a: &Self::Val, b: &Self::Val) -> Self::Val;
    fn add(&mut self, a: &Self::Val, b: &Self::Val) -> Self::Val;
    fn sub(&mut self, a: &Self::Val, b: &Self::Val) -> Self::Val;
    fn hadamard(&mut self, a: &Self::Val, b: &Self::Val) -> Self::Val;
    fn scale(&mut self, a: &Self::Val, c: f64) -> Self::Val;
    fn tanh(&mut self, a: &Self::Val) -> Self::Val;
    fn sigmoid(&mut self, a: &Self::Val) -> Self::Val;
    fn silu(&mut self, a: &Self::Val) -> Self::Val;
    fn add_row(&mut self, x: &Self::Val, bias: &Self::Val) -> Self::Val;
    fn concat_cols(&mut self, parts: &[Self::Val]) -> Self::Val;
    fn slice_cols(&mut self, a: &Self::Val, c0: usize, c1: usize) -> Self::Val;
    fn mean_square(&mut self, a: &Self::Val) -> Self::Val;
    fn sum(&mut self, a: &Self::Val) -> Self::Val;

    fn value<'v>(&'v self, v: &'v Self::Val) -> &'v Matrix;
}

/// Training context: records every operation on a tape; parameter fetches
/// become (deduplicated) leaves so gradients accumulate across reuse.
pub struct TapeCtx<'p> {
    pub tape: Tape,
    params: &'p ParamSet,
    param_ids: HashMap<String, NodeId>,
}

impl<'p> TapeCtx<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        TapeCtx { tape: Tape::new(), params, param_ids: HashMap::new() }
    }

    /// Run backward from `loss` and collect gradients per parameter name.
    /// Parameters never touched by the forward pass get no entry (gradient 0).
    pub fn grads(&self, loss: NodeId) -> Result<HashMap<String, Matrix>, CoreError> {
        let mut adj = self.tape.backward(loss)?;
        let mut out = HashMap::with_capacity(self.param_ids.len());
        for (name, &id) in &self.param_ids {
            if let Some(g) = adj[id.idx()].take() {
                out.insert(name.clone(), g);
            }
        }
        Ok(out)
    }
}

impl OpCtx for TapeCtx<'_> {
    type Val = NodeId;

    fn param(&mut self, name: &str) -> NodeId {
        if let Some(&id) = self.param_ids.get(name) {
            return id;
        }
        let id = self.tape.leaf(self.params.get(name).clone());
        self.param_ids.insert(name.to_string(), id);
        id
    }

    fn constant(&mut self, m: Matrix) -> NodeId {
        self.tape.leaf(m)
    }

    fn matmul(&mut self, a: &NodeId, b: &NodeId) -> NodeId {
        self.tape.matmul(*a, *b)
    }

    fn add(&mut self, a: &NodeId, b: &NodeId) -> NodeId {
        self.tape.add(*a, *b)
    }

    fn sub(&mut self, a: &NodeId, b: &NodeId) -> NodeId {
        self.tape.sub(*a, *b)
    }

    fn hadamard(&mut self, a: &NodeId, b: &NodeId) -> NodeId {
        self.tape.hadamard(*a, *b)
    }

    fn scale(&mut self, a: &NodeId, c: f64) -> NodeId {
        self.tape.scale(*a, c)
    }

    fn tanh(&mut self, a: &NodeId) -> NodeId {
        self.tape.tanh(*a)
    }

    fn sigmoid(&mut self, a: &NodeId) -> NodeId {
        self.tape.sigmoid(*a)
    }

    fn silu(&mut self, a: &NodeId) -> NodeId {
        self.tape.silu(*a)
    }

    fn add_row(&mut self, x: &NodeId, bias: &NodeId) -> NodeId {
        self.tape.add_row(*x, *bias)
    }

    fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        self.tape.concat_cols(parts)
    }

    fn slice_cols(&mut self, a: &NodeId, c0: usize, c1: usize) -> NodeId {
        self.tape.slice_cols(*a, c0, c1)
    }

    fn mean_square(&mut self, a: &NodeId) -> NodeId {
        self.tape.mean_square(*a)
    }

    fn sum(&mut self, a: &NodeId) -> NodeId {
        self.tape.sum(*a)
    }

    fn value<'v>(&'v self, v: &'v NodeId) -> &'v Matrix {
        self.tape.value(*v)
    }
}

/// Inference context: plain matrix evaluation, nothing recorded.
pub struct EvalCtx<'p> {
    params: &'p ParamSet,
}

impl<'p> EvalCtx<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        EvalCtx { params }
    }
}

impl OpCtx for EvalCtx<'_> {
    type Val = Matrix;

    fn param(&mut self, name: &str) -> Matrix {
        self.params.get(name).clone()
    }

    fn constant(&mut self, m: Matrix) -> Matrix {
        m
    }

    fn matmul(&mut self, a: &Matrix, b: &Matrix) -> Matrix {
        a.matmul(b)
    }

    fn add(&mut self, a: &Matrix, b: &Matrix) -> Matrix {
        a.add(b)
    }

    fn sub(&mut self, a: &Matrix, b: &Matrix) -> Matrix {
        a.sub(b)
    }

    fn hadamard(&mut self, a: &Matrix, b: &Matrix) -> Matrix {
        a.hadamard(b)
    }

    fn scale(&mut self, a: &Matrix, c: f64) -> Matrix {
        a.scale(c)
    }

    fn tanh(&mut self, a: &Matrix) -> Matrix {
        a.map(f64::tanh)
    }

    fn sigmoid(&mut self, a: &Matrix) -> Matrix {
        a.map(|x| 1.0 / (1.0 + (-x).exp()))
    }

    fn silu(&mut self, a: &Matrix) -> Matrix {
        a.map(|x| x / (1.0 + (-x).exp()))
    }

    fn add_row(&mut self, x: &Matrix, bias: &Matrix) -> Matrix {
        x.add_row(bias)
    }

    fn concat_cols(&mut self, parts: &[Matrix]) -> Matrix {
        let refs: Vec<&Matrix> = parts.iter().collect();
        Matrix::concat_cols(&refs)
    }

    fn slice_cols(&mut self, a: &Matrix, c0: usize, c1: usize) -> Matrix {
        a.slice_cols(c0, c1)
    }

    fn mean_square(&mut self, a: &Matrix) -> Matrix {
        a.mean_square()
    }

    fn sum(&mut self, a: &Matrix) -> Matrix {
        a.sum()
    }

    fn value<'v>(&'v self, v: &'v Matrix) -> &'v Matrix {
        v
    }
}
