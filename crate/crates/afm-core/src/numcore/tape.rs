//! Reverse-mode gradient tape over a fixed operation set.
//!
//! Operations evaluate eagerly: every call computes the output value with the
//! dense kernels and records the node, so the tape always holds the exact
//! values replaying it would produce. `backward` walks the record once in
//! reverse, accumulating adjoints; nodes not on a path to the loss keep a
//! `None` adjoint (exactly zero).

use crate::error::CoreError;
use crate::numcore::matrix::Matrix;

/// Index of a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(u32);

impl NodeId {
    pub(crate) fn idx(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Hadamard(NodeId, NodeId),
    Scale(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Silu(NodeId),
    AddRow(NodeId, NodeId),
    ConcatCols(Vec<NodeId>),
    SliceCols(NodeId, usize, usize),
    MeanSquare(NodeId),
    Sum(NodeId),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Gradient tape. Single-threaded; one loss backward per forward record.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.idx()].value
    }

    fn push(&mut self, value: Matrix, op: Op) -> NodeId {
        let id = NodeId(u32::try_from(self.nodes.len()).expect("tape overflow"));
        self.nodes.push(Node { value, op });
        id
    }

    pub fn leaf(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).add(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).sub(self.value(b));
        self.push(v, Op::Sub(a, b))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).hadamard(self.value(b));
        self.push(v, Op::Hadamard(a, b))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).scale(c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn silu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x * sigmoid(x));
        self.push(v, Op::Silu(a))
    }

    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        let v = self.value(x).add_row(self.value(bias));
        self.push(v, Op::AddRow(x, bias))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let values: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Matrix::concat_cols(&values);
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: NodeId, c0: usize, c1: usize) -> NodeId {
        let v = self.value(a).slice_cols(c0, c1);
        self.push(v, Op::SliceCols(a, c0, c1))
    }

    pub fn mean_square(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mean_square();
        self.push(v, Op::MeanSquare(a))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).sum();
        self.push(v, Op::Sum(a))
    }

    /// Reverse sweep from a scalar loss node. Returns one adjoint slot per
    /// node; `None` means the node does not influence the loss (gradient 0).
    pub fn backward(&self, loss: NodeId) -> Result<Vec<Option<Matrix>>, CoreError> {
        let (r, c) = self.value(loss).shape();
        if (r, c) != (1, 1) {
            return Err(CoreError::NonScalarLoss { rows: r, cols: c });
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        adj[loss.idx()] = Some(Matrix::from_vec(1, 1, vec![1.0]));

        for idx in (0..=loss.idx()).rev() {
            let Some(g) = adj[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.matmul_a_bt(self.value(*b));
                    let gb = self.value(*a).matmul_at_b(&g);
                    accum(&mut adj, *a, ga);
                    accum(&mut adj, *b, gb);
                }
                Op::Add(a, b) => {
                    accum_scaled(&mut adj, *a, 1.0, &g);
                    accum_scaled(&mut adj, *b, 1.0, &g);
                }
                Op::Sub(a, b) => {
                    accum_scaled(&mut adj, *a, 1.0, &g);
                    accum_scaled(&mut adj, *b, -1.0, &g);
                }
                Op::Hadamard(a, b) => {
                    let ga = g.hadamard(self.value(*b));
                    let gb = g.hadamard(self.value(*a));
                    accum(&mut adj, *a, ga);
                    accum(&mut adj, *b, gb);
                }
                Op::Scale(a, c) => accum_scaled(&mut adj, *a, *c, &g),
                Op::Tanh(a) => {
                    let y = &self.nodes[idx].value;
                    let ga = g.hadamard(&y.map(|t| 1.0 - t * t));
                    accum(&mut adj, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[idx].value;
                    let ga = g.hadamard(&y.map(|s| s * (1.0 - s)));
                    accum(&mut adj, *a, ga);
                }
                Op::Silu(a) => {
                    let x = self.value(*a);
                    let ga = g.hadamard(&x.map(|x| {
                        let s = sigmoid(x);
                        s * (1.0 + x * (1.0 - s))
                    }));
                    accum(&mut adj, *a, ga);
                }
                Op::AddRow(x, bias) => {
                    accum_scaled(&mut adj, *x, 1.0, &g);
                    accum(&mut adj, *bias, g.sum_rows());
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        accum(&mut adj, p, g.slice_cols(off, off + w));
                        off += w;
                    }
                }
                Op::SliceCols(a, c0, _c1) => {
                    let (rows, cols) = self.value(*a).shape();
                    let mut ga = Matrix::zeros(rows, cols);
                    for i in 0..rows {
                        ga.row_mut(i)[*c0..*c0 + g.cols()].copy_from_slice(g.row(i));
                    }
                    accum(&mut adj, *a, ga);
                }
                Op::MeanSquare(a) => {
                    let x = self.value(*a);
                    let c = 2.0 * g.scalar() / (x.rows() * x.cols()) as f64;
                    accum(&mut adj, *a, x.scale(c));
                }
                Op::Sum(a) => {
                    let (rows, cols) = self.value(*a).shape();
                    let gs = g.scalar();
                    accum(&mut adj, *a, Matrix::from_fn(rows, cols, |_, _| gs));
                }
            }
            adj[idx] = Some(g);
        }
        Ok(adj)
    }

    /// Recompute every non-leaf value from its inputs and compare bit-for-bit.
    /// Test hook for the record-replay invariant.
    pub fn replay_matches(&self) -> bool {
        for node in &self.nodes {
            let recomputed = match &node.op {
                Op::Leaf => continue,
                Op::MatMul(a, b) => self.value(*a).matmul(self.value(*b)),
                Op::Add(a, b) => self.value(*a).add(self.value(*b)),
                Op::Sub(a, b) => self.value(*a).sub(self.value(*b)),
                Op::Hadamard(a, b) => self.value(*a).hadamard(self.value(*b)),
                Op::Scale(a, c) => self.value(*a).scale(*c),
                Op::Tanh(a) => self.value(*a).map(f64::tanh),
                Op::Sigmoid(a) => self.value(*a).map(sigmoid),
                Op::Silu(a) => self.value(*a).map(|x| x * sigmoid(x)),
                Op::AddRow(x, b) => self.value(*x).add_row(self.value(*b)),
                Op::ConcatCols(parts) => {
                    let values: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
                    Matrix::concat_cols(&values)
                }
                Op::SliceCols(a, c0, c1) => self.value(*a).slice_cols(*c0, *c1),
                Op::MeanSquare(a) => self.value(*a).mean_square(),
                Op::Sum(a) => self.value(*a).sum(),
            };
            if recomputed != node.value {
                return false;
            }
        }
        true
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn accum(adj: &mut [Option<Matrix>], id: NodeId, delta: Matrix) {
    match &mut adj[id.idx()] {
        Some(a) => a.axpy(1.0, &delta),
        slot => *slot = Some(delta),
    }
}

fn accum_scaled(adj: &mut [Option<Matrix>], id: NodeId, c: f64, g: &Matrix) {
    match &mut adj[id.idx()] {
        Some(a) => a.axpy(c, g),
        slot => *slot = Some(if c == 1.0 { g.clone() } else { g.scale(c) }),
    }
}
