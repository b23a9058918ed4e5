//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Forward values are computed eagerly as nodes are pushed; `backward`
//! replays the tape in reverse, accumulating adjoints. Node ids are plain
//! indices, and every operand of a node necessarily precedes it, so the
//! reverse scan is a valid topological order.
//!
//! The op set is exactly what the model needs: dense matrix-vector
//! products, elementwise arithmetic, the LSTM nonlinearities, a fused
//! log-softmax lookup for the mark likelihood, and a fused log-density node
//! for the waiting-time likelihood (whose analytic partials live in
//! `tpp::exp_affine`, next to the forward formula).

use crate::error::{Error, Result};
use crate::neural::tensor::Tensor;
use crate::tpp::exp_affine;

pub type NodeId = usize;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    /// y = W x with W row-major of width x.len().
    MatVec { w: NodeId, x: NodeId },
    /// y = row `index` of a row-major matrix of width value.len().
    Row { w: NodeId, index: usize },
    Add { a: NodeId, b: NodeId },
    Hadamard { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: f64 },
    Neg { x: NodeId },
    Sigmoid { x: NodeId },
    Tanh { x: NodeId },
    Slice { x: NodeId, start: usize },
    Dot { a: NodeId, b: NodeId },
    /// Sum of scalar nodes.
    Sum { xs: Vec<NodeId> },
    /// logits[index] - logsumexp(logits); the log-probability of one class.
    LogSoftmaxPick { logits: NodeId, index: usize },
    /// Log-density of the exponential-affine waiting-time model at a fixed
    /// observed gap, as a function of the (s, u) scalar nodes.
    TppLogDensity { s: NodeId, u: NodeId, gap: f64 },
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Constant => "constant",
        Op::MatVec { .. } => "matvec",
        Op::Row { .. } => "row",
        Op::Add { .. } => "add",
        Op::Hadamard { .. } => "hadamard",
        Op::Scale { .. } => "scale",
        Op::Neg { .. } => "neg",
        Op::Sigmoid { .. } => "sigmoid",
        Op::Tanh { .. } => "tanh",
        Op::Slice { .. } => "slice",
        Op::Dot { .. } => "dot",
        Op::Sum { .. } => "sum",
        Op::LogSoftmaxPick { .. } => "log_softmax_pick",
        Op::TppLogDensity { .. } => "tpp_log_density",
    }
}

struct Node {
    op: Op,
    value: Vec<f64>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].value
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id].value.len(), 1);
        self.nodes[id].value[0]
    }

    fn push(&mut self, op: Op, value: Vec<f64>) -> NodeId {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    /// A differentiable input; gradients accumulate here.
    pub fn leaf(&mut self, t: &Tensor) -> NodeId {
        self.push(Op::Leaf, t.data().to_vec())
    }

    /// A non-differentiable input (data, frozen activations).
    pub fn constant(&mut self, v: Vec<f64>) -> NodeId {
        self.push(Op::Constant, v)
    }

    pub fn constant_scalar(&mut self, v: f64) -> NodeId {
        self.push(Op::Constant, vec![v])
    }

    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> NodeId {
        let n = self.nodes[x].value.len();
        let wv = &self.nodes[w].value;
        debug_assert!(n > 0 && wv.len() % n == 0, "matvec: bad shapes");
        let m = wv.len() / n;
        let xv = &self.nodes[x].value;
        let mut y = vec![0.0; m];
        for i in 0..m {
            y[i] = wv[i * n..(i + 1) * n]
                .iter()
                .zip(xv)
                .map(|(a, b)| a * b)
                .sum();
        }
        self.push(Op::MatVec { w, x }, y)
    }

    /// Row `index` of a matrix node with `cols` columns.
    pub fn row(&mut self, w: NodeId, index: usize, cols: usize) -> NodeId {
        let wv = &self.nodes[w].value;
        debug_assert!(wv.len() % cols == 0 && (index + 1) * cols <= wv.len());
        let y = wv[index * cols..(index + 1) * cols].to_vec();
        self.push(Op::Row { w, index }, y)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
        debug_assert_eq!(av.len(), bv.len(), "add: length mismatch");
        let y = av.iter().zip(bv).map(|(x, y)| x + y).collect();
        self.push(Op::Add { a, b }, y)
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
        debug_assert_eq!(av.len(), bv.len(), "hadamard: length mismatch");
        let y = av.iter().zip(bv).map(|(x, y)| x * y).collect();
        self.push(Op::Hadamard { a, b }, y)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let y = self.nodes[x].value.iter().map(|v| v * c).collect();
        self.push(Op::Scale { x, c }, y)
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        let y = self.nodes[x].value.iter().map(|v| -v).collect();
        self.push(Op::Neg { x }, y)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let y = self.nodes[x].value.iter().map(|&v| sigmoid(v)).collect();
        self.push(Op::Sigmoid { x }, y)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let y = self.nodes[x].value.iter().map(|v| v.tanh()).collect();
        self.push(Op::Tanh { x }, y)
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let xv = &self.nodes[x].value;
        debug_assert!(start + len <= xv.len(), "slice out of bounds");
        let y = xv[start..start + len].to_vec();
        self.push(Op::Slice { x, start }, y)
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
        debug_assert_eq!(av.len(), bv.len(), "dot: length mismatch");
        let y = av.iter().zip(bv).map(|(x, y)| x * y).sum();
        self.push(Op::Dot { a, b }, vec![y])
    }

    pub fn sum(&mut self, xs: Vec<NodeId>) -> NodeId {
        let mut acc = 0.0;
        for &x in &xs {
            debug_assert_eq!(self.nodes[x].value.len(), 1, "sum: non-scalar term");
            acc += self.nodes[x].value[0];
        }
        self.push(Op::Sum { xs }, vec![acc])
    }

    pub fn log_softmax_pick(&mut self, logits: NodeId, index: usize) -> NodeId {
        let lv = &self.nodes[logits].value;
        debug_assert!(index < lv.len(), "log_softmax_pick: index out of range");
        let max = lv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + lv.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let y = lv[index] - lse;
        self.push(Op::LogSoftmaxPick { logits, index }, vec![y])
    }

    pub fn tpp_log_density(&mut self, s: NodeId, u: NodeId, gap: f64) -> NodeId {
        debug_assert_eq!(self.nodes[s].value.len(), 1);
        debug_assert_eq!(self.nodes[u].value.len(), 1);
        debug_assert!(gap >= 0.0, "tpp_log_density: negative gap");
        let sv = self.nodes[s].value[0];
        let uv = self.nodes[u].value[0];
        let (y, _, _) = exp_affine::log_density_with_grads(sv, uv, gap);
        self.push(Op::TppLogDensity { s, u, gap }, vec![y])
    }

    fn first_nonfinite(&self) -> Option<(NodeId, &'static str)> {
        self.nodes.iter().enumerate().find_map(|(i, n)| {
            if n.value.iter().any(|v| !v.is_finite()) {
                Some((i, op_name(&n.op)))
            } else {
                None
            }
        })
    }

    /// Adjoints of every node with respect to a scalar loss node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let node = self
            .nodes
            .get(loss)
            .ok_or_else(|| Error::Contract(format!("backward: no node {loss}")))?;
        if node.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward: loss node {loss} has {} elements, expected a scalar",
                node.value.len()
            )));
        }
        if !node.value[0].is_finite() {
            let blame = self
                .first_nonfinite()
                .map(|(id, op)| format!("first non-finite value at node {id} ({op})"))
                .unwrap_or_else(|| "no non-finite intermediate found".into());
            return Err(Error::Numeric(format!(
                "backward: loss is {}; {blame}",
                node.value[0]
            )));
        }

        let mut grads: Vec<Vec<f64>> =
            self.nodes.iter().map(|n| vec![0.0; n.value.len()]).collect();
        grads[loss][0] = 1.0;

        for i in (0..self.nodes.len()).rev() {
            let (before, rest) = grads.split_at_mut(i);
            let g: &[f64] = &rest[0];
            match &self.nodes[i].op {
                Op::Leaf | Op::Constant => {}
                Op::MatVec { w, x } => {
                    let xv = &self.nodes[*x].value;
                    let wv = &self.nodes[*w].value;
                    let n = xv.len();
                    // Accumulate into one operand at a time; w == x never
                    // occurs (a matrix is not its own input vector), but
                    // split borrows still demand sequential access.
                    for (ii, &gi) in g.iter().enumerate() {
                        let dw = &mut before[*w][ii * n..(ii + 1) * n];
                        for (j, d) in dw.iter_mut().enumerate() {
                            *d += gi * xv[j];
                        }
                    }
                    let dx = &mut before[*x];
                    for (ii, &gi) in g.iter().enumerate() {
                        let row = &wv[ii * n..(ii + 1) * n];
                        for (j, d) in dx.iter_mut().enumerate() {
                            *d += gi * row[j];
                        }
                    }
                }
                Op::Row { w, index } => {
                    let cols = g.len();
                    let dw = &mut before[*w][index * cols..(index + 1) * cols];
                    for (d, &gi) in dw.iter_mut().zip(g) {
                        *d += gi;
                    }
                }
                Op::Add { a, b } => {
                    for (d, &gi) in before[*a].iter_mut().zip(g) {
                        *d += gi;
                    }
                    for (d, &gi) in before[*b].iter_mut().zip(g) {
                        *d += gi;
                    }
                }
                Op::Hadamard { a, b } => {
                    let bv = &self.nodes[*b].value;
                    for ((d, &gi), bi) in before[*a].iter_mut().zip(g).zip(bv) {
                        *d += gi * bi;
                    }
                    let av = &self.nodes[*a].value;
                    for ((d, &gi), ai) in before[*b].iter_mut().zip(g).zip(av) {
                        *d += gi * ai;
                    }
                }
                Op::Scale { x, c } => {
                    for (d, &gi) in before[*x].iter_mut().zip(g) {
                        *d += gi * c;
                    }
                }
                Op::Neg { x } => {
                    for (d, &gi) in before[*x].iter_mut().zip(g) {
                        *d -= gi;
                    }
                }
                Op::Sigmoid { x } => {
                    let yv = &self.nodes[i].value;
                    for ((d, &gi), &y) in before[*x].iter_mut().zip(g).zip(yv) {
                        *d += gi * y * (1.0 - y);
                    }
                }
                Op::Tanh { x } => {
                    let yv = &self.nodes[i].value;
                    for ((d, &gi), &y) in before[*x].iter_mut().zip(g).zip(yv) {
                        *d += gi * (1.0 - y * y);
                    }
                }
                Op::Slice { x, start } => {
                    let dx = &mut before[*x][*start..*start + g.len()];
                    for (d, &gi) in dx.iter_mut().zip(g) {
                        *d += gi;
                    }
                }
                Op::Dot { a, b } => {
                    // Two sequential accumulations also cover a == b, where
                    // they combine to the correct 2 * g * a.
                    let gi = g[0];
                    let bv = &self.nodes[*b].value;
                    for (d, bi) in before[*a].iter_mut().zip(bv) {
                        *d += gi * bi;
                    }
                    let av = &self.nodes[*a].value;
                    for (d, ai) in before[*b].iter_mut().zip(av) {
                        *d += gi * ai;
                    }
                }
                Op::Sum { xs } => {
                    let gi = g[0];
                    for &x in xs {
                        before[x][0] += gi;
                    }
                }
                Op::LogSoftmaxPick { logits, index } => {
                    let gi = g[0];
                    let lv = &self.nodes[*logits].value;
                    let max = lv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let denom: f64 = lv.iter().map(|v| (v - max).exp()).sum();
                    let dl = &mut before[*logits];
                    for (j, d) in dl.iter_mut().enumerate() {
                        let p = (lv[j] - max).exp() / denom;
                        let indicator = if j == *index { 1.0 } else { 0.0 };
                        *d += gi * (indicator - p);
                    }
                }
                Op::TppLogDensity { s, u, gap } => {
                    let gi = g[0];
                    let sv = self.nodes[*s].value[0];
                    let uv = self.nodes[*u].value[0];
                    let (_, ds, du) = exp_affine::log_density_with_grads(sv, uv, *gap);
                    before[*s][0] += gi * ds;
                    before[*u][0] += gi * du;
                }
            }
        }
        Ok(Gradients { grads })
    }
}

#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> &[f64] {
        &self.grads[id]
    }

    pub fn take(&mut self, id: NodeId) -> Vec<f64> {
        std::mem::take(&mut self.grads[id])
    }
}
