//! Dense tensors and a reverse-mode differentiation tape.
//!
//! A [`Tape`] owns every node of one computation graph. Nodes are appended in
//! evaluation order and only ever reference earlier nodes, so the graph is
//! acyclic by construction and reverse insertion order is a valid reverse
//! topological order for [`Tape::backward`].
//!
//! Reductions run sequentially in index order; forward and backward results
//! are bit-reproducible.

use crate::{Error, Result};

/// Row-major `f64` array with an explicit shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&s| s == 0) {
            return Err(Error::contract(format!(
                "tensor shape {shape:?} has a zero dimension"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let len = data.len();
        Self::new(vec![len], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Number of rows of a 2-D tensor (or length of a 1-D one).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Number of columns of a 2-D tensor; 1 for vectors.
    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1..].iter().product()
        } else {
            1
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    /// Index of the largest entry of each row; the first index wins ties.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows()).map(|i| argmax(self.row(i))).collect()
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Row-wise softmax of a `[b, c]` tensor with max subtraction.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let c = logits.cols();
    let mut out = Vec::with_capacity(logits.len());
    for i in 0..logits.rows() {
        softmax_into(logits.row(i), &mut out);
    }
    Tensor {
        shape: vec![logits.rows(), c],
        data: out,
    }
}

fn softmax_into(row: &[f64], out: &mut Vec<f64>) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let start = out.len();
    let mut total = 0.0;
    for &z in row {
        let e = (z - max).exp();
        total += e;
        out.push(e);
    }
    for p in &mut out[start..] {
        *p /= total;
    }
    // log-sum-exp of the row
    max + total.ln()
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise operations accepted by [`Tape::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Relu,
    Scale,
}

/// Right-hand operand of an elementwise operation.
#[derive(Clone, Copy, Debug)]
pub enum Operand {
    Var(Var),
    Scalar(f64),
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddScalar(Var),
    Scale(Var, f64),
    Relu(Var),
    AddBias(Var, Var),
    Sum(Var),
    WeightedSum(Var, Vec<f64>),
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    TargetProbability {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Arena holding one computation graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds an input tensor. Gradients are only tracked when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of the last loss(es) w.r.t. `v`, if any was
    /// propagated to it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        self.nodes[v.0].grad.take()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension {
                op: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_kernel(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(
            Tensor {
                shape: vec![m, n],
                data: out,
            },
            Op::MatMul(a, b),
            rg,
        ))
    }

    pub fn elementwise(&mut self, op: Elementwise, a: Var, b: Operand) -> Result<Var> {
        match (op, b) {
            (Elementwise::Add, Operand::Var(b)) => self.add(a, b),
            (Elementwise::Sub, Operand::Var(b)) => self.sub(a, b),
            (Elementwise::Mul, Operand::Var(b)) => self.mul(a, b),
            (Elementwise::Add, Operand::Scalar(s)) => Ok(self.add_scalar(a, s)),
            (Elementwise::Sub, Operand::Scalar(s)) => Ok(self.add_scalar(a, -s)),
            (Elementwise::Mul | Elementwise::Scale, Operand::Scalar(s)) => Ok(self.scale(a, s)),
            (Elementwise::Relu, _) => Ok(self.relu(a)),
            (Elementwise::Scale, Operand::Var(_)) => Err(Error::contract(
                "scale takes a scalar operand; use mul for tensor operands",
            )),
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Dimension {
                op: name,
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = ta.shape().to_vec();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor { shape, data }, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let value = Tensor {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|&x| f(x)).collect(),
        };
        let rg = self.any_grad(&[a]);
        self.push(value, op, rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x + s, Op::AddScalar(a))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    /// `max(x, 0)`; the subgradient at exactly 0 is 0.
    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    /// Adds a length-`n` bias to every row of an `[m,n]` tensor.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        if ta.shape().len() != 2 || tb.len() != ta.shape()[1] {
            return Err(Error::Dimension {
                op: "add_bias",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let n = ta.shape()[1];
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + tb.data()[i % n])
            .collect();
        let shape = ta.shape().to_vec();
        let rg = self.any_grad(&[a, bias]);
        Ok(self.push(Tensor { shape, data }, Op::AddBias(a, bias), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().sum();
        let rg = self.any_grad(&[a]);
        self.push(Tensor::scalar(total), Op::Sum(a), rg)
    }

    /// `sum_i weights[i] * a[i]` as a scalar.
    pub fn weighted_sum(&mut self, a: Var, weights: Vec<f64>) -> Result<Var> {
        let t = self.value(a);
        if t.len() != weights.len() {
            return Err(Error::Dimension {
                op: "weighted_sum",
                left: t.shape().to_vec(),
                right: vec![weights.len()],
            });
        }
        let total = t.data().iter().zip(&weights).map(|(x, w)| x * w).sum();
        let rg = self.any_grad(&[a]);
        Ok(self.push(Tensor::scalar(total), Op::WeightedSum(a, weights), rg))
    }

    /// Arithmetic mean over all entries.
    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Per-example softmax cross-entropy of `[b,c]` logits: returns a `[b]` node.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (probs, lse) = self.softmax_checked("softmax_cross_entropy", logits, labels)?;
        let t = self.value(logits);
        let losses: Vec<f64> = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| lse[i] - t.row(i)[y])
            .collect();
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            Tensor {
                shape: vec![labels.len()],
                data: losses,
            },
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Per-example softmax probability of the labelled class: a `[b]` node.
    pub fn target_probability(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (probs, _) = self.softmax_checked("target_probability", logits, labels)?;
        let c = self.value(logits).cols();
        let out: Vec<f64> = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| probs[i * c + y])
            .collect();
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            Tensor {
                shape: vec![labels.len()],
                data: out,
            },
            Op::TargetProbability {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    fn softmax_checked(
        &self,
        op: &'static str,
        logits: Var,
        labels: &[usize],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let t = self.value(logits);
        if t.shape().len() != 2 || t.rows() != labels.len() {
            return Err(Error::Dimension {
                op,
                left: t.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        let c = t.cols();
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &y)| y >= c) {
            return Err(Error::Label {
                index,
                label,
                classes: c,
            });
        }
        let mut probs = Vec::with_capacity(t.len());
        let lse = (0..t.rows())
            .map(|i| softmax_into(t.row(i), &mut probs))
            .collect();
        Ok((probs, lse))
    }

    /// Propagates d(loss)/d(node) to every reachable node that requires a
    /// gradient. Gradients accumulate across calls until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut adjoint: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        adjoint[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(upstream) = adjoint[i].take() else {
                continue;
            };
            self.propagate(i, &upstream, &mut adjoint);
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(g) => g.data.iter_mut().zip(&upstream).for_each(|(a, b)| *a += b),
                None => {
                    node.grad = Some(Tensor {
                        shape: node.value.shape.clone(),
                        data: upstream,
                    })
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, up: &[f64], adjoint: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].requires_grad;
        let mut send = |v: Var, g: Vec<f64>| match &mut adjoint[v.0] {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        };

        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[1]);
                if wants(*a) {
                    send(*a, matmul_a_bt(up, tb.data(), m, n, k));
                }
                if wants(*b) {
                    send(*b, matmul_at_b(ta.data(), up, m, k, n));
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    send(*a, up.to_vec());
                }
                if wants(*b) {
                    send(*b, up.to_vec());
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    send(*a, up.to_vec());
                }
                if wants(*b) {
                    send(*b, up.iter().map(|g| -g).collect());
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                if wants(*a) {
                    send(*a, up.iter().zip(tb.data()).map(|(g, y)| g * y).collect());
                }
                if wants(*b) {
                    send(*b, up.iter().zip(ta.data()).map(|(g, x)| g * x).collect());
                }
            }
            Op::AddScalar(a) => send(*a, up.to_vec()),
            Op::Scale(a, s) => send(*a, up.iter().map(|g| g * s).collect()),
            Op::Relu(a) => {
                let x = nodes[a.0].value.data();
                send(
                    *a,
                    up.iter()
                        .zip(x)
                        .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                        .collect(),
                );
            }
            Op::AddBias(a, bias) => {
                if wants(*a) {
                    send(*a, up.to_vec());
                }
                if wants(*bias) {
                    let n = nodes[bias.0].value.len();
                    let mut gb = vec![0.0; n];
                    for row in up.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(acc, g)| *acc += g);
                    }
                    send(*bias, gb);
                }
            }
            Op::Sum(a) => send(*a, vec![up[0]; nodes[a.0].value.len()]),
            Op::WeightedSum(a, w) => send(*a, w.iter().map(|w| w * up[0]).collect()),
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let c = nodes[logits.0].value.cols();
                let mut g = probs.clone();
                for (r, &y) in labels.iter().enumerate() {
                    g[r * c + y] -= 1.0;
                    g[r * c..(r + 1) * c].iter_mut().for_each(|v| *v *= up[r]);
                }
                send(*logits, g);
            }
            Op::TargetProbability {
                logits,
                labels,
                probs,
            } => {
                let c = nodes[logits.0].value.cols();
                let mut g = vec![0.0; probs.len()];
                for (r, &y) in labels.iter().enumerate() {
                    let row = &probs[r * c..(r + 1) * c];
                    let py = row[y];
                    for j in 0..c {
                        let indicator = if j == y { 1.0 } else { 0.0 };
                        g[r * c + j] = up[r] * py * (indicator - row[j]);
                    }
                }
                send(*logits, g);
            }
        }
    }
}

fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            row.iter_mut().zip(brow).for_each(|(o, &bv)| *o += aip * bv);
        }
    }
    out
}

/// `up[m,n] x b^T` where `b` is `[k,n]`.
fn matmul_a_bt(up: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let urow = &up[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] = urow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `a^T x up` where `a` is `[m,k]` and `up` is `[m,n]`.
fn matmul_at_b(a: &[f64], up: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let urow = &up[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            out[p * n..(p + 1) * n]
                .iter_mut()
                .zip(urow)
                .for_each(|(o, &g)| *o += aip * g);
        }
    }
    out
}
