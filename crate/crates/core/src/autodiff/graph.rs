use std::collections::BTreeMap;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Lower clamp applied to probabilities before taking logarithms.
pub const PROB_EPS: f64 = 1e-7;

/// Handle to a node in a [`Graph`]. Only meaningful for the graph that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Value(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Value, Value),
    Add(Value, Value),
    AddBias(Value, Value),
    Mul(Value, Value),
    Scale(Value, f64),
    Tanh(Value),
    Sigmoid(Value),
    Sum(Value),
    Gather(Value, Vec<usize>),
    Concat(Vec<Value>),
    Max(Value, usize),
    WeightedBce {
        p: Value,
        targets: Vec<f64>,
        w_pos: f64,
        w_neg: f64,
    },
    SmoothL1 {
        pred: Value,
        target: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    data: Tensor,
    grad: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode autodiff graph. Nodes are appended in creation order, so the
/// node list is already a topological order and backward walks it in reverse.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, Value>,
}

/// Gradients keyed by parameter name.
pub type Gradients = BTreeMap<String, Tensor>;

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    sigmoid_scalar(x)
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, data: Tensor, op: Op, requires_grad: bool) -> Value {
        let grad = Tensor::zeros(data.rows(), data.cols());
        self.nodes.push(Node {
            data,
            grad,
            op,
            requires_grad,
        });
        Value(self.nodes.len() - 1)
    }

    fn rg(&self, v: Value) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, data: Tensor) -> Value {
        self.push(data, Op::Leaf, false)
    }

    /// Free leaf that accumulates a gradient (used by tests and finite-difference checks).
    pub fn variable(&mut self, data: Tensor) -> Value {
        self.push(data, Op::Leaf, true)
    }

    /// Binds a named parameter from `store`. Binding the same name twice returns the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Value> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let data = store
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))?
            .clone();
        let v = self.push(data, Op::Leaf, true);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn data(&self, v: Value) -> &Tensor {
        &self.nodes[v.0].data
    }

    pub fn grad(&self, v: Value) -> &Tensor {
        &self.nodes[v.0].grad
    }

    /// Scalar value of a `1×1` node.
    pub fn item(&self, v: Value) -> f64 {
        self.nodes[v.0].data.item()
    }

    pub fn matmul(&mut self, a: Value, b: Value) -> Result<Value> {
        let (da, db) = (self.data(a), self.data(b));
        if da.cols() != db.rows() {
            return Err(Error::dim(
                "matmul",
                format!("{:?} · {:?}", da.shape(), db.shape()),
            ));
        }
        let out = da.matmul(db);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Value, b: Value) -> Result<Value> {
        let (da, db) = (self.data(a), self.data(b));
        if da.shape() != db.shape() {
            return Err(Error::dim(
                "add",
                format!("{:?} + {:?}", da.shape(), db.shape()),
            ));
        }
        let mut out = da.clone();
        out.add_assign(db);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Adds a `1×n` row vector to every row of an `m×n` matrix.
    pub fn add_bias(&mut self, a: Value, bias: Value) -> Result<Value> {
        let (da, db) = (self.data(a), self.data(bias));
        if db.rows() != 1 || db.cols() != da.cols() {
            return Err(Error::dim(
                "add_bias",
                format!("{:?} + row {:?}", da.shape(), db.shape()),
            ));
        }
        let mut out = da.clone();
        let n = da.cols();
        for (i, x) in out.data_mut().iter_mut().enumerate() {
            *x += db.data()[i % n];
        }
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(out, Op::AddBias(a, bias), rg))
    }

    pub fn mul(&mut self, a: Value, b: Value) -> Result<Value> {
        let (da, db) = (self.data(a), self.data(b));
        if da.shape() != db.shape() {
            return Err(Error::dim(
                "mul",
                format!("{:?} * {:?}", da.shape(), db.shape()),
            ));
        }
        let out = Tensor::from_vec(
            da.rows(),
            da.cols(),
            da.data()
                .iter()
                .zip(db.data())
                .map(|(x, y)| x * y)
                .collect(),
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Value, c: f64) -> Value {
        let out = self.data(a).map(|x| c * x);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn tanh(&mut self, a: Value) -> Value {
        let out = self.data(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    /// Elementwise logistic function, evaluated without overflow for any input.
    pub fn sigmoid(&mut self, a: Value) -> Value {
        let out = self.data(a).map(sigmoid_scalar);
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn sum(&mut self, a: Value) -> Value {
        let s = self.data(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Value) -> Result<Value> {
        let n = self.data(a).len();
        if n == 0 {
            return Err(Error::EmptyReduction("mean"));
        }
        let s = self.sum(a);
        Ok(self.scale(s, 1.0 / n as f64))
    }

    /// Picks whole rows of `a` (in the given order) into a new matrix.
    pub fn select_rows(&mut self, a: Value, rows: &[usize]) -> Result<Value> {
        let da = self.data(a);
        let cols = da.cols();
        if let Some(&bad) = rows.iter().find(|&&r| r >= da.rows()) {
            return Err(Error::dim(
                "select_rows",
                format!("row {bad} out of range for {:?}", da.shape()),
            ));
        }
        let idx: Vec<usize> = rows
            .iter()
            .flat_map(|&r| (r * cols)..((r + 1) * cols))
            .collect();
        let out = Tensor::from_vec(
            rows.len(),
            cols,
            idx.iter().map(|&i| da.data()[i]).collect(),
        );
        let rg = self.rg(a);
        Ok(self.push(out, Op::Gather(a, idx), rg))
    }

    /// Picks flat (row-major) elements of `a` into an `n×1` column.
    pub fn gather(&mut self, a: Value, flat: &[usize]) -> Result<Value> {
        let da = self.data(a);
        if let Some(&bad) = flat.iter().find(|&&i| i >= da.len()) {
            return Err(Error::dim(
                "gather",
                format!("index {bad} out of range for {:?}", da.shape()),
            ));
        }
        let out = Tensor::column(flat.iter().map(|&i| da.data()[i]).collect());
        let rg = self.rg(a);
        Ok(self.push(out, Op::Gather(a, flat.to_vec()), rg))
    }

    /// Flattens and stacks all inputs into one `n×1` column.
    pub fn concat(&mut self, parts: &[Value]) -> Value {
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.data(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Tensor::column(data), Op::Concat(parts.to_vec()), rg)
    }

    /// Maximum element. The gradient flows only to the argmax; ties go to the lowest index.
    pub fn max_reduce(&mut self, a: Value) -> Result<Value> {
        let da = self.data(a);
        if da.is_empty() {
            return Err(Error::EmptyReduction("max_reduce"));
        }
        let mut arg = 0;
        for (i, &x) in da.data().iter().enumerate() {
            if x > da.data()[arg] {
                arg = i;
            }
        }
        let m = da.data()[arg];
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(m), Op::Max(a, arg), rg))
    }

    /// Sum over elements of `−w_pos·t·log p − w_neg·(1−t)·log(1−p)`, with `p` clamped
    /// to `[ε, 1−ε]`. The backward pass evaluates the derivative at the clamped point.
    pub fn weighted_bce(
        &mut self,
        p: Value,
        targets: &[f64],
        w_pos: f64,
        w_neg: f64,
    ) -> Result<Value> {
        let dp = self.data(p);
        if dp.len() != targets.len() {
            return Err(Error::dim(
                "weighted_bce",
                format!("{} probabilities vs {} targets", dp.len(), targets.len()),
            ));
        }
        let loss: f64 = dp
            .data()
            .iter()
            .zip(targets)
            .map(|(&p, &t)| {
                let pc = clamp_prob(p);
                -w_pos * t * pc.ln() - w_neg * (1.0 - t) * (1.0 - pc).ln()
            })
            .sum();
        let rg = self.rg(p);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::WeightedBce {
                p,
                targets: targets.to_vec(),
                w_pos,
                w_neg,
            },
            rg,
        ))
    }

    /// Sum of the smooth-L1 (Huber, δ=1) penalty over `pred − target`.
    pub fn smooth_l1(&mut self, pred: Value, target: &[f64]) -> Result<Value> {
        let dp = self.data(pred);
        if dp.len() != target.len() {
            return Err(Error::dim(
                "smooth_l1",
                format!("{} predictions vs {} targets", dp.len(), target.len()),
            ));
        }
        let loss = dp
            .data()
            .iter()
            .zip(target)
            .map(|(&p, &t)| {
                let x = p - t;
                if x.abs() < 1.0 {
                    0.5 * x * x
                } else {
                    x.abs() - 0.5
                }
            })
            .sum();
        let rg = self.rg(pred);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SmoothL1 {
                pred,
                target: target.to_vec(),
            },
            rg,
        ))
    }

    /// Runs the backward pass from a scalar `loss`, accumulating into every node's grad.
    pub fn backward_from(&mut self, loss: Value) -> Result<()> {
        if self.data(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.data(loss).shape()
            )));
        }
        for node in &mut self.nodes {
            node.grad.fill(0.0);
        }
        self.nodes[loss.0].grad = Tensor::scalar(1.0);

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let op = self.nodes[idx].op.clone();
            let g = self.nodes[idx].grad.clone();
            if g.data().iter().all(|&x| x == 0.0) {
                continue;
            }
            self.propagate(idx, &op, &g);
        }
        Ok(())
    }

    /// Backward pass returning `∂loss/∂param` for every parameter in `store`;
    /// parameters not bound into this graph get zero gradients.
    pub fn backward(&mut self, loss: Value, store: &ParamStore) -> Result<Gradients> {
        self.backward_from(loss)?;
        let mut out = Gradients::new();
        for (name, t) in store.iter() {
            let g = match self.params.get(name) {
                Some(&v) => self.grad(v).clone(),
                None => Tensor::zeros(t.rows(), t.cols()),
            };
            out.insert(name.clone(), g);
        }
        Ok(out)
    }

    fn accumulate(&mut self, v: Value, g: &Tensor) {
        if self.nodes[v.0].requires_grad {
            self.nodes[v.0].grad.add_assign(g);
        }
    }

    fn accumulate_at(&mut self, v: Value, flat: usize, g: f64) {
        if self.nodes[v.0].requires_grad {
            self.nodes[v.0].grad.data_mut()[flat] += g;
        }
    }

    fn propagate(&mut self, idx: usize, op: &Op, g: &Tensor) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    let ga = g.matmul(&self.data(*b).transpose());
                    self.accumulate(*a, &ga);
                }
                if self.rg(*b) {
                    let gb = self.data(*a).transpose().matmul(g);
                    self.accumulate(*b, &gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(*a, g);
                self.accumulate(*b, g);
            }
            Op::AddBias(a, bias) => {
                self.accumulate(*a, g);
                if self.rg(*bias) {
                    let n = g.cols();
                    let mut gb = Tensor::zeros(1, n);
                    for (i, x) in g.data().iter().enumerate() {
                        gb.data_mut()[i % n] += x;
                    }
                    self.accumulate(*bias, &gb);
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let db = self.data(*b);
                    let ga = Tensor::from_vec(
                        g.rows(),
                        g.cols(),
                        g.data().iter().zip(db.data()).map(|(x, y)| x * y).collect(),
                    );
                    self.accumulate(*a, &ga);
                }
                if self.rg(*b) {
                    let da = self.data(*a);
                    let gb = Tensor::from_vec(
                        g.rows(),
                        g.cols(),
                        g.data().iter().zip(da.data()).map(|(x, y)| x * y).collect(),
                    );
                    self.accumulate(*b, &gb);
                }
            }
            Op::Scale(a, c) => {
                let ga = g.map(|x| c * x);
                self.accumulate(*a, &ga);
            }
            Op::Tanh(a) => {
                let out = &self.nodes[idx].data;
                let ga = Tensor::from_vec(
                    g.rows(),
                    g.cols(),
                    g.data()
                        .iter()
                        .zip(out.data())
                        .map(|(x, y)| x * (1.0 - y * y))
                        .collect(),
                );
                self.accumulate(*a, &ga);
            }
            Op::Sigmoid(a) => {
                let out = &self.nodes[idx].data;
                let ga = Tensor::from_vec(
                    g.rows(),
                    g.cols(),
                    g.data()
                        .iter()
                        .zip(out.data())
                        .map(|(x, s)| x * s * (1.0 - s))
                        .collect(),
                );
                self.accumulate(*a, &ga);
            }
            Op::Sum(a) => {
                let s = g.item();
                let (r, c) = self.data(*a).shape();
                let mut ga = Tensor::zeros(r, c);
                ga.fill(s);
                self.accumulate(*a, &ga);
            }
            Op::Gather(a, flat) => {
                for (k, &i) in flat.iter().enumerate() {
                    self.accumulate_at(*a, i, g.data()[k]);
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.data(p).len();
                    let (r, c) = self.data(p).shape();
                    let gp = Tensor::from_vec(r, c, g.data()[off..off + n].to_vec());
                    self.accumulate(p, &gp);
                    off += n;
                }
            }
            Op::Max(a, arg) => {
                self.accumulate_at(*a, *arg, g.item());
            }
            Op::WeightedBce {
                p,
                targets,
                w_pos,
                w_neg,
            } => {
                let s = g.item();
                let dp = self.data(*p);
                let ga = Tensor::from_vec(
                    dp.rows(),
                    dp.cols(),
                    dp.data()
                        .iter()
                        .zip(targets)
                        .map(|(&p, &t)| {
                            let pc = clamp_prob(p);
                            s * (-w_pos * t / pc + w_neg * (1.0 - t) / (1.0 - pc))
                        })
                        .collect(),
                );
                self.accumulate(*p, &ga);
            }
            Op::SmoothL1 { pred, target } => {
                let s = g.item();
                let dp = self.data(*pred);
                let ga = Tensor::from_vec(
                    dp.rows(),
                    dp.cols(),
                    dp.data()
                        .iter()
                        .zip(target)
                        .map(|(&p, &t)| {
                            let x = p - t;
                            s * if x.abs() < 1.0 { x } else { x.signum() }
                        })
                        .collect(),
                );
                self.accumulate(*pred, &ga);
            }
        }
    }
}
