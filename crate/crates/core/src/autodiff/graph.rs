use std::collections::HashMap;
use std::sync::Arc;

use super::tensor::{matmul_raw, transpose_raw};
use super::{AutodiffError, Tensor};

type Result<T> = std::result::Result<T, AutodiffError>;

/// Handle to a node of a [`Graph`]. Only meaningful for the graph that
/// created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    ScalarMul(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Sum(usize),
    Mean(usize),
    Expand(usize),
    Reshape(usize),
    SqDist(usize, usize),
    Dot(usize, usize),
    SoftmaxRows(usize),
    SoftmaxXent(usize, Arc<Vec<usize>>),
}

impl Op {
    fn inputs(&self) -> Inputs {
        use Op::*;
        match *self {
            Leaf | Constant => Inputs::None,
            Scale(a, _) | Transpose(a) | Relu(a) | Exp(a) | Log(a) | Sqrt(a) | Sum(a)
            | Mean(a) | Expand(a) | Reshape(a) | SoftmaxRows(a) => Inputs::One(a),
            SoftmaxXent(a, _) => Inputs::One(a),
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | ScalarMul(a, b) | MatMul(a, b)
            | SqDist(a, b) | Dot(a, b) => Inputs::Two(a, b),
        }
    }
}

#[derive(Clone, Copy)]
enum Inputs {
    None,
    One(usize),
    Two(usize, usize),
}

impl Inputs {
    fn iter(self) -> impl Iterator<Item = usize> {
        let (a, b) = match self {
            Inputs::None => (None, None),
            Inputs::One(a) => (Some(a), None),
            Inputs::Two(a, b) => (Some(a), Some(b)),
        };
        a.into_iter().chain(b)
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only computation tape.
#[derive(Debug, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    recording: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], keyed by the node id of each
/// requested input.
#[derive(Debug, Clone)]
pub struct Gradients {
    map: HashMap<usize, Var>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<Var> {
        self.map.get(&v.0).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(AutodiffError::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn zip_with(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_parts(a.shape().to_vec(), data)
}

fn sum_ordered(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0, |acc, &x| acc + x)
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            recording: true,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Constant,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Detached copy of a node's value (shares storage).
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad =
            self.recording && op.inputs().iter().any(|i| self.nodes[i].requires_grad);
        let op = if requires_grad { op } else { Op::Constant };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.val(a), self.val(b))?;
        let out = zip_with(self.val(a), self.val(b), |x, y| x + y);
        Ok(self.push(out, Op::Add(a.0, b.0)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.val(a), self.val(b))?;
        let out = zip_with(self.val(a), self.val(b), |x, y| x - y);
        Ok(self.push(out, Op::Sub(a.0, b.0)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.val(a), self.val(b))?;
        let out = zip_with(self.val(a), self.val(b), |x, y| x * y);
        Ok(self.push(out, Op::Mul(a.0, b.0)))
    }

    /// Elementwise quotient; zero divisors are a domain error.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("div", self.val(a), self.val(b))?;
        if self.val(b).data().contains(&0.0) {
            return Err(AutodiffError::Domain {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        let out = zip_with(self.val(a), self.val(b), |x, y| x / y);
        Ok(self.push(out, Op::Div(a.0, b.0)))
    }

    /// Multiply by a constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.val(a).map(|x| x * c);
        self.push(out, Op::Scale(a.0, c))
    }

    /// Multiply a tensor by a single-element graph value.
    pub fn scalar_mul(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.val(s).numel() != 1 {
            return Err(AutodiffError::ShapeMismatch {
                op: "scalar_mul",
                left: self.val(a).shape().to_vec(),
                right: self.val(s).shape().to_vec(),
            });
        }
        let c = self.val(s).item();
        let out = self.val(a).map(|x| x * c);
        Ok(self.push(out, Op::ScalarMul(a.0, s.0)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.val(a), self.val(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let data = matmul_raw(ta.data(), tb.data(), m, k, n);
        let out = Tensor::from_parts(vec![m, n], data);
        Ok(self.push(out, Op::MatMul(a.0, b.0)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.val(a);
        if t.shape().len() != 2 {
            return Err(AutodiffError::InvalidShape {
                shape: t.shape().to_vec(),
            });
        }
        let (r, c) = (t.shape()[0], t.shape()[1]);
        let out = Tensor::from_parts(vec![c, r], transpose_raw(t.data(), r, c));
        Ok(self.push(out, Op::Transpose(a.0)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.val(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(out, Op::Relu(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.val(a).map(f64::exp);
        self.push(out, Op::Exp(a.0))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(&x) = self.val(a).data().iter().find(|&&x| x <= 0.0 || x.is_nan()) {
            return Err(AutodiffError::Domain {
                op: "log",
                detail: format!("non-positive argument {x}"),
            });
        }
        let out = self.val(a).map(f64::ln);
        Ok(self.push(out, Op::Log(a.0)))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if let Some(&x) = self.val(a).data().iter().find(|&&x| x <= 0.0 || x.is_nan()) {
            return Err(AutodiffError::Domain {
                op: "sqrt",
                detail: format!("non-positive argument {x}"),
            });
        }
        let out = self.val(a).map(f64::sqrt);
        Ok(self.push(out, Op::Sqrt(a.0)))
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(sum_ordered(self.val(a).data()));
        self.push(out, Op::Sum(a.0))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.val(a);
        let out = Tensor::scalar(sum_ordered(t.data()) / t.numel() as f64);
        self.push(out, Op::Mean(a.0))
    }

    /// Broadcast a single-element tensor to `shape`.
    pub fn expand(&mut self, s: Var, shape: &[usize]) -> Result<Var> {
        if self.val(s).numel() != 1 {
            return Err(AutodiffError::ShapeMismatch {
                op: "expand",
                left: self.val(s).shape().to_vec(),
                right: shape.to_vec(),
            });
        }
        let out = Tensor::new(shape.to_vec(), vec![self.val(s).item(); shape.iter().product()])?;
        Ok(self.push(out, Op::Expand(s.0)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.val(a);
        let out = Tensor::new(shape.to_vec(), t.data().to_vec()).map_err(|_| {
            AutodiffError::ShapeMismatch {
                op: "reshape",
                left: t.shape().to_vec(),
                right: shape.to_vec(),
            }
        })?;
        Ok(self.push(out, Op::Reshape(a.0)))
    }

    /// Pairwise squared Euclidean distances between the rows of `a` (m×e)
    /// and the rows of `b` (n×e), as an m×n matrix.
    pub fn sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.val(a), self.val(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[1] {
            return Err(AutodiffError::ShapeMismatch {
                op: "sq_dist",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let (m, n) = (ta.shape()[0], tb.shape()[0]);
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            let ra = ta.row(i);
            for j in 0..n {
                let rb = tb.row(j);
                data.push(ra.iter().zip(rb).fold(0.0, |acc, (x, y)| acc + (x - y) * (x - y)));
            }
        }
        let out = Tensor::from_parts(vec![m, n], data);
        Ok(self.push(out, Op::SqDist(a.0, b.0)))
    }

    /// Inner product of two same-shaped tensors, as a rank-0 tensor.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("dot", self.val(a), self.val(b))?;
        let s = self
            .val(a)
            .data()
            .iter()
            .zip(self.val(b).data())
            .fold(0.0, |acc, (x, y)| acc + x * y);
        Ok(self.push(Tensor::scalar(s), Op::Dot(a.0, b.0)))
    }

    /// Row-wise softmax of an m×c matrix.
    pub fn softmax_rows(&mut self, logits: Var) -> Result<Var> {
        let t = self.val(logits);
        if t.shape().len() != 2 {
            return Err(AutodiffError::InvalidShape {
                shape: t.shape().to_vec(),
            });
        }
        let (m, c) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(m * c);
        for i in 0..m {
            let row = t.row(i);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&x| (x - mx).exp()).collect();
            let z = sum_ordered(&exps);
            data.extend(exps.iter().map(|e| e / z));
        }
        let out = Tensor::from_parts(vec![m, c], data);
        Ok(self.push(out, Op::SoftmaxRows(logits.0)))
    }

    /// Per-row negative log-likelihood of `labels` under a softmax over the
    /// rows of `logits` (m×c). Returns a length-m vector. The row maximum is
    /// subtracted before exponentiating.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.val(logits);
        if t.shape().len() != 2 || t.shape()[0] != labels.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "softmax_cross_entropy",
                left: t.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        let (m, c) = (t.shape()[0], t.shape()[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(AutodiffError::Domain {
                op: "softmax_cross_entropy",
                detail: format!("label {bad} out of range for {c} classes"),
            });
        }
        let mut data = Vec::with_capacity(m);
        for (i, &label) in labels.iter().enumerate() {
            let row = t.row(i);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z = row.iter().fold(0.0, |acc, &x| acc + (x - mx).exp());
            data.push(z.ln() - (row[label] - mx));
        }
        let out = Tensor::from_parts(vec![m], data);
        Ok(self.push(out, Op::SoftmaxXent(logits.0, Arc::new(labels.to_vec()))))
    }

    fn ones(&mut self, rows: usize, cols: usize) -> Var {
        self.constant(Tensor::full(&[rows, cols], 1.0))
    }

    /// Gradients of the single-element `output` with respect to `wrt`.
    ///
    /// With `create_graph` the gradient computation is recorded on the tape,
    /// so the returned gradients can be differentiated again. Without it the
    /// gradients are constants. Inputs in `wrt` that `output` does not depend
    /// on get a zero gradient.
    pub fn backward(&mut self, output: Var, wrt: &[Var], create_graph: bool) -> Result<Gradients> {
        let out_shape = self.val(output).shape().to_vec();
        if self.val(output).numel() != 1 {
            return Err(AutodiffError::NotScalar { shape: out_shape });
        }
        let last = output.0;
        let mut relevant = vec![false; last + 1];
        for w in wrt {
            if w.0 <= last {
                relevant[w.0] = true;
            }
        }
        for i in 0..=last {
            let node = &self.nodes[i];
            for j in node.op.inputs().iter() {
                if j >= i {
                    return Err(AutodiffError::Cycle { node: i });
                }
                if node.requires_grad && relevant[j] {
                    relevant[i] = true;
                }
            }
        }

        let saved = self.recording;
        self.recording = create_graph;
        let result = self.backward_inner(output, &relevant, &out_shape);
        self.recording = saved;
        let mut grads = result?;

        let mut map = HashMap::new();
        for w in wrt {
            let g = match grads.get_mut(w.0).and_then(Option::take) {
                Some(g) => g,
                None => {
                    let shape = self.val(*w).shape().to_vec();
                    self.constant(Tensor::zeros(&shape))
                }
            };
            map.insert(w.0, g);
        }
        Ok(Gradients { map })
    }

    fn backward_inner(
        &mut self,
        output: Var,
        relevant: &[bool],
        out_shape: &[usize],
    ) -> Result<Vec<Option<Var>>> {
        let last = output.0;
        let mut grads: Vec<Option<Var>> = vec![None; last + 1];
        grads[last] = Some(self.constant(Tensor::full(out_shape, 1.0)));

        for i in (0..=last).rev() {
            if !relevant[i] {
                continue;
            }
            let Some(g) = grads[i] else { continue };
            let op = self.nodes[i].op.clone();
            let contributions = self.vjp(i, &op, g, relevant)?;
            for (j, c) in contributions {
                grads[j] = Some(match grads[j] {
                    None => c,
                    Some(prev) => self.add(prev, c)?,
                });
            }
        }
        Ok(grads)
    }

    /// Vector-Jacobian products of node `i` for each relevant input.
    fn vjp(&mut self, i: usize, op: &Op, g: Var, relevant: &[bool]) -> Result<Vec<(usize, Var)>> {
        let out = Var(i);
        let mut acc = Vec::with_capacity(2);
        let want = |j: usize| relevant[j];
        match *op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                if want(a) {
                    acc.push((a, g));
                }
                if want(b) {
                    acc.push((b, g));
                }
            }
            Op::Sub(a, b) => {
                if want(a) {
                    acc.push((a, g));
                }
                if want(b) {
                    acc.push((b, self.scale(g, -1.0)));
                }
            }
            Op::Mul(a, b) => {
                if want(a) {
                    acc.push((a, self.mul(g, Var(b))?));
                }
                if want(b) {
                    acc.push((b, self.mul(g, Var(a))?));
                }
            }
            Op::Div(a, b) => {
                if want(a) {
                    acc.push((a, self.div(g, Var(b))?));
                }
                if want(b) {
                    let go = self.mul(g, out)?;
                    let q = self.div(go, Var(b))?;
                    acc.push((b, self.scale(q, -1.0)));
                }
            }
            Op::Scale(a, c) => {
                if want(a) {
                    acc.push((a, self.scale(g, c)));
                }
            }
            Op::ScalarMul(a, s) => {
                if want(a) {
                    acc.push((a, self.scalar_mul(g, Var(s))?));
                }
                if want(s) {
                    let d = self.dot(g, Var(a))?;
                    let shape = self.val(Var(s)).shape().to_vec();
                    acc.push((s, self.reshape(d, &shape)?));
                }
            }
            Op::MatMul(a, b) => {
                if want(a) {
                    let bt = self.transpose(Var(b))?;
                    acc.push((a, self.matmul(g, bt)?));
                }
                if want(b) {
                    let at = self.transpose(Var(a))?;
                    acc.push((b, self.matmul(at, g)?));
                }
            }
            Op::Transpose(a) => {
                if want(a) {
                    acc.push((a, self.transpose(g)?));
                }
            }
            Op::Relu(a) => {
                if want(a) {
                    let mask = self.val(Var(a)).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    let mask = self.constant(mask);
                    acc.push((a, self.mul(g, mask)?));
                }
            }
            Op::Exp(a) => {
                if want(a) {
                    acc.push((a, self.mul(g, out)?));
                }
            }
            Op::Log(a) => {
                if want(a) {
                    acc.push((a, self.div(g, Var(a))?));
                }
            }
            Op::Sqrt(a) => {
                if want(a) {
                    let half = self.scale(g, 0.5);
                    acc.push((a, self.div(half, out)?));
                }
            }
            Op::Sum(a) => {
                if want(a) {
                    let shape = self.val(Var(a)).shape().to_vec();
                    acc.push((a, self.expand(g, &shape)?));
                }
            }
            Op::Mean(a) => {
                if want(a) {
                    let shape = self.val(Var(a)).shape().to_vec();
                    let n = self.val(Var(a)).numel() as f64;
                    let e = self.expand(g, &shape)?;
                    acc.push((a, self.scale(e, 1.0 / n)));
                }
            }
            Op::Expand(s) => {
                if want(s) {
                    let total = self.sum(g);
                    let shape = self.val(Var(s)).shape().to_vec();
                    acc.push((s, self.reshape(total, &shape)?));
                }
            }
            Op::Reshape(a) => {
                if want(a) {
                    let shape = self.val(Var(a)).shape().to_vec();
                    acc.push((a, self.reshape(g, &shape)?));
                }
            }
            Op::SqDist(a, b) => {
                let (m, e) = (self.val(Var(a)).shape()[0], self.val(Var(a)).shape()[1]);
                let n = self.val(Var(b)).shape()[0];
                if want(a) {
                    let ones_n = self.ones(n, 1);
                    let ones_e = self.ones(1, e);
                    let row_sums = self.matmul(g, ones_n)?;
                    let spread = self.matmul(row_sums, ones_e)?;
                    let lhs = self.mul(Var(a), spread)?;
                    let gb = self.matmul(g, Var(b))?;
                    let diff = self.sub(lhs, gb)?;
                    acc.push((a, self.scale(diff, 2.0)));
                }
                if want(b) {
                    let gt = self.transpose(g)?;
                    let ones_m = self.ones(m, 1);
                    let ones_e = self.ones(1, e);
                    let col_sums = self.matmul(gt, ones_m)?;
                    let spread = self.matmul(col_sums, ones_e)?;
                    let lhs = self.mul(Var(b), spread)?;
                    let gta = self.matmul(gt, Var(a))?;
                    let diff = self.sub(lhs, gta)?;
                    acc.push((b, self.scale(diff, 2.0)));
                }
            }
            Op::Dot(a, b) => {
                if want(a) {
                    acc.push((a, self.scalar_mul(Var(b), g)?));
                }
                if want(b) {
                    acc.push((b, self.scalar_mul(Var(a), g)?));
                }
            }
            Op::SoftmaxRows(a) => {
                if want(a) {
                    let c = self.val(out).shape()[1];
                    let m = self.val(out).shape()[0];
                    let gs = self.mul(g, out)?;
                    let ones_c = self.ones(c, 1);
                    let rows = self.matmul(gs, ones_c)?;
                    let ones_row = self.ones(1, c);
                    let spread = self.matmul(rows, ones_row)?;
                    debug_assert_eq!(self.val(spread).shape(), &[m, c]);
                    let centered = self.sub(g, spread)?;
                    acc.push((a, self.mul(out, centered)?));
                }
            }
            Op::SoftmaxXent(a, ref labels) => {
                if want(a) {
                    let (m, c) = (self.val(Var(a)).shape()[0], self.val(Var(a)).shape()[1]);
                    let probs = self.softmax_rows(Var(a))?;
                    let mut onehot = vec![0.0; m * c];
                    for (r, &l) in labels.iter().enumerate() {
                        onehot[r * c + l] = 1.0;
                    }
                    let onehot = self.constant(Tensor::from_parts(vec![m, c], onehot));
                    let delta = self.sub(probs, onehot)?;
                    let gcol = self.reshape(g, &[m, 1])?;
                    let ones_c = self.ones(1, c);
                    let spread = self.matmul(gcol, ones_c)?;
                    acc.push((a, self.mul(delta, spread)?));
                }
            }
        }
        Ok(acc)
    }
}
