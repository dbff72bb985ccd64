use std::collections::HashMap;

use super::params::ParamStore;
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Value(usize);

impl Value {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the second operand of a binary op is expanded onto the first.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    /// `b` has `cols(a)` elements and is repeated for every row.
    Row,
    /// `b` is `rows(a) x 1` and is repeated along each row.
    Col,
    Scalar,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Value, Value),
    Add(Value, Value, Bcast),
    Sub(Value, Value, Bcast),
    Mul(Value, Value, Bcast),
    Scale(Value, f64),
    AddConst(Value),
    Relu(Value),
    Sigmoid(Value),
    Silu(Value),
    Tanh(Value),
    Exp(Value),
    Recip(Value),
    Sqrt(Value),
    Square(Value),
    Sum(Value),
    Mean(Value),
    SumCols(Value),
    RowNorm(Value),
    LayerNorm { x: Value, rstd: Vec<f64> },
    GroupMax { x: Value, argmax: Vec<u32> },
    GroupSum { x: Value, k: usize },
    GroupMean { x: Value, k: usize },
    Gather { x: Value, idx: Vec<usize> },
    ConcatCols(Vec<Value>),
    ConcatRows(Vec<Value>),
    SliceCols { x: Value, start: usize },
    Reshape(Value),
    SoftmaxRows(Value),
    ClampMin(Value, f64),
    CausalConv { u: Value, kernel: Value },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddConst(..) => "add_const",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Silu(..) => "silu",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::Recip(..) => "recip",
            Op::Sqrt(..) => "sqrt",
            Op::Square(..) => "square",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SumCols(..) => "sum_cols",
            Op::RowNorm(..) => "row_norm",
            Op::LayerNorm { .. } => "layer_norm",
            Op::GroupMax { .. } => "group_max",
            Op::GroupSum { .. } => "group_sum",
            Op::GroupMean { .. } => "group_mean",
            Op::Gather { .. } => "gather",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::Reshape(..) => "reshape",
            Op::SoftmaxRows(..) => "softmax",
            Op::ClampMin(..) => "clamp_min",
            Op::CausalConv { .. } => "causal_conv",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: Option<String>,
}

/// Reverse-mode tape.
///
/// Nodes are appended in evaluation order, so reverse index order is a
/// valid topological order for backpropagation. Every `backward` call
/// clears previously accumulated gradients first.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    params: HashMap<String, Value>,
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Value {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Value(self.nodes.len() - 1)
    }

    fn rg(&self, v: Value) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input (no gradient is tracked for it).
    pub fn constant(&mut self, t: Tensor) -> Value {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf that receives a gradient on `backward`.
    pub fn variable(&mut self, t: Tensor) -> Value {
        self.push(t, Op::Leaf, true)
    }

    /// Loads a parameter from `store`, once per graph.
    pub fn param(&mut self, store: &ParamStore, path: &str) -> Result<Value> {
        if let Some(&v) = self.params.get(path) {
            return Ok(v);
        }
        let p = store.get(path)?;
        let v = self.push(p.value.clone(), Op::Leaf, p.trainable);
        self.nodes[v.0].param = Some(path.to_owned());
        self.params.insert(path.to_owned(), v);
        Ok(v)
    }

    pub fn value(&self, v: Value) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Value) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last `backward` root with respect to `v`.
    pub fn grad(&self, v: Value) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn op_name(&self, v: Value) -> &'static str {
        self.nodes[v.0].op.name()
    }

    /// Adds the gradients of all loaded parameters into `store`.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) -> Result<()> {
        for (path, &v) in &self.params {
            if let Some(g) = self.grad(v) {
                store.get_mut(path)?.grad.add_assign(g);
            }
        }
        Ok(())
    }

    fn bcast(&self, op: &'static str, a: Value, b: Value) -> Result<Bcast> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            Ok(Bcast::Same)
        } else if tb.len() == 1 {
            Ok(Bcast::Scalar)
        } else if tb.rows() == 1 && tb.len() == ta.cols() {
            Ok(Bcast::Row)
        } else if tb.cols() == 1 && tb.rows() == ta.rows() && ta.rank() >= 2 {
            Ok(Bcast::Col)
        } else {
            Err(Error::shape(
                op,
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ))
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Value,
        b: Value,
        f: impl Fn(f64, f64) -> f64,
        mk: impl Fn(Value, Value, Bcast) -> Op,
    ) -> Result<Value> {
        let bc = self.bcast(name, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let cols = ta.cols();
        let ad = ta.data();
        let bd = tb.data();
        let data: Vec<f64> = match bc {
            Bcast::Same => ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
            Bcast::Scalar => ad.iter().map(|&x| f(x, bd[0])).collect(),
            Bcast::Row => ad
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, bd[i % cols]))
                .collect(),
            Bcast::Col => ad
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, bd[i / cols]))
                .collect(),
        };
        let t = Tensor::from_vec(ta.shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, mk(a, b, bc), rg))
    }

    fn unary(&mut self, a: Value, f: impl Fn(f64) -> f64, op: Op) -> Value {
        let t = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(t, op, rg)
    }

    // ---- elementwise ----------------------------------------------------

    pub fn add(&mut self, a: Value, b: Value) -> Result<Value> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Value, b: Value) -> Result<Value> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Value, b: Value) -> Result<Value> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    /// `a / b`, with `b` broadcast like in [`Graph::mul`].
    pub fn div(&mut self, a: Value, b: Value) -> Result<Value> {
        let r = self.recip(b);
        self.mul(a, r)
    }

    pub fn scale(&mut self, a: Value, s: f64) -> Value {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn neg(&mut self, a: Value) -> Value {
        self.scale(a, -1.0)
    }

    pub fn add_const(&mut self, a: Value, c: f64) -> Value {
        self.unary(a, |x| x + c, Op::AddConst(a))
    }

    pub fn relu(&mut self, a: Value) -> Value {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Value) -> Value {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn silu(&mut self, a: Value) -> Value {
        self.unary(a, |x| x * sigmoid(x), Op::Silu(a))
    }

    pub fn tanh(&mut self, a: Value) -> Value {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Value) -> Value {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn recip(&mut self, a: Value) -> Value {
        self.unary(a, |x| 1.0 / x, Op::Recip(a))
    }

    pub fn sqrt(&mut self, a: Value) -> Value {
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn square(&mut self, a: Value) -> Value {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn clamp_min(&mut self, a: Value, lo: f64) -> Value {
        self.unary(a, |x| x.max(lo), Op::ClampMin(a, lo))
    }

    // ---- reductions -----------------------------------------------------

    pub fn sum(&mut self, a: Value) -> Value {
        let t = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(t, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Value) -> Value {
        let ta = self.value(a);
        let t = Tensor::scalar(ta.sum() / ta.len() as f64);
        let rg = self.rg(a);
        self.push(t, Op::Mean(a), rg)
    }

    /// Row-wise sum, `[rows, cols] -> [rows, 1]`.
    pub fn sum_cols(&mut self, a: Value) -> Value {
        let ta = self.value(a);
        let data = (0..ta.rows()).map(|r| ta.row(r).iter().sum()).collect();
        let t = Tensor::from_vec(&[ta.rows(), 1], data).expect("row count");
        let rg = self.rg(a);
        self.push(t, Op::SumCols(a), rg)
    }

    /// Row-wise Euclidean norm, `[rows, cols] -> [rows, 1]`.
    ///
    /// The gradient at a zero row is taken as zero.
    pub fn row_norm(&mut self, a: Value) -> Value {
        let ta = self.value(a);
        let data = (0..ta.rows())
            .map(|r| ta.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let t = Tensor::from_vec(&[ta.rows(), 1], data).expect("row count");
        let rg = self.rg(a);
        self.push(t, Op::RowNorm(a), rg)
    }

    /// Row-wise layer normalization without affine terms.
    pub fn layer_norm(&mut self, a: Value, eps: f64) -> Value {
        let ta = self.value(a);
        let cols = ta.cols();
        let mut out = ta.clone();
        let mut rstd = Vec::with_capacity(ta.rows());
        for r in 0..ta.rows() {
            let row = out.row_mut(r);
            let mu = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / cols as f64;
            let s = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mu) * s);
            rstd.push(s);
        }
        let rg = self.rg(a);
        self.push(out, Op::LayerNorm { x: a, rstd }, rg)
    }

    pub fn softmax_rows(&mut self, a: Value) -> Value {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        let rg = self.rg(a);
        self.push(out, Op::SoftmaxRows(a), rg)
    }

    fn check_groups(&self, op: &'static str, a: Value, k: usize) -> Result<(usize, usize)> {
        let ta = self.value(a);
        if k == 0 || ta.rows() % k != 0 {
            return Err(Error::shape(
                op,
                format!("{} rows not divisible into groups of {k}", ta.rows()),
            ));
        }
        Ok((ta.rows() / k, ta.cols()))
    }

    /// Max over consecutive groups of `k` rows, `[n*k, c] -> [n, c]`.
    ///
    /// Ties resolve to the lowest row.
    pub fn group_max(&mut self, a: Value, k: usize) -> Result<Value> {
        let (n, c) = self.check_groups("group_max", a, k)?;
        let ta = self.value(a);
        let mut out = Tensor::zeros(&[n, c]);
        let mut argmax = vec![0u32; n * c];
        for g in 0..n {
            let o = out.row_mut(g);
            o.copy_from_slice(ta.row(g * k));
            let am = &mut argmax[g * c..(g + 1) * c];
            am.iter_mut().for_each(|x| *x = (g * k) as u32);
            for r in g * k + 1..(g + 1) * k {
                for (j, &v) in ta.row(r).iter().enumerate() {
                    if v > o[j] {
                        o[j] = v;
                        am[j] = r as u32;
                    }
                }
            }
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::GroupMax { x: a, argmax }, rg))
    }

    /// Max over all rows, `[rows, c] -> [1, c]`.
    pub fn col_max(&mut self, a: Value) -> Result<Value> {
        let rows = self.value(a).rows();
        self.group_max(a, rows)
    }

    fn group_reduce(&mut self, a: Value, k: usize, mean: bool) -> Result<Value> {
        let (n, c) = self.check_groups("group_sum", a, k)?;
        let ta = self.value(a);
        let mut out = Tensor::zeros(&[n, c]);
        for g in 0..n {
            let o = out.row_mut(g);
            for r in g * k..(g + 1) * k {
                for (x, &v) in o.iter_mut().zip(ta.row(r)) {
                    *x += v;
                }
            }
            if mean {
                o.iter_mut().for_each(|x| *x /= k as f64);
            }
        }
        let rg = self.rg(a);
        let op = if mean {
            Op::GroupMean { x: a, k }
        } else {
            Op::GroupSum { x: a, k }
        };
        Ok(self.push(out, op, rg))
    }

    /// Sum over consecutive groups of `k` rows.
    pub fn group_sum(&mut self, a: Value, k: usize) -> Result<Value> {
        self.group_reduce(a, k, false)
    }

    /// Mean over consecutive groups of `k` rows.
    pub fn group_mean(&mut self, a: Value, k: usize) -> Result<Value> {
        self.group_reduce(a, k, true)
    }

    // ---- linear algebra -------------------------------------------------

    /// `[.., k] x [k, m] -> [.., m]`.
    pub fn matmul(&mut self, a: Value, b: Value) -> Result<Value> {
        let (ta, tb) = (self.value(a), self.value(b));
        if tb.rank() != 2 || ta.cols() != tb.shape()[0] {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", ta.shape(), tb.shape()),
            ));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut shape = ta.shape().to_vec();
        *shape.last_mut().expect("rank >= 1") = n;
        let mut out = Tensor::zeros(&shape);
        gemm(m, k, n, ta.data(), false, tb.data(), false, out.data_mut(), 0.0);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// Causal convolution along the middle axis: `y[s,t,c] = sum_tau k[tau] u[s,t-tau,c]`.
    ///
    /// `u` is `[s, t, c]` (or `[t, c]`), `kernel` holds at least `t` taps.
    pub fn causal_conv(&mut self, u: Value, kernel: Value) -> Result<Value> {
        let (tu, tk) = (self.value(u), self.value(kernel));
        let (s, t, c) = seq_dims(tu);
        if tk.len() < t {
            return Err(Error::shape(
                "causal_conv",
                format!("kernel {:?} shorter than sequence {:?}", tk.shape(), tu.shape()),
            ));
        }
        let k = tk.data();
        let ud = tu.data();
        let mut out = Tensor::zeros(tu.shape());
        let od = out.data_mut();
        for si in 0..s {
            let base = si * t * c;
            for ti in 0..t {
                let o = &mut od[base + ti * c..base + (ti + 1) * c];
                for tau in 0..=ti {
                    let w = k[tau];
                    let src = &ud[base + (ti - tau) * c..base + (ti - tau + 1) * c];
                    for (x, &v) in o.iter_mut().zip(src) {
                        *x += w * v;
                    }
                }
            }
        }
        let rg = self.rg(u) || self.rg(kernel);
        Ok(self.push(out, Op::CausalConv { u, kernel }, rg))
    }

    // ---- indexing & layout ----------------------------------------------

    /// Selects rows by index (repeats allowed). Gradients scatter-add back.
    pub fn gather_rows(&mut self, a: Value, idx: &[usize]) -> Result<Value> {
        let ta = self.value(a);
        let rows = ta.rows();
        let c = ta.cols();
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::shape(
                "gather",
                format!("index {bad} out of range for {:?}", ta.shape()),
            ));
        }
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(ta.row(i));
        }
        let t = Tensor::from_vec(&[idx.len(), c], data)?;
        let rg = self.rg(a);
        Ok(self.push(
            t,
            Op::Gather {
                x: a,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Value]) -> Result<Value> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            let shapes: Vec<_> = parts.iter().map(|&p| self.shape(p).to_vec()).collect();
            return Err(Error::shape("concat_cols", format!("{shapes:?}")));
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let t = Tensor::from_vec(&[rows, total], data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(t, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Value]) -> Result<Value> {
        let cols = self.value(parts[0]).cols();
        if parts.iter().any(|&p| self.value(p).cols() != cols) {
            let shapes: Vec<_> = parts.iter().map(|&p| self.shape(p).to_vec()).collect();
            return Err(Error::shape("concat_rows", format!("{shapes:?}")));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rows = data.len() / cols.max(1);
        let t = Tensor::from_vec(&[rows, cols], data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(t, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, a: Value, start: usize, end: usize) -> Result<Value> {
        let ta = self.value(a);
        if start >= end || end > ta.cols() {
            return Err(Error::shape(
                "slice_cols",
                format!("{start}..{end} of {:?}", ta.shape()),
            ));
        }
        let mut data = Vec::with_capacity(ta.rows() * (end - start));
        for r in 0..ta.rows() {
            data.extend_from_slice(&ta.row(r)[start..end]);
        }
        let t = Tensor::from_vec(&[ta.rows(), end - start], data)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::SliceCols { x: a, start }, rg))
    }

    pub fn slice_rows(&mut self, a: Value, start: usize, end: usize) -> Result<Value> {
        let idx: Vec<usize> = (start..end).collect();
        self.gather_rows(a, &idx)
    }

    pub fn reshape(&mut self, a: Value, shape: &[usize]) -> Result<Value> {
        let t = self.value(a).clone().reshaped(shape)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    // ---- backward -------------------------------------------------------

    /// Backpropagates from a single-element `root`.
    pub fn backward(&mut self, root: Value) -> Result<()> {
        let rt = self.value(root);
        if rt.len() != 1 {
            return Err(Error::NonScalarRoot(rt.shape().to_vec()));
        }
        let seed = Tensor::filled(rt.shape(), 1.0);
        self.grads.clear();
        self.grads.resize_with(self.nodes.len(), || None);
        self.grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn acc(&mut self, v: Value, t: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => g.add_assign(&t),
            slot @ None => *slot = Some(t),
        }
    }

    fn acc_with(&mut self, v: Value, f: impl FnOnce(&mut Tensor)) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let shape = self.nodes[v.0].value.shape().to_vec();
        let slot = self.grads[v.0].get_or_insert_with(|| Tensor::zeros(&shape));
        f(slot);
    }

    fn reduce_bcast(&self, b: Value, bc: Bcast, cols: usize, full: &[f64]) -> Tensor {
        let shape = self.shape(b).to_vec();
        match bc {
            Bcast::Same => Tensor::from_vec(&shape, full.to_vec()).expect("same shape"),
            Bcast::Scalar => Tensor::from_vec(&shape, vec![full.iter().sum()]).expect("scalar"),
            Bcast::Row => {
                let mut out = vec![0.0; cols];
                for row in full.chunks(cols) {
                    for (o, v) in out.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                Tensor::from_vec(&shape, out).expect("row")
            }
            Bcast::Col => {
                let out = full.chunks(cols).map(|r| r.iter().sum()).collect();
                Tensor::from_vec(&shape, out).expect("col")
            }
        }
    }

    fn bval(&self, b: Value, bc: Bcast, cols: usize, i: usize) -> f64 {
        let d = self.value(b).data();
        match bc {
            Bcast::Same => d[i],
            Bcast::Scalar => d[0],
            Bcast::Row => d[i % cols],
            Bcast::Col => d[i / cols],
        }
    }

    fn backprop_node(&mut self, i: usize, g: &Tensor) {
        // The op is moved out temporarily so parents can be borrowed mutably.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        let y = Value(i);
        match &op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = (self.value(a).rows(), self.value(a).cols());
                let n = self.value(b).cols();
                if self.rg(a) {
                    let mut ga = Tensor::zeros(self.shape(a));
                    gemm(m, n, k, g.data(), false, self.value(b).data(), true, ga.data_mut(), 0.0);
                    self.acc(a, ga);
                }
                if self.rg(b) {
                    let mut gb = Tensor::zeros(self.shape(b));
                    gemm(k, m, n, self.value(a).data(), true, g.data(), false, gb.data_mut(), 0.0);
                    self.acc(b, gb);
                }
            }
            &Op::Add(a, b, bc) | &Op::Sub(a, b, bc) => {
                let sign = if matches!(op, Op::Sub(..)) { -1.0 } else { 1.0 };
                self.acc(a, g.clone());
                if self.rg(b) {
                    let cols = self.value(a).cols();
                    let mut gb = self.reduce_bcast(b, bc, cols, g.data());
                    if sign < 0.0 {
                        gb.data_mut().iter_mut().for_each(|v| *v = -*v);
                    }
                    self.acc(b, gb);
                }
            }
            &Op::Mul(a, b, bc) => {
                let cols = self.value(a).cols();
                if self.rg(a) {
                    let data = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(j, &gv)| gv * self.bval(b, bc, cols, j))
                        .collect();
                    let t = Tensor::from_vec(self.shape(a), data).expect("shape");
                    self.acc(a, t);
                }
                if self.rg(b) {
                    let prod: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(self.value(a).data())
                        .map(|(gv, av)| gv * av)
                        .collect();
                    let gb = self.reduce_bcast(b, bc, cols, &prod);
                    self.acc(b, gb);
                }
            }
            &Op::Scale(a, s) => {
                let t = g.map(|v| v * s);
                self.acc(a, t);
            }
            &Op::AddConst(a) | &Op::Reshape(a) => {
                let t = Tensor::from_vec(self.shape(a), g.data().to_vec()).expect("shape");
                self.acc(a, t);
            }
            &Op::Relu(a) => self.unary_back(a, y, g, |_, yv| if yv > 0.0 { 1.0 } else { 0.0 }),
            &Op::Sigmoid(a) => self.unary_back(a, y, g, |_, yv| yv * (1.0 - yv)),
            &Op::Silu(a) => self.unary_back(a, y, g, |x, _| {
                let s = sigmoid(x);
                s + x * s * (1.0 - s)
            }),
            &Op::Tanh(a) => self.unary_back(a, y, g, |_, yv| 1.0 - yv * yv),
            &Op::Exp(a) => self.unary_back(a, y, g, |_, yv| yv),
            &Op::Recip(a) => self.unary_back(a, y, g, |_, yv| -yv * yv),
            &Op::Sqrt(a) => self.unary_back(a, y, g, |_, yv| if yv > 0.0 { 0.5 / yv } else { 0.0 }),
            &Op::Square(a) => self.unary_back(a, y, g, |x, _| 2.0 * x),
            &Op::ClampMin(a, lo) => self.unary_back(a, y, g, |x, _| if x > lo { 1.0 } else { 0.0 }),
            &Op::Sum(a) => {
                let t = Tensor::filled(self.shape(a), g.item());
                self.acc(a, t);
            }
            &Op::Mean(a) => {
                let n = self.value(a).len() as f64;
                let t = Tensor::filled(self.shape(a), g.item() / n);
                self.acc(a, t);
            }
            &Op::SumCols(a) => {
                let cols = self.value(a).cols();
                self.acc_with(a, |ga| {
                    for (r, row) in ga.data_mut().chunks_mut(cols).enumerate() {
                        let gv = g.data()[r];
                        row.iter_mut().for_each(|v| *v += gv);
                    }
                });
            }
            &Op::RowNorm(a) => {
                let xa = self.value(a).clone();
                let yv = self.value(y).data().to_vec();
                let cols = xa.cols();
                self.acc_with(a, |ga| {
                    for (r, row) in ga.data_mut().chunks_mut(cols).enumerate() {
                        if yv[r] > 0.0 {
                            let s = g.data()[r] / yv[r];
                            for (o, xv) in row.iter_mut().zip(xa.row(r)) {
                                *o += s * xv;
                            }
                        }
                    }
                });
            }
            Op::LayerNorm { x, rstd } => {
                let yt = self.value(y).clone();
                let cols = yt.cols();
                let mut gx = Tensor::zeros(yt.shape());
                for r in 0..yt.rows() {
                    let gr = g.row(r);
                    let yr = yt.row(r);
                    let mg = gr.iter().sum::<f64>() / cols as f64;
                    let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / cols as f64;
                    for ((o, &gv), &yv) in gx.row_mut(r).iter_mut().zip(gr).zip(yr) {
                        *o = rstd[r] * (gv - mg - yv * mgy);
                    }
                }
                let gx = gx.reshaped(self.shape(*x)).expect("shape");
                self.acc(*x, gx);
            }
            Op::SoftmaxRows(x) => {
                let yt = self.value(y).clone();
                let mut gx = Tensor::zeros(yt.shape());
                for r in 0..yt.rows() {
                    let gr = g.row(r);
                    let yr = yt.row(r);
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((o, &gv), &yv) in gx.row_mut(r).iter_mut().zip(gr).zip(yr) {
                        *o = yv * (gv - dot);
                    }
                }
                self.acc(*x, gx);
            }
            Op::GroupMax { x, argmax } => {
                let c = g.cols();
                self.acc_with(*x, |gx| {
                    let d = gx.data_mut();
                    for (j, (&gv, &src)) in g.data().iter().zip(argmax).enumerate() {
                        d[src as usize * c + j % c] += gv;
                    }
                });
            }
            &Op::GroupSum { x, k } | &Op::GroupMean { x, k } => {
                let scale = if matches!(op, Op::GroupMean { .. }) {
                    1.0 / k as f64
                } else {
                    1.0
                };
                let c = g.cols();
                self.acc_with(x, |gx| {
                    for (r, row) in gx.data_mut().chunks_mut(c).enumerate() {
                        for (o, gv) in row.iter_mut().zip(g.row(r / k)) {
                            *o += scale * gv;
                        }
                    }
                });
            }
            Op::Gather { x, idx } => {
                let c = g.cols();
                self.acc_with(*x, |gx| {
                    for (r, &src) in idx.iter().enumerate() {
                        for (o, gv) in gx.row_mut(src).iter_mut().zip(g.row(r)) {
                            *o += gv;
                        }
                    }
                    debug_assert_eq!(gx.cols(), c);
                });
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    if self.rg(p) {
                        let mut data = Vec::with_capacity(g.rows() * pc);
                        for r in 0..g.rows() {
                            data.extend_from_slice(&g.row(r)[off..off + pc]);
                        }
                        let t = Tensor::from_vec(self.shape(p), data).expect("shape");
                        self.acc(p, t);
                    }
                    off += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if self.rg(p) {
                        let t = Tensor::from_vec(self.shape(p), g.data()[off..off + n].to_vec())
                            .expect("shape");
                        self.acc(p, t);
                    }
                    off += n;
                }
            }
            &Op::SliceCols { x, start } => {
                let w = g.cols();
                self.acc_with(x, |gx| {
                    for r in 0..g.rows() {
                        for (o, gv) in gx.row_mut(r)[start..start + w].iter_mut().zip(g.row(r)) {
                            *o += gv;
                        }
                    }
                });
            }
            &Op::CausalConv { u, kernel } => {
                let tu = self.value(u).clone();
                let (s, t, c) = seq_dims(&tu);
                let k = self.value(kernel).data().to_vec();
                if self.rg(u) {
                    let mut gu = Tensor::zeros(tu.shape());
                    let gd = g.data();
                    let gud = gu.data_mut();
                    for si in 0..s {
                        let base = si * t * c;
                        for ti in 0..t {
                            let gsrc = &gd[base + ti * c..base + (ti + 1) * c];
                            for tau in 0..=ti {
                                let w = k[tau];
                                let dst = &mut gud[base + (ti - tau) * c..base + (ti - tau + 1) * c];
                                for (o, &gv) in dst.iter_mut().zip(gsrc) {
                                    *o += w * gv;
                                }
                            }
                        }
                    }
                    self.acc(u, gu);
                }
                if self.rg(kernel) {
                    let mut gk = Tensor::zeros(self.shape(kernel));
                    let ud = tu.data();
                    let gd = g.data();
                    for si in 0..s {
                        let base = si * t * c;
                        for ti in 0..t {
                            let gsrc = &gd[base + ti * c..base + (ti + 1) * c];
                            for tau in 0..=ti {
                                let src = &ud[base + (ti - tau) * c..base + (ti - tau + 1) * c];
                                gk.data_mut()[tau] +=
                                    gsrc.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                            }
                        }
                    }
                    self.acc(kernel, gk);
                }
            }
        }
        self.nodes[i].op = op;
    }

    fn unary_back(&mut self, a: Value, y: Value, g: &Tensor, d: impl Fn(f64, f64) -> f64) {
        if !self.rg(a) {
            return;
        }
        let data = g
            .data()
            .iter()
            .zip(self.value(a).data())
            .zip(self.value(y).data())
            .map(|((&gv, &xv), &yv)| gv * d(xv, yv))
            .collect();
        let t = Tensor::from_vec(self.shape(a), data).expect("shape");
        self.acc(a, t);
    }
}

fn seq_dims(t: &Tensor) -> (usize, usize, usize) {
    match t.shape() {
        [s, n, c] => (*s, *n, *c),
        [n, c] => (1, *n, *c),
        [n] => (1, *n, 1),
        _ => (1, 1, 1),
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
