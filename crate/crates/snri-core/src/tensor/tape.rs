//! Wengert tape: forward ops append nodes, backward replays them in
//! reverse. A [`Var`] is an index into one tape and must not be mixed
//! across tapes.

use super::{Tensor, TensorError};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    /// Elementwise, both operands same shape.
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// (n,d) plus a (d,) row broadcast over rows.
    AddRow(Var, Var),
    /// Any tensor plus a one-element tensor broadcast everywhere.
    AddScalarT(Var, Var),
    /// (n,d) scaled per row by an (n,) vector.
    ScaleRows(Var, Var),
    /// (m,k) x (k,n).
    Matmul(Var, Var),
    /// (m,k) x (k,) -> (m,).
    MatVec(Var, Var),
    /// (k,) x (k,n) -> (n,).
    VecMat(Var, Var),
    /// (k,) . (k,) -> scalar.
    Dot(Var, Var),
    /// Select rows of a (n,d) matrix; indices may repeat.
    GatherRows(Var, Vec<usize>),
    /// Sum rows of a (m,d) matrix into a fresh (n,d) by target index.
    ScatterAddRows(Var, Vec<usize>),
    /// Column-wise concat of (n,d_i) matrices.
    ConcatCols(Vec<Var>),
    /// Concat of rank-1 tensors.
    ConcatVec(Vec<Var>),
    /// Stack (d,) vectors into (n,d).
    StackRows(Vec<Var>),
    /// Row i of a (n,d) matrix as a (d,) vector.
    Row(Var, usize),
    /// Column j of a (n,d) matrix as a (n,) vector.
    Column(Var, usize),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Log(Var),
    Neg(Var),
    /// Softmax over a rank-1 tensor.
    SoftmaxVec(Var),
    /// Full reduction to a scalar.
    Sum(Var),
    /// Mean over rows: (n,d) -> (d,).
    MeanRows(Var),
    AddConst(Var),
    MulConst(Var, f64),
    /// Element mask, already scaled by 1/(1-rate).
    Dropout(Var, Vec<f64>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::AddScalarT(..) => "add_scalar",
            Op::ScaleRows(..) => "scale_rows",
            Op::Matmul(..) => "matmul",
            Op::MatVec(..) => "matvec",
            Op::VecMat(..) => "vecmat",
            Op::Dot(..) => "dot",
            Op::GatherRows(..) => "gather_rows",
            Op::ScatterAddRows(..) => "scatter_add_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatVec(..) => "concat_vec",
            Op::StackRows(..) => "stack_rows",
            Op::Row(..) => "row",
            Op::Column(..) => "column",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Relu(..) => "relu",
            Op::Log(..) => "log",
            Op::Neg(..) => "neg",
            Op::SoftmaxVec(..) => "softmax",
            Op::Sum(..) => "sum",
            Op::MeanRows(..) => "mean_rows",
            Op::AddConst(..) => "add_const",
            Op::MulConst(..) => "mul_const",
            Op::Dropout(..) => "dropout",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    /// True if this node's value influences some grad-requiring leaf.
    needs_grad: bool,
}

/// Recorded computation. Single-threaded; parameters live outside and
/// are lifted onto the tape per forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros when `v` was never reached.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape),
        }
    }
}

fn shape_err(op: &'static str, details: String) -> TensorError {
    TensorError::ShapeMismatch { op, details }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Positional handle to the index-th recorded node. Callers that
    /// lift leaves first (the usual pattern) can recover them by index.
    pub fn var_at(&self, index: usize) -> Var {
        assert!(index < self.nodes.len(), "tape has {} nodes", self.nodes.len());
        Var(index)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn inputs_need_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Lift a tensor onto the tape. `requires_grad` marks it as a
    /// differentiation target.
    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.push(t, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    fn binary_same_shape(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(
                name,
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let value = Tensor {
            shape: ta.shape().to_vec(),
            data,
        };
        let ng = self.inputs_need_grad(&[a, b]);
        Ok(self.push(value, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary_same_shape("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary_same_shape("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary_same_shape("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `x + row` where `x` is (n,d) and `row` is (d,).
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var, TensorError> {
        let (tx, tr) = (self.value(x), self.value(row));
        if tx.shape().len() != 2 || tr.shape() != [tx.cols()] {
            return Err(shape_err(
                "add_row",
                format!("{:?} + {:?}", tx.shape(), tr.shape()),
            ));
        }
        let (n, d) = (tx.rows(), tx.cols());
        let mut data = tx.data().to_vec();
        for i in 0..n {
            for j in 0..d {
                data[i * d + j] += tr.data()[j];
            }
        }
        let value = Tensor {
            shape: vec![n, d],
            data,
        };
        let ng = self.inputs_need_grad(&[x, row]);
        Ok(self.push(value, Op::AddRow(x, row), ng))
    }

    /// `x + s` with one-element `s` broadcast over every element.
    pub fn add_scalar_t(&mut self, x: Var, s: Var) -> Result<Var, TensorError> {
        let ts = self.value(s);
        if !ts.is_scalar() {
            return Err(shape_err(
                "add_scalar",
                format!("scalar operand has shape {:?}", ts.shape()),
            ));
        }
        let sv = ts.item();
        let tx = self.value(x);
        let value = Tensor {
            shape: tx.shape().to_vec(),
            data: tx.data().iter().map(|v| v + sv).collect(),
        };
        let ng = self.inputs_need_grad(&[x, s]);
        Ok(self.push(value, Op::AddScalarT(x, s), ng))
    }

    /// Scale row i of (n,d) `x` by element i of (n,) `s`.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var, TensorError> {
        let (tx, ts) = (self.value(x), self.value(s));
        if tx.shape().len() != 2 || ts.shape() != [tx.rows()] {
            return Err(shape_err(
                "scale_rows",
                format!("{:?} scaled by {:?}", tx.shape(), ts.shape()),
            ));
        }
        let (n, d) = (tx.rows(), tx.cols());
        let mut data = tx.data().to_vec();
        for i in 0..n {
            let f = ts.data()[i];
            for v in &mut data[i * d..(i + 1) * d] {
                *v *= f;
            }
        }
        let value = Tensor {
            shape: vec![n, d],
            data,
        };
        let ng = self.inputs_need_grad(&[x, s]);
        Ok(self.push(value, Op::ScaleRows(x, s), ng))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.rows() {
            return Err(shape_err(
                "matmul",
                format!("{:?} x {:?}", ta.shape(), tb.shape()),
            ));
        }
        let value = matmul_nn(ta, tb);
        let ng = self.inputs_need_grad(&[a, b]);
        Ok(self.push(value, Op::Matmul(a, b), ng))
    }

    pub fn matvec(&mut self, m: Var, v: Var) -> Result<Var, TensorError> {
        let (tm, tv) = (self.value(m), self.value(v));
        if tm.shape().len() != 2 || tv.shape() != [tm.cols()] {
            return Err(shape_err(
                "matvec",
                format!("{:?} x {:?}", tm.shape(), tv.shape()),
            ));
        }
        let (n, d) = (tm.rows(), tm.cols());
        let mut data = vec![0.0; n];
        for i in 0..n {
            let mut acc = 0.0;
            let row = tm.row_slice(i);
            for j in 0..d {
                acc += row[j] * tv.data()[j];
            }
            data[i] = acc;
        }
        let value = Tensor::vector(data);
        let ng = self.inputs_need_grad(&[m, v]);
        Ok(self.push(value, Op::MatVec(m, v), ng))
    }

    pub fn vecmat(&mut self, v: Var, m: Var) -> Result<Var, TensorError> {
        let (tv, tm) = (self.value(v), self.value(m));
        if tm.shape().len() != 2 || tv.shape() != [tm.rows()] {
            return Err(shape_err(
                "vecmat",
                format!("{:?} x {:?}", tv.shape(), tm.shape()),
            ));
        }
        let (n, d) = (tm.rows(), tm.cols());
        let mut data = vec![0.0; d];
        for i in 0..n {
            let f = tv.data()[i];
            if f != 0.0 {
                let row = tm.row_slice(i);
                for j in 0..d {
                    data[j] += f * row[j];
                }
            }
        }
        let value = Tensor::vector(data);
        let ng = self.inputs_need_grad(&[v, m]);
        Ok(self.push(value, Op::VecMat(v, m), ng))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 1 || ta.shape() != tb.shape() {
            return Err(shape_err(
                "dot",
                format!("{:?} . {:?}", ta.shape(), tb.shape()),
            ));
        }
        let acc: f64 = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).sum();
        let ng = self.inputs_need_grad(&[a, b]);
        Ok(self.push(Tensor::scalar(acc), Op::Dot(a, b), ng))
    }

    pub fn gather_rows(&mut self, x: Var, indices: Vec<usize>) -> Result<Var, TensorError> {
        let tx = self.value(x);
        if tx.shape().len() != 2 {
            return Err(shape_err(
                "gather_rows",
                format!("expected matrix, got {:?}", tx.shape()),
            ));
        }
        let (n, d) = (tx.rows(), tx.cols());
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in &indices {
            if i >= n {
                return Err(TensorError::IndexOutOfBounds {
                    op: "gather_rows",
                    index: i,
                    bound: n,
                });
            }
            data.extend_from_slice(tx.row_slice(i));
        }
        let value = Tensor {
            shape: vec![indices.len(), d],
            data,
        };
        let ng = self.inputs_need_grad(&[x]);
        Ok(self.push(value, Op::GatherRows(x, indices), ng))
    }

    /// Sum row i of `x` into output row `indices[i]` of a zeroed (n,d).
    pub fn scatter_add_rows(
        &mut self,
        x: Var,
        indices: Vec<usize>,
        n_out: usize,
    ) -> Result<Var, TensorError> {
        let tx = self.value(x);
        if tx.shape().len() != 2 || tx.rows() != indices.len() {
            return Err(shape_err(
                "scatter_add_rows",
                format!("{:?} with {} indices", tx.shape(), indices.len()),
            ));
        }
        let d = tx.cols();
        let mut data = vec![0.0; n_out * d];
        for (i, &t) in indices.iter().enumerate() {
            if t >= n_out {
                return Err(TensorError::IndexOutOfBounds {
                    op: "scatter_add_rows",
                    index: t,
                    bound: n_out,
                });
            }
            let src = tx.row_slice(i);
            for j in 0..d {
                data[t * d + j] += src[j];
            }
        }
        let value = Tensor {
            shape: vec![n_out, d],
            data,
        };
        let ng = self.inputs_need_grad(&[x]);
        Ok(self.push(value, Op::ScatterAddRows(x, indices), ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(shape_err("concat_cols", "no inputs".into()));
        }
        let n = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            if t.shape().len() != 2 || t.rows() != n {
                return Err(shape_err(
                    "concat_cols",
                    format!("row counts differ: {:?}", t.shape()),
                ));
            }
            total += t.cols();
        }
        let mut data = Vec::with_capacity(n * total);
        for i in 0..n {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        let value = Tensor {
            shape: vec![n, total],
            data,
        };
        let ng = self.inputs_need_grad(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn concat_vec(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(shape_err("concat_vec", "no inputs".into()));
        }
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.shape().len() != 1 {
                return Err(shape_err(
                    "concat_vec",
                    format!("expected vectors, got {:?}", t.shape()),
                ));
            }
            data.extend_from_slice(t.data());
        }
        let value = Tensor::vector(data);
        let ng = self.inputs_need_grad(parts);
        Ok(self.push(value, Op::ConcatVec(parts.to_vec()), ng))
    }

    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(shape_err("stack_rows", "no inputs".into()));
        }
        let d = self.value(parts[0]).numel();
        let mut data = Vec::with_capacity(parts.len() * d);
        for &p in parts {
            let t = self.value(p);
            if t.shape() != [d] {
                return Err(shape_err(
                    "stack_rows",
                    format!("expected ({d},) rows, got {:?}", t.shape()),
                ));
            }
            data.extend_from_slice(t.data());
        }
        let value = Tensor {
            shape: vec![parts.len(), d],
            data,
        };
        let ng = self.inputs_need_grad(parts);
        Ok(self.push(value, Op::StackRows(parts.to_vec()), ng))
    }

    pub fn row(&mut self, x: Var, i: usize) -> Result<Var, TensorError> {
        let tx = self.value(x);
        if tx.shape().len() != 2 || i >= tx.rows() {
            return Err(TensorError::IndexOutOfBounds {
                op: "row",
                index: i,
                bound: tx.rows(),
            });
        }
        let value = Tensor::vector(tx.row_slice(i).to_vec());
        let ng = self.inputs_need_grad(&[x]);
        Ok(self.push(value, Op::Row(x, i), ng))
    }

    pub fn column(&mut self, x: Var, j: usize) -> Result<Var, TensorError> {
        let tx = self.value(x);
        if tx.shape().len() != 2 || j >= tx.cols() {
            return Err(TensorError::IndexOutOfBounds {
                op: "column",
                index: j,
                bound: tx.cols(),
            });
        }
        let (n, d) = (tx.rows(), tx.cols());
        let data = (0..n).map(|i| tx.data()[i * d + j]).collect();
        let value = Tensor::vector(data);
        let ng = self.inputs_need_grad(&[x]);
        Ok(self.push(value, Op::Column(x, j), ng))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let tx = self.value(x);
        let value = Tensor {
            shape: tx.shape().to_vec(),
            data: tx.data().iter().map(|v| f(*v)).collect(),
        };
        let ng = self.inputs_need_grad(&[x]);
        self.push(value, op, ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Log(x))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, |v| -v, Op::Neg(x))
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::AddConst(x))
    }

    pub fn mul_const(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::MulConst(x, c))
    }

    /// Numerically stable softmax over a rank-1 tensor.
    pub fn softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        let tx = self.value(x);
        if tx.shape().len() != 1 || tx.numel() == 0 {
            return Err(shape_err(
                "softmax",
                format!("expected non-empty vector, got {:?}", tx.shape()),
            ));
        }
        let max = tx.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = tx.data().iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let value = Tensor::vector(exps.into_iter().map(|e| e / sum).collect());
        let ng = self.inputs_need_grad(&[x]);
        Ok(self.push(value, Op::SoftmaxVec(x), ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let acc: f64 = self.value(x).data().iter().sum();
        let ng = self.inputs_need_grad(&[x]);
        self.push(Tensor::scalar(acc), Op::Sum(x), ng)
    }

    pub fn mean_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        let tx = self.value(x);
        if tx.shape().len() != 2 || tx.rows() == 0 {
            return Err(shape_err(
                "mean_rows",
                format!("expected non-empty matrix, got {:?}", tx.shape()),
            ));
        }
        let (n, d) = (tx.rows(), tx.cols());
        let mut data = vec![0.0; d];
        for i in 0..n {
            let row = tx.row_slice(i);
            for j in 0..d {
                data[j] += row[j];
            }
        }
        for v in &mut data {
            *v /= n as f64;
        }
        let value = Tensor::vector(data);
        let ng = self.inputs_need_grad(&[x]);
        Ok(self.push(value, Op::MeanRows(x), ng))
    }

    /// Inverted dropout: kept elements are scaled by 1/(1-rate) so the
    /// evaluation path needs no rescaling. `rate == 0` is the identity.
    pub fn dropout<R: Rng>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::BadDropoutRate(rate));
        }
        let tx = self.value(x);
        let scale = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..tx.numel())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { scale })
            .collect();
        let value = Tensor {
            shape: tx.shape().to_vec(),
            data: tx.data().iter().zip(&mask).map(|(v, m)| v * m).collect(),
        };
        let ng = self.inputs_need_grad(&[x]);
        Ok(self.push(value, Op::Dropout(x, mask), ng))
    }

    /// Reverse sweep from a scalar loss. Checks every forward value is
    /// finite first, and flags the producing op if a gradient goes NaN.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(TensorError::NonScalarLoss(lt.shape().to_vec()));
        }
        for node in &self.nodes {
            if !node.value.all_finite() {
                return Err(TensorError::NonFinite {
                    op: node.op.name().to_string(),
                });
            }
        }

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let go = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            if go.data().iter().any(|v| v.is_nan()) {
                return Err(TensorError::NanGradient {
                    op: node.op.name().to_string(),
                });
            }
            self.propagate(idx, &go, &mut grads);
            grads[idx] = Some(go);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => {
                for (a, b) in g.data.iter_mut().zip(delta.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, idx: usize, go: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, go.clone());
                self.accumulate(grads, *b, go.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, go.clone());
                let mut d = go.clone();
                for v in &mut d.data {
                    *v = -*v;
                }
                self.accumulate(grads, *b, d);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let da = elementwise_product(go, tb);
                let db = elementwise_product(go, ta);
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::AddRow(x, row) => {
                self.accumulate(grads, *x, go.clone());
                let (n, d) = (go.rows(), go.cols());
                let mut dr = vec![0.0; d];
                for i in 0..n {
                    let r = go.row_slice(i);
                    for j in 0..d {
                        dr[j] += r[j];
                    }
                }
                self.accumulate(grads, *row, Tensor::vector(dr));
            }
            Op::AddScalarT(x, s) => {
                self.accumulate(grads, *x, go.clone());
                let total: f64 = go.data().iter().sum();
                self.accumulate(grads, *s, Tensor::scalar(total));
            }
            Op::ScaleRows(x, s) => {
                let (tx, ts) = (self.value(*x), self.value(*s));
                let (n, d) = (tx.rows(), tx.cols());
                let mut dx = go.clone();
                let mut ds = vec![0.0; n];
                for i in 0..n {
                    let f = ts.data()[i];
                    let gr = go.row_slice(i);
                    let xr = tx.row_slice(i);
                    let mut acc = 0.0;
                    for j in 0..d {
                        acc += gr[j] * xr[j];
                        dx.data[i * d + j] = gr[j] * f;
                    }
                    ds[i] = acc;
                }
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *s, Tensor::vector(ds));
            }
            Op::Matmul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, matmul_nt(go, tb));
                self.accumulate(grads, *b, matmul_tn(ta, go));
            }
            Op::MatVec(m, v) => {
                let (tm, tv) = (self.value(*m), self.value(*v));
                let (n, d) = (tm.rows(), tm.cols());
                let mut dm = vec![0.0; n * d];
                let mut dv = vec![0.0; d];
                for i in 0..n {
                    let g = go.data()[i];
                    if g != 0.0 {
                        let row = tm.row_slice(i);
                        for j in 0..d {
                            dm[i * d + j] = g * tv.data()[j];
                            dv[j] += g * row[j];
                        }
                    }
                }
                self.accumulate(
                    grads,
                    *m,
                    Tensor {
                        shape: vec![n, d],
                        data: dm,
                    },
                );
                self.accumulate(grads, *v, Tensor::vector(dv));
            }
            Op::VecMat(v, m) => {
                let (tv, tm) = (self.value(*v), self.value(*m));
                let (n, d) = (tm.rows(), tm.cols());
                let mut dv = vec![0.0; n];
                let mut dm = vec![0.0; n * d];
                for i in 0..n {
                    let row = tm.row_slice(i);
                    let f = tv.data()[i];
                    let mut acc = 0.0;
                    for j in 0..d {
                        acc += row[j] * go.data()[j];
                        dm[i * d + j] = f * go.data()[j];
                    }
                    dv[i] = acc;
                }
                self.accumulate(grads, *v, Tensor::vector(dv));
                self.accumulate(
                    grads,
                    *m,
                    Tensor {
                        shape: vec![n, d],
                        data: dm,
                    },
                );
            }
            Op::Dot(a, b) => {
                let g = go.item();
                let (ta, tb) = (self.value(*a), self.value(*b));
                let da = Tensor::vector(tb.data().iter().map(|v| g * v).collect());
                let db = Tensor::vector(ta.data().iter().map(|v| g * v).collect());
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::GatherRows(x, indices) => {
                let tx = self.value(*x);
                let (n, d) = (tx.rows(), tx.cols());
                let mut dx = vec![0.0; n * d];
                for (i, &t) in indices.iter().enumerate() {
                    let src = go.row_slice(i);
                    for j in 0..d {
                        dx[t * d + j] += src[j];
                    }
                }
                self.accumulate(
                    grads,
                    *x,
                    Tensor {
                        shape: vec![n, d],
                        data: dx,
                    },
                );
            }
            Op::ScatterAddRows(x, indices) => {
                let tx = self.value(*x);
                let (m, d) = (tx.rows(), tx.cols());
                let mut dx = vec![0.0; m * d];
                for (i, &t) in indices.iter().enumerate() {
                    let src = go.row_slice(t);
                    dx[i * d..(i + 1) * d].copy_from_slice(src);
                }
                self.accumulate(
                    grads,
                    *x,
                    Tensor {
                        shape: vec![m, d],
                        data: dx,
                    },
                );
            }
            Op::ConcatCols(parts) => {
                let n = go.rows();
                let mut offset = 0;
                for &p in parts {
                    let d = self.value(p).cols();
                    let mut dp = Vec::with_capacity(n * d);
                    for i in 0..n {
                        let r = go.row_slice(i);
                        dp.extend_from_slice(&r[offset..offset + d]);
                    }
                    offset += d;
                    self.accumulate(
                        grads,
                        p,
                        Tensor {
                            shape: vec![n, d],
                            data: dp,
                        },
                    );
                }
            }
            Op::ConcatVec(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    let dp = Tensor::vector(go.data()[offset..offset + len].to_vec());
                    offset += len;
                    self.accumulate(grads, p, dp);
                }
            }
            Op::StackRows(parts) => {
                for (i, &p) in parts.iter().enumerate() {
                    let dp = Tensor::vector(go.row_slice(i).to_vec());
                    self.accumulate(grads, p, dp);
                }
            }
            Op::Row(x, i) => {
                let tx = self.value(*x);
                let (n, d) = (tx.rows(), tx.cols());
                let mut dx = vec![0.0; n * d];
                dx[i * d..(i + 1) * d].copy_from_slice(go.data());
                self.accumulate(
                    grads,
                    *x,
                    Tensor {
                        shape: vec![n, d],
                        data: dx,
                    },
                );
            }
            Op::Column(x, j) => {
                let tx = self.value(*x);
                let (n, d) = (tx.rows(), tx.cols());
                let mut dx = vec![0.0; n * d];
                for i in 0..n {
                    dx[i * d + j] = go.data()[i];
                }
                self.accumulate(
                    grads,
                    *x,
                    Tensor {
                        shape: vec![n, d],
                        data: dx,
                    },
                );
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                let dx = Tensor {
                    shape: y.shape().to_vec(),
                    data: go
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(g, v)| g * v * (1.0 - v))
                        .collect(),
                };
                self.accumulate(grads, *x, dx);
            }
            Op::Tanh(x) => {
                let y = &node.value;
                let dx = Tensor {
                    shape: y.shape().to_vec(),
                    data: go
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(g, v)| g * (1.0 - v * v))
                        .collect(),
                };
                self.accumulate(grads, *x, dx);
            }
            Op::Relu(x) => {
                let tx = self.value(*x);
                let dx = Tensor {
                    shape: tx.shape().to_vec(),
                    data: go
                        .data()
                        .iter()
                        .zip(tx.data())
                        .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                        .collect(),
                };
                self.accumulate(grads, *x, dx);
            }
            Op::Log(x) => {
                let tx = self.value(*x);
                let dx = Tensor {
                    shape: tx.shape().to_vec(),
                    data: go
                        .data()
                        .iter()
                        .zip(tx.data())
                        .map(|(g, v)| g / v)
                        .collect(),
                };
                self.accumulate(grads, *x, dx);
            }
            Op::Neg(x) => {
                let dx = Tensor {
                    shape: go.shape().to_vec(),
                    data: go.data().iter().map(|g| -g).collect(),
                };
                self.accumulate(grads, *x, dx);
            }
            Op::SoftmaxVec(x) => {
                let y = &node.value;
                let inner: f64 = go.data().iter().zip(y.data()).map(|(g, v)| g * v).sum();
                let dx = Tensor::vector(
                    go.data()
                        .iter()
                        .zip(y.data())
                        .map(|(g, v)| v * (g - inner))
                        .collect(),
                );
                self.accumulate(grads, *x, dx);
            }
            Op::Sum(x) => {
                let tx = self.value(*x);
                let g = go.item();
                let dx = Tensor {
                    shape: tx.shape().to_vec(),
                    data: vec![g; tx.numel()],
                };
                self.accumulate(grads, *x, dx);
            }
            Op::MeanRows(x) => {
                let tx = self.value(*x);
                let (n, d) = (tx.rows(), tx.cols());
                let inv = 1.0 / n as f64;
                let mut dx = Vec::with_capacity(n * d);
                for _ in 0..n {
                    dx.extend(go.data().iter().map(|g| g * inv));
                }
                self.accumulate(
                    grads,
                    *x,
                    Tensor {
                        shape: vec![n, d],
                        data: dx,
                    },
                );
            }
            Op::AddConst(x) => {
                self.accumulate(grads, *x, go.clone());
            }
            Op::MulConst(x, c) => {
                let dx = Tensor {
                    shape: go.shape().to_vec(),
                    data: go.data().iter().map(|g| g * c).collect(),
                };
                self.accumulate(grads, *x, dx);
            }
            Op::Dropout(x, mask) => {
                let dx = Tensor {
                    shape: go.shape().to_vec(),
                    data: go.data().iter().zip(mask).map(|(g, m)| g * m).collect(),
                };
                self.accumulate(grads, *x, dx);
            }
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn elementwise_product(a: &Tensor, b: &Tensor) -> Tensor {
    Tensor {
        shape: a.shape().to_vec(),
        data: a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect(),
    }
}

fn matmul_nn(a: &Tensor, b: &Tensor) -> Tensor {
    let m = a.rows();
    let n = b.cols();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = a.row_slice(i);
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                let brow = &b.data()[kk * n..(kk + 1) * n];
                for j in 0..n {
                    orow[j] += av * brow[j];
                }
            }
        }
    }
    Tensor {
        shape: vec![m, n],
        data: out,
    }
}

/// a (m,n) x b^T where b is (k,n) -> (m,k)
fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, n) = (a.rows(), a.cols());
    let k = b.rows();
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let arow = a.row_slice(i);
        for kk in 0..k {
            let brow = b.row_slice(kk);
            let mut acc = 0.0;
            for j in 0..n {
                acc += arow[j] * brow[j];
            }
            out[i * k + kk] = acc;
        }
    }
    Tensor {
        shape: vec![m, k],
        data: out,
    }
}

/// a^T x b where a is (m,k), b is (m,n) -> (k,n)
fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.rows(), a.cols());
    let n = b.cols();
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let arow = a.row_slice(i);
        let brow = b.row_slice(i);
        for (kk, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                let orow = &mut out[kk * n..(kk + 1) * n];
                for j in 0..n {
                    orow[j] += av * brow[j];
                }
            }
        }
    }
    Tensor {
        shape: vec![k, n],
        data: out,
    }
}
