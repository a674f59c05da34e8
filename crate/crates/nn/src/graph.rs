//! Tape-based reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Every value is a 2-D matrix; vectors are `1 x n` rows and scalars are `1 x 1`.
//! Binary elementwise ops broadcast along any axis of length one, and the
//! backward pass sums the incoming gradient back down to the operand's shape.

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

use crate::params::{ParamId, ParamStore};

pub type Matrix = Array2<f64>;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Transpose(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    SumAll(Var),
    SumRows(Var),
    SumCols(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize, usize),
    SliceCols(Var, usize, usize),
    GatherRows(Var, Vec<usize>),
    PickPerRow(Var, Vec<usize>),
    /// Precomputed local gradients w.r.t. each input of a scalar-valued node.
    Custom(Vec<(Var, Matrix)>),
}

struct Node {
    value: Arc<Matrix>,
    op: Op,
    requires_grad: bool,
}

/// A computation tape. Nodes are appended in topological order, so the
/// backward pass is a single reverse sweep.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    nodes: Vec<Option<Matrix>>,
    params: HashMap<ParamId, Matrix>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. a node, if the node took part in the loss.
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.nodes.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Matrix> {
        self.params.get(&id)
    }

    pub fn params(&self) -> &HashMap<ParamId, Matrix> {
        &self.params
    }

    pub fn into_params(self) -> HashMap<ParamId, Matrix> {
        self.params
    }
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> (usize, usize) {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            x
        } else if x == 1 {
            y
        } else {
            panic!("cannot broadcast shapes {a:?} and {b:?}")
        }
    };
    (dim(a.0, b.0), dim(a.1, b.1))
}

/// Sum a broadcast gradient back down to `shape`.
fn reduce_to(grad: Matrix, shape: (usize, usize)) -> Matrix {
    let mut g = grad;
    if shape.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    debug_assert_eq!(g.dim(), shape);
    g
}

fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

fn log_softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
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

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::Param => true,
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                self.rg(*a) || self.rg(*b)
            }
            Op::Scale(a, _)
            | Op::AddConst(a)
            | Op::Relu(a)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Sqrt(a)
            | Op::Transpose(a)
            | Op::SoftmaxRows(a)
            | Op::LogSoftmaxRows(a)
            | Op::SumAll(a)
            | Op::SumRows(a)
            | Op::SumCols(a)
            | Op::SliceRows(a, ..)
            | Op::SliceCols(a, ..)
            | Op::GatherRows(a, _)
            | Op::PickPerRow(a, _) => self.rg(*a),
            Op::ConcatRows(vs) | Op::ConcatCols(vs) => vs.iter().any(|v| self.rg(*v)),
            Op::Custom(parts) => parts.iter().any(|(v, _)| self.rg(*v)),
        };
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A differentiable input whose gradient can be read back with
    /// [`Gradients::wrt`].
    pub fn input(&mut self, value: Matrix) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].requires_grad = true;
        v
    }

    pub fn scalar_constant(&mut self, value: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), value))
    }

    /// Bind a parameter. Repeated calls return the same node so gradients
    /// from every use accumulate into one entry.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        let value = store.shared(id);
        self.nodes.push(Node {
            value,
            op: Op::Param,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn rows(&self, v: Var) -> usize {
        self.shape(v).0
    }

    pub fn cols(&self, v: Var) -> usize {
        self.shape(v).1
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.dim(), (1, 1), "scalar() on non-scalar node");
        m[[0, 0]]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(&Matrix, &Matrix) -> Matrix) -> Matrix {
        broadcast_shape(self.shape(a), self.shape(b));
        f(self.value(a), self.value(b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.binary(a, b, |x, y| x + y);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.binary(a, b, |x, y| x - y);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.binary(a, b, |x, y| x * y);
        self.push(value, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let value = self.binary(a, b, |x, y| x / y);
        self.push(value, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a) * factor;
        self.push(value, Op::Scale(a, factor))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// Add a constant (broadcastable) matrix, e.g. an attention mask.
    pub fn add_const(&mut self, a: Var, c: Matrix) -> Var {
        broadcast_shape(self.shape(a), c.dim());
        let value = self.value(a) + &c;
        self.push(value, Op::AddConst(a))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.add_const(a, Array2::from_elem((1, 1), c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::exp);
        self.push(value, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::ln);
        self.push(value, Op::Log(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::sqrt);
        self.push(value, Op::Sqrt(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        self.push(value, Op::Transpose(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        self.push(value, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let value = log_softmax_rows(self.value(a));
        self.push(value, Op::LogSoftmaxRows(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(value, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// `r x c -> r x 1`
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(value, Op::SumRows(a))
    }

    /// `r x c -> 1 x c`
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.push(value, Op::SumCols(a))
    }

    /// Average over rows, `r x c -> 1 x c`.
    pub fn mean_cols(&mut self, a: Var) -> Var {
        let n = self.rows(a) as f64;
        let s = self.sum_cols(a);
        self.scale(s, 1.0 / n)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        if parts.len() == 1 {
            return parts[0];
        }
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|v| self.value(*v).view()).collect();
        let value = concatenate(Axis(0), &views).expect("concat_rows: column mismatch");
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        if parts.len() == 1 {
            return parts[0];
        }
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|v| self.value(*v).view()).collect();
        let value = concatenate(Axis(1), &views).expect("concat_cols: row mismatch");
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        if start == 0 && end == self.rows(a) {
            return a;
        }
        let value = self.value(a).slice(s![start..end, ..]).to_owned();
        self.push(value, Op::SliceRows(a, start, end))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        if start == 0 && end == self.cols(a) {
            return a;
        }
        let value = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(value, Op::SliceCols(a, start, end))
    }

    pub fn row(&mut self, a: Var, i: usize) -> Var {
        self.slice_rows(a, i, i + 1)
    }

    /// Select rows by index (embedding lookup).
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let src = self.value(a);
        let mut value = Array2::zeros((idx.len(), src.ncols()));
        for (r, &i) in idx.iter().enumerate() {
            value.row_mut(r).assign(&src.row(i));
        }
        self.push(value, Op::GatherRows(a, idx.to_vec()))
    }

    /// `out[r, 0] = a[r, idx[r]]`.
    pub fn pick_per_row(&mut self, a: Var, idx: &[usize]) -> Var {
        let src = self.value(a);
        assert_eq!(src.nrows(), idx.len(), "pick_per_row: index length");
        let value = Array2::from_shape_fn((idx.len(), 1), |(r, _)| src[[r, idx[r]]]);
        self.push(value, Op::PickPerRow(a, idx.to_vec()))
    }

    /// Row-wise normalisation to zero mean and unit variance, no affine part.
    pub fn normalize_rows(&mut self, a: Var, eps: f64) -> Var {
        let c = self.cols(a) as f64;
        let sum = self.sum_rows(a);
        let mean = self.scale(sum, 1.0 / c);
        let centered = self.sub(a, mean);
        let sq = self.mul(centered, centered);
        let var_sum = self.sum_rows(sq);
        let var = self.scale(var_sum, 1.0 / c);
        let var = self.add_scalar(var, eps);
        let std = self.sqrt(var);
        self.div(centered, std)
    }

    /// Mean negative log-likelihood of `targets` under row-wise logits.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let logp = self.log_softmax_rows(logits);
        let picked = self.pick_per_row(logp, targets);
        let mean = self.mean_all(picked);
        self.neg(mean)
    }

    /// Dot product of two `1 x n` rows as a `1 x 1` node.
    pub fn dot_rows(&mut self, a: Var, b: Var) -> Var {
        let p = self.mul(a, b);
        self.sum_all(p)
    }

    /// Register a scalar node whose value and local gradients were computed
    /// outside the tape.
    pub fn custom_scalar(&mut self, value: f64, local_grads: Vec<(Var, Matrix)>) -> Var {
        for (v, g) in &local_grads {
            assert_eq!(self.shape(*v), g.dim(), "custom gradient shape mismatch");
        }
        self.push(Array2::from_elem((1, 1), value), Op::Custom(local_grads))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward from a non-scalar node");
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::ones((1, 1)));

        fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let y = &node.value;
            match &node.op {
                Op::Leaf | Op::Param => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        acc(&mut grads, *a, g.dot(&self.value(*b).t()));
                    }
                    if self.rg(*b) {
                        acc(&mut grads, *b, self.value(*a).t().dot(&g));
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        acc(&mut grads, *a, reduce_to(g.clone(), self.shape(*a)));
                    }
                    if self.rg(*b) {
                        acc(&mut grads, *b, reduce_to(g, self.shape(*b)));
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(*a) {
                        acc(&mut grads, *a, reduce_to(g.clone(), self.shape(*a)));
                    }
                    if self.rg(*b) {
                        acc(&mut grads, *b, reduce_to(-g, self.shape(*b)));
                    }
                }
                Op::Mul(a, b) => {
                    if self.rg(*a) {
                        let ga = &g * self.value(*b);
                        acc(&mut grads, *a, reduce_to(ga, self.shape(*a)));
                    }
                    if self.rg(*b) {
                        let gb = &g * self.value(*a);
                        acc(&mut grads, *b, reduce_to(gb, self.shape(*b)));
                    }
                }
                Op::Div(a, b) => {
                    let bv = self.value(*b);
                    if self.rg(*a) {
                        let ga = &g / bv;
                        acc(&mut grads, *a, reduce_to(ga, self.shape(*a)));
                    }
                    if self.rg(*b) {
                        // d(a/b)/db = -y/b
                        let gb = -(&g * &**y) / bv;
                        acc(&mut grads, *b, reduce_to(gb, self.shape(*b)));
                    }
                }
                Op::Scale(a, f) => acc(&mut grads, *a, g * *f),
                Op::AddConst(a) => acc(&mut grads, *a, reduce_to(g, self.shape(*a))),
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let mut ga = g;
                    ga.zip_mut_with(x, |gv, &xv| {
                        if xv <= 0.0 {
                            *gv = 0.0
                        }
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = &g * &y.mapv(|t| 1.0 - t * t);
                    acc(&mut grads, *a, ga);
                }
                Op::Exp(a) => acc(&mut grads, *a, &g * &**y),
                Op::Log(a) => acc(&mut grads, *a, &g / self.value(*a)),
                Op::Sqrt(a) => acc(&mut grads, *a, &g / &(&**y * 2.0)),
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
                Op::SoftmaxRows(a) => {
                    let gy = &g * &**y;
                    let dot = gy.sum_axis(Axis(1)).insert_axis(Axis(1));
                    let ga = &gy - &(&**y * &dot);
                    acc(&mut grads, *a, ga);
                }
                Op::LogSoftmaxRows(a) => {
                    let gsum = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                    let ga = &g - &(y.mapv(f64::exp) * &gsum);
                    acc(&mut grads, *a, ga);
                }
                Op::SumAll(a) => {
                    let shape = self.shape(*a);
                    acc(&mut grads, *a, Array2::from_elem(shape, g[[0, 0]]));
                }
                Op::SumRows(a) => {
                    let shape = self.shape(*a);
                    let ga = g.broadcast(shape).expect("sum_rows grad").to_owned();
                    acc(&mut grads, *a, ga);
                }
                Op::SumCols(a) => {
                    let shape = self.shape(*a);
                    let ga = g.broadcast(shape).expect("sum_cols grad").to_owned();
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let r = self.rows(*p);
                        if self.rg(*p) {
                            acc(&mut grads, *p, g.slice(s![offset..offset + r, ..]).to_owned());
                        }
                        offset += r;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let c = self.cols(*p);
                        if self.rg(*p) {
                            acc(&mut grads, *p, g.slice(s![.., offset..offset + c]).to_owned());
                        }
                        offset += c;
                    }
                }
                Op::SliceRows(a, start, end) => {
                    let mut ga = Array2::zeros(self.shape(*a));
                    ga.slice_mut(s![*start..*end, ..]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start, end) => {
                    let mut ga = Array2::zeros(self.shape(*a));
                    ga.slice_mut(s![.., *start..*end]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::GatherRows(a, idx) => {
                    let mut ga = Array2::zeros(self.shape(*a));
                    for (r, &i) in idx.iter().enumerate() {
                        let mut dst = ga.row_mut(i);
                        dst += &g.row(r);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::PickPerRow(a, idx) => {
                    let mut ga = Array2::zeros(self.shape(*a));
                    for (r, &i) in idx.iter().enumerate() {
                        ga[[r, i]] += g[[r, 0]];
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Custom(parts) => {
                    let upstream = g[[0, 0]];
                    for (v, local) in parts {
                        if self.rg(*v) {
                            acc(&mut grads, *v, local * upstream);
                        }
                    }
                }
            }
        }

        let mut params = HashMap::new();
        for (id, v) in &self.param_vars {
            if let Some(g) = &grads[v.0] {
                params.insert(*id, g.clone());
            }
        }
        Gradients { nodes: grads, params }
    }
}
