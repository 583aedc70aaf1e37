//! Eager computation graph with a reverse sweep.
//!
//! Every operation is evaluated when it is pushed, and the node keeps its
//! output so the reverse sweep can replay local derivatives. Nodes that do not
//! depend on a differentiable leaf are skipped during the sweep.

use super::scalar::Scalar;
use super::tensor::{matmul, matmul_lhs_t, matmul_rhs_t, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Slice { src: usize, offset: usize },
    MatMul(usize, usize),
    AddRow(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    AddConst(usize),
    Relu(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    Softplus(usize),
    Square(usize),
    Mean(usize),
    Sum(usize),
    MeanRows(usize),
    RepeatRows(usize),
    ConcatCols(usize, usize),
    Column(usize, usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Slice { .. } => "slice",
            Op::MatMul(..) => "matmul",
            Op::AddRow(..) => "add_row",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::AddConst(..) => "add_const",
            Op::Relu(_) => "relu",
            Op::Tanh(_) => "tanh",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Softplus(_) => "softplus",
            Op::Square(_) => "square",
            Op::Mean(_) => "mean",
            Op::Sum(_) => "sum",
            Op::MeanRows(_) => "mean_rows",
            Op::RepeatRows(_) => "repeat_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::Column(..) => "column",
        }
    }
}

struct Node<T> {
    op: Op,
    value: Tensor<T>,
    tracked: bool,
}

/// First node whose output contained NaN or ±Inf.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NonFiniteNode {
    pub node: usize,
    pub primitive: &'static str,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    non_finite: Option<NonFiniteNode>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), non_finite: None }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor<T>, tracked: bool) -> Var {
        let id = self.nodes.len();
        if self.non_finite.is_none() && !value.is_finite() {
            self.non_finite = Some(NonFiniteNode { node: id, primitive: op.name() });
        }
        self.nodes.push(Node { op, value, tracked });
        Var(id)
    }

    fn tracked(&self, v: usize) -> bool {
        self.nodes[v].tracked
    }

    pub fn non_finite(&self) -> Option<NonFiniteNode> {
        self.non_finite
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> T {
        let t = self.value(v);
        assert_eq!(t.shape(), (1, 1), "scalar() on a non-scalar node");
        t.data()[0]
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Constant leaf; never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn constant_f64(&mut self, rows: usize, cols: usize, values: &[f64]) -> Var {
        let data = values.iter().map(|&v| T::from_f64(v)).collect();
        self.constant(Tensor::from_vec(rows, cols, data))
    }

    /// Reinterprets `len = rows*cols` consecutive entries of `src` (row-major)
    /// starting at `offset` as a `rows×cols` matrix.
    pub fn slice(&mut self, src: Var, offset: usize, rows: usize, cols: usize) -> Var {
        let s = &self.nodes[src.0].value;
        assert!(offset + rows * cols <= s.data().len(), "slice out of range");
        let v = Tensor::from_vec(rows, cols, s.data()[offset..offset + rows * cols].to_vec());
        let tracked = self.tracked(src.0);
        self.push(Op::Slice { src: src.0, offset }, v, tracked)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.cols(), vb.rows(), "matmul inner dimensions differ");
        let v = matmul(va, vb);
        let tracked = self.tracked(a.0) || self.tracked(b.0);
        self.push(Op::MatMul(a.0, b.0), v, tracked)
    }

    /// Adds the 1×n row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(bias));
        assert_eq!(vb.rows(), 1);
        assert_eq!(va.cols(), vb.cols(), "bias width differs");
        let mut v = va.clone();
        let cols = va.cols();
        for row in v.data_mut().chunks_mut(cols) {
            for (x, &b) in row.iter_mut().zip(vb.data()) {
                *x += b;
            }
        }
        let tracked = self.tracked(a.0) || self.tracked(bias.0);
        self.push(Op::AddRow(a.0, bias.0), v, tracked)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "{} shape mismatch", op.name());
        let v = va.zip_map(vb, f);
        let tracked = self.tracked(a.0) || self.tracked(b.0);
        self.push(op, v, tracked)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x / y, Op::Div(a.0, b.0))
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op) -> Var {
        let v = self.value(a).map(f);
        let tracked = self.tracked(a.0);
        self.push(op, v, tracked)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x.scale(c), Op::Scale(a.0, c))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let c = T::from_f64(c);
        self.unary(a, |x| x + c, Op::AddConst(a.0))
    }

    /// ReLU with subgradient 0 at the kink.
    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x.re() > 0.0 { x } else { T::zero() }, Op::Relu(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, T::tanh, Op::Tanh(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, T::exp, Op::Exp(a.0))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, T::ln, Op::Log(a.0))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, T::softplus, Op::Softplus(a.0))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a.0))
    }

    /// Mean over all entries, 1×1.
    pub fn mean(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let n = va.data().len();
        assert!(n > 0, "mean of an empty tensor");
        let s = va.data().iter().fold(T::zero(), |acc, &x| acc + x);
        let v = Tensor::scalar(s.scale(1.0 / n as f64));
        let tracked = self.tracked(a.0);
        self.push(Op::Mean(a.0), v, tracked)
    }

    /// Sum over all entries, 1×1.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().fold(T::zero(), |acc, &x| acc + x);
        let tracked = self.tracked(a.0);
        self.push(Op::Sum(a.0), Tensor::scalar(s), tracked)
    }

    /// Column-wise mean, 1×cols. Rows are accumulated top to bottom.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let (n, c) = va.shape();
        assert!(n > 0, "mean_rows of an empty tensor");
        let mut acc = vec![T::zero(); c];
        for r in 0..n {
            for (s, &x) in acc.iter_mut().zip(va.row(r)) {
                *s += x;
            }
        }
        let inv = 1.0 / n as f64;
        let v = Tensor::from_vec(1, c, acc.into_iter().map(|s| s.scale(inv)).collect());
        let tracked = self.tracked(a.0);
        self.push(Op::MeanRows(a.0), v, tracked)
    }

    /// Stacks the 1×c row `a` into an n×c matrix.
    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Var {
        let va = self.value(a);
        assert_eq!(va.rows(), 1, "repeat_rows expects a single row");
        let mut data = Vec::with_capacity(n * va.cols());
        for _ in 0..n {
            data.extend_from_slice(va.data());
        }
        let v = Tensor::from_vec(n, va.cols(), data);
        let tracked = self.tracked(a.0);
        self.push(Op::RepeatRows(a.0), v, tracked)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.rows(), vb.rows(), "concat_cols row counts differ");
        let (n, ca, cb) = (va.rows(), va.cols(), vb.cols());
        let mut data = Vec::with_capacity(n * (ca + cb));
        for r in 0..n {
            data.extend_from_slice(va.row(r));
            data.extend_from_slice(vb.row(r));
        }
        let v = Tensor::from_vec(n, ca + cb, data);
        let tracked = self.tracked(a.0) || self.tracked(b.0);
        self.push(Op::ConcatCols(a.0, b.0), v, tracked)
    }

    /// Column `j` as an n×1 matrix.
    pub fn column(&mut self, a: Var, j: usize) -> Var {
        let va = self.value(a);
        assert!(j < va.cols(), "column index out of range");
        let data = (0..va.rows()).map(|r| va.get(r, j)).collect();
        let v = Tensor::from_vec(va.rows(), 1, data);
        let tracked = self.tracked(a.0);
        self.push(Op::Column(a.0, j), v, tracked)
    }

    /// Reverse sweep from the 1×1 node `out`; returns d out / d `wrt`.
    pub fn gradient(&self, out: Var, wrt: Var) -> Tensor<T> {
        let mut grads = self.backward(out);
        let (r, c) = self.value(wrt).shape();
        grads[wrt.0].take().unwrap_or_else(|| Tensor::zeros(r, c))
    }

    /// Adjoints of every tracked node reachable from `out`.
    fn backward(&self, out: Var) -> Vec<Option<Tensor<T>>> {
        assert_eq!(self.value(out).shape(), (1, 1), "backward from a non-scalar node");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Tensor::scalar(T::from_f64(1.0)));

        for id in (0..=out.0).rev() {
            let node = &self.nodes[id];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            match node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                }
                Op::Slice { src, offset } => {
                    let (r, c) = self.nodes[src].value.shape();
                    let acc = grads[src].get_or_insert_with(|| Tensor::zeros(r, c));
                    for (a, &x) in acc.data_mut()[offset..offset + g.data().len()].iter_mut().zip(g.data()) {
                        *a += x;
                    }
                }
                Op::MatMul(a, b) => {
                    if self.tracked(a) {
                        let ga = matmul_rhs_t(&g, &self.nodes[b].value);
                        accumulate(&mut grads, a, ga);
                    }
                    if self.tracked(b) {
                        let gb = matmul_lhs_t(&self.nodes[a].value, &g);
                        accumulate(&mut grads, b, gb);
                    }
                }
                Op::AddRow(a, bias) => {
                    if self.tracked(bias) {
                        let cols = g.cols();
                        let mut gb = Tensor::zeros(1, cols);
                        for row in g.data().chunks(cols) {
                            for (s, &x) in gb.data_mut().iter_mut().zip(row) {
                                *s += x;
                            }
                        }
                        accumulate(&mut grads, bias, gb);
                    }
                    if self.tracked(a) {
                        accumulate(&mut grads, a, g);
                    }
                }
                Op::Add(a, b) => {
                    if self.tracked(b) {
                        accumulate(&mut grads, b, g.clone());
                    }
                    if self.tracked(a) {
                        accumulate(&mut grads, a, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.tracked(b) {
                        accumulate(&mut grads, b, g.map(|x| -x));
                    }
                    if self.tracked(a) {
                        accumulate(&mut grads, a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.tracked(a) {
                        let ga = g.zip_map(&self.nodes[b].value, |x, y| x * y);
                        accumulate(&mut grads, a, ga);
                    }
                    if self.tracked(b) {
                        let gb = g.zip_map(&self.nodes[a].value, |x, y| x * y);
                        accumulate(&mut grads, b, gb);
                    }
                }
                Op::Div(a, b) => {
                    let vb = &self.nodes[b].value;
                    if self.tracked(a) {
                        accumulate(&mut grads, a, g.zip_map(vb, |x, y| x / y));
                    }
                    if self.tracked(b) {
                        // d(a/b)/db = -(a/b)/b
                        let q = &node.value;
                        let gq = g.zip_map(q, |x, y| x * y);
                        accumulate(&mut grads, b, gq.zip_map(vb, |x, y| -(x / y)));
                    }
                }
                Op::Scale(a, c) => accumulate(&mut grads, a, g.map(|x| x.scale(c))),
                Op::AddConst(a) => accumulate(&mut grads, a, g),
                Op::Relu(a) => {
                    let x = &self.nodes[a].value;
                    let ga = g.zip_map(x, |gv, xv| if xv.re() > 0.0 { gv } else { T::zero() });
                    accumulate(&mut grads, a, ga);
                }
                Op::Tanh(a) => {
                    let one = T::from_f64(1.0);
                    let ga = g.zip_map(&node.value, |gv, y| gv * (one - y * y));
                    accumulate(&mut grads, a, ga);
                }
                Op::Exp(a) => {
                    let ga = g.zip_map(&node.value, |gv, y| gv * y);
                    accumulate(&mut grads, a, ga);
                }
                Op::Log(a) => {
                    let ga = g.zip_map(&self.nodes[a].value, |gv, x| gv / x);
                    accumulate(&mut grads, a, ga);
                }
                Op::Softplus(a) => {
                    let ga = g.zip_map(&self.nodes[a].value, |gv, x| gv * x.sigmoid());
                    accumulate(&mut grads, a, ga);
                }
                Op::Square(a) => {
                    let ga = g.zip_map(&self.nodes[a].value, |gv, x| gv * x.scale(2.0));
                    accumulate(&mut grads, a, ga);
                }
                Op::Mean(a) => {
                    let (r, c) = self.nodes[a].value.shape();
                    let share = g.data()[0].scale(1.0 / (r * c) as f64);
                    accumulate(&mut grads, a, Tensor::from_vec(r, c, vec![share; r * c]));
                }
                Op::Sum(a) => {
                    let (r, c) = self.nodes[a].value.shape();
                    accumulate(&mut grads, a, Tensor::from_vec(r, c, vec![g.data()[0]; r * c]));
                }
                Op::MeanRows(a) => {
                    let (r, c) = self.nodes[a].value.shape();
                    let inv = 1.0 / r as f64;
                    let row: Vec<T> = g.data().iter().map(|x| x.scale(inv)).collect();
                    let mut data = Vec::with_capacity(r * c);
                    for _ in 0..r {
                        data.extend_from_slice(&row);
                    }
                    accumulate(&mut grads, a, Tensor::from_vec(r, c, data));
                }
                Op::RepeatRows(a) => {
                    let c = g.cols();
                    let mut ga = Tensor::zeros(1, c);
                    for row in g.data().chunks(c) {
                        for (s, &x) in ga.data_mut().iter_mut().zip(row) {
                            *s += x;
                        }
                    }
                    accumulate(&mut grads, a, ga);
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.nodes[a].value.cols();
                    let cb = self.nodes[b].value.cols();
                    let n = g.rows();
                    if self.tracked(a) {
                        let data = (0..n).flat_map(|r| g.row(r)[..ca].to_vec()).collect();
                        accumulate(&mut grads, a, Tensor::from_vec(n, ca, data));
                    }
                    if self.tracked(b) {
                        let data = (0..n).flat_map(|r| g.row(r)[ca..].to_vec()).collect();
                        accumulate(&mut grads, b, Tensor::from_vec(n, cb, data));
                    }
                }
                Op::Column(a, j) => {
                    let (r, c) = self.nodes[a].value.shape();
                    let acc = grads[a].get_or_insert_with(|| Tensor::zeros(r, c));
                    for (i, &x) in g.data().iter().enumerate() {
                        acc.data_mut()[i * c + j] += x;
                    }
                }
            }
        }
        grads
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], id: usize, g: Tensor<T>) {
    match &mut grads[id] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
