//! Reverse-mode automatic differentiation over small dense `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! walks it in reverse and accumulates adjoints. Complex quantities are
//! carried as separate real and imaginary parts (see [`CVar`]).

use nalgebra::DMatrix;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length");
        Self { rows, cols, data }
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_vec(1, 1, vec![v])
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.cols, other.rows, "matmul shapes {:?} x {:?}", self.shape(), other.shape());
        let mut out = Tensor::zeros(self.rows, other.cols);
        let n = other.cols;
        for i in 0..self.rows {
            let orow = &mut out.data[i * n..(i + 1) * n];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[k * n..(k + 1) * n];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self^T * other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.rows, other.rows);
        let mut out = Tensor::zeros(self.cols, other.cols);
        let n = other.cols;
        for k in 0..self.rows {
            let brow = &other.data[k * n..(k + 1) * n];
            for i in 0..self.cols {
                let a = self.data[k * self.cols + i];
                if a == 0.0 {
                    continue;
                }
                let orow = &mut out.data[i * n..(i + 1) * n];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self * other^T`.
    pub fn matmul_t(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.cols, other.cols);
        let mut out = Tensor::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = &self.data[i * self.cols..(i + 1) * self.cols];
            for j in 0..other.rows {
                let b = &other.data[j * other.cols..(j + 1) * other.cols];
                out.data[i * other.rows + j] = a.iter().zip(b).map(|(x, y)| x * y).sum();
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|x| x * s)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    fn from_nalgebra(m: &DMatrix<f64>) -> Tensor {
        let (r, c) = m.shape();
        Tensor::from_vec(r, c, (0..r).flat_map(|i| (0..c).map(move |j| (i, j))).map(|(i, j)| m[(i, j)]).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    MulScalar(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Square(Var),
    Cos(Var),
    Sin(Var),
    Transpose(Var),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    SumRows(Var),
    SumCols(Var),
    Sum(Var),
    /// Row `k` of the output is the elementwise max over all input rows except `k`.
    MaxExcept(Var, Vec<usize>),
    /// Minimum entry with its flat index.
    Min(Var, usize),
    SoftmaxCols(Var),
    Solve(Var, Var),
    /// Rows of an `n x 2` input scaled to unit length; degenerate rows map to `(1, 0)`.
    UnitRows(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    /// Whether any parameter reaches this node.
    grad: bool,
}

/// Operation recorder for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    /// Number of unit-row normalizations that hit a zero pair.
    pub degenerate_pairs: usize,
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs = |v: &Var| self.nodes[v.0].grad;
        let grad = match &op {
            Op::Leaf => false,
            Op::Param => true,
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::AddRow(a, b)
            | Op::MulCol(a, b)
            | Op::MulScalar(a, b)
            | Op::Solve(a, b) => needs(a) || needs(b),
            Op::ConcatCols(parts) | Op::ConcatRows(parts) => parts.iter().any(needs),
            Op::Scale(a, _)
            | Op::Shift(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::Sqrt(a)
            | Op::Square(a)
            | Op::Cos(a)
            | Op::Sin(a)
            | Op::Transpose(a)
            | Op::Reshape(a)
            | Op::SliceCols(a, _)
            | Op::SliceRows(a, _)
            | Op::SumRows(a)
            | Op::SumCols(a)
            | Op::Sum(a)
            | Op::MaxExcept(a, _)
            | Op::Min(a, _)
            | Op::SoftmaxCols(a)
            | Op::UnitRows(a) => needs(a),
        };
        self.nodes.push(Node { value, op, grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Leaf bound to parameter `index`; repeated calls share one node.
    pub fn param(&mut self, index: usize, value: &Tensor) -> Var {
        if self.param_vars.len() <= index {
            self.param_vars.resize(index + 1, None);
        }
        if let Some(v) = self.param_vars[index] {
            return v;
        }
        let v = self.push(value.clone(), Op::Param);
        self.param_vars[index] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "elementwise shapes");
        Tensor { rows: x.rows, cols: x.cols, data: x.data.iter().zip(&y.data).map(|(&p, &q)| f(p, q)).collect() }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |x, y| x / y);
        self.push(v, Op::Div(a, b))
    }

    /// `a + 1 row^T` with `row` of shape `1 x c`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (self.value(a), self.value(row));
        assert_eq!((1, x.cols), r.shape(), "add_row shapes");
        let mut v = x.clone();
        for i in 0..x.rows {
            for j in 0..x.cols {
                v.data[i * x.cols + j] += r.data[j];
            }
        }
        self.push(v, Op::AddRow(a, row))
    }

    /// Scales row `i` of `a` by `col[i]`, `col` of shape `r x 1`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (x, c) = (self.value(a), self.value(col));
        assert_eq!((x.rows, 1), c.shape(), "mul_col shapes");
        let mut v = x.clone();
        for i in 0..x.rows {
            for j in 0..x.cols {
                v.data[i * x.cols + j] *= c.data[i];
            }
        }
        self.push(v, Op::MulCol(a, col))
    }

    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        assert_eq!(self.shape(s), (1, 1));
        let k = self.value(s).data[0];
        let v = self.value(a).scale(k);
        self.push(v, Op::MulScalar(a, s))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).scale(k);
        self.push(v, Op::Scale(a, k))
    }

    pub fn add_const(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| x + k);
        self.push(v, Op::Shift(a))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(a).map(f);
        self.push(v, op)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Ln(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(a, f64::cos, Op::Cos(a))
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, f64::sin, Op::Sin(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let x = self.value(a);
        assert_eq!(x.rows * x.cols, rows * cols, "reshape size");
        let v = Tensor::from_vec(rows, cols, x.data.clone());
        self.push(v, Op::Reshape(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut v = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let x = self.value(p);
            assert_eq!(x.rows, rows, "concat_cols rows");
            for i in 0..rows {
                v.data[i * cols + off..i * cols + off + x.cols].copy_from_slice(&x.data[i * x.cols..(i + 1) * x.cols]);
            }
            off += x.cols;
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.shape(parts[0]).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let x = self.value(p);
            assert_eq!(x.cols, cols, "concat_rows cols");
            data.extend_from_slice(&x.data);
            rows += x.rows;
        }
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.cols);
        let mut v = Tensor::zeros(x.rows, len);
        for i in 0..x.rows {
            v.data[i * len..(i + 1) * len].copy_from_slice(&x.data[i * x.cols + start..i * x.cols + start + len]);
        }
        self.push(v, Op::SliceCols(a, start))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.rows);
        let v = Tensor::from_vec(len, x.cols, x.data[start * x.cols..(start + len) * x.cols].to_vec());
        self.push(v, Op::SliceRows(a, start))
    }

    /// Column sums, `1 x c`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = Tensor::zeros(1, x.cols);
        for i in 0..x.rows {
            for j in 0..x.cols {
                v.data[j] += x.data[i * x.cols + j];
            }
        }
        self.push(v, Op::SumRows(a))
    }

    /// Row sums, `r x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = Tensor::from_vec(x.rows, 1, (0..x.rows).map(|i| x.data[i * x.cols..(i + 1) * x.cols].iter().sum()).collect());
        self.push(v, Op::SumCols(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let n = self.shape(a).0 as f64;
        let s = self.sum_rows(a);
        self.scale(s, 1.0 / n)
    }

    /// For `k < targets`, row `k` is the elementwise max over rows `j != k`.
    pub fn max_except(&mut self, a: Var, targets: usize) -> Var {
        let x = self.value(a);
        assert!(x.rows >= 2 && targets <= x.rows, "max_except needs another row");
        let mut v = Tensor::zeros(targets, x.cols);
        let mut arg = vec![0usize; targets * x.cols];
        for k in 0..targets {
            for c in 0..x.cols {
                let mut best = f64::NEG_INFINITY;
                let mut bi = usize::MAX;
                for j in (0..x.rows).filter(|&j| j != k) {
                    let val = x.data[j * x.cols + c];
                    if val > best || bi == usize::MAX {
                        best = val;
                        bi = j;
                    }
                }
                v.data[k * x.cols + c] = best;
                arg[k * x.cols + c] = bi;
            }
        }
        self.push(v, Op::MaxExcept(a, arg))
    }

    pub fn min(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (idx, &m) = x.data.iter().enumerate().min_by(|p, q| p.1.total_cmp(q.1)).expect("min of empty tensor");
        self.push(Tensor::scalar(m), Op::Min(a, idx))
    }

    /// Softmax over the rows of every column.
    pub fn softmax_cols(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = x.clone();
        for c in 0..x.cols {
            let m = (0..x.rows).map(|r| x.at(r, c)).fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for r in 0..x.rows {
                let e = (x.at(r, c) - m).exp();
                *v.at_mut(r, c) = e;
                s += e;
            }
            for r in 0..x.rows {
                *v.at_mut(r, c) /= s;
            }
        }
        self.push(v, Op::SoftmaxCols(a))
    }

    /// `A^{-1} B` for square `A`. Panics on a singular system.
    pub fn solve(&mut self, a: Var, b: Var) -> Var {
        let (am, bm) = (self.value(a).to_nalgebra(), self.value(b).to_nalgebra());
        let x = am.lu().solve(&bm).expect("singular system on tape");
        self.push(Tensor::from_nalgebra(&x), Op::Solve(a, b))
    }

    pub fn unit_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        assert_eq!(x.cols, 2, "unit_rows expects (re, im) pairs");
        let mut v = x.clone();
        let mut degenerate = 0;
        for r in 0..x.rows {
            let (p, q) = (x.data[2 * r], x.data[2 * r + 1]);
            let n = (p * p + q * q).sqrt();
            if n > 0.0 && n.is_finite() {
                v.data[2 * r] = p / n;
                v.data[2 * r + 1] = q / n;
            } else {
                v.data[2 * r] = 1.0;
                v.data[2 * r + 1] = 0.0;
                degenerate += 1;
            }
        }
        self.degenerate_pairs += degenerate;
        self.push(v, Op::UnitRows(a))
    }

    /// Reverse sweep from scalar `root`. Returns adjoints for every node.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.shape(root), (1, 1), "backward root must be scalar");
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::scalar(1.0));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads, param_vars: self.param_vars.clone() }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let nodes = &self.nodes;
        // Evaluates the adjoint expression only for inputs that lead to a parameter.
        macro_rules! acc {
            ($v:expr, $t:expr) => {{
                let v: Var = $v;
                if nodes[v.0].grad {
                    let t = $t;
                    match &mut grads[v.0] {
                        Some(e) => e.add_assign(&t),
                        slot => *slot = Some(t),
                    }
                }
            }};
        }
        // Adds `g` into the block of input `v` starting at (`row`, `col`).
        let mut acc_block = |v: Var, row: usize, col: usize, g: &Tensor| {
            if !nodes[v.0].grad {
                return;
            }
            let (r, c) = nodes[v.0].value.shape();
            let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(r, c));
            for i in 0..g.rows {
                let dst = &mut slot.data[(row + i) * c + col..(row + i) * c + col + g.cols];
                for (d, x) in dst.iter_mut().zip(&g.data[i * g.cols..(i + 1) * g.cols]) {
                    *d += x;
                }
            }
        };
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (x, w) = (self.value(*a), self.value(*b));
                acc!(*a, g.matmul_t(w));
                acc!(*b, x.t_matmul(g));
            }
            Op::Add(a, b) => {
                acc!(*a, g.clone());
                acc!(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc!(*a, g.clone());
                acc!(*b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                let (x, w) = (self.value(*a), self.value(*b));
                acc!(*a, elementwise(g, w, |p, q| p * q));
                acc!(*b, elementwise(g, x, |p, q| p * q));
            }
            Op::Div(a, b) => {
                let w = self.value(*b);
                acc!(*a, elementwise(g, w, |p, q| p / q));
                let ga = elementwise(g, y, |p, q| p * q);
                acc!(*b, elementwise(&ga, w, |p, q| -p / q));
            }
            Op::AddRow(a, row) => {
                acc!(*a, g.clone());
                let mut r = Tensor::zeros(1, g.cols);
                for i in 0..g.rows {
                    for j in 0..g.cols {
                        r.data[j] += g.data[i * g.cols + j];
                    }
                }
                acc!(*row, r);
            }
            Op::MulCol(a, col) => {
                let (x, c) = (self.value(*a), self.value(*col));
                let mut ga = g.clone();
                let mut gc = Tensor::zeros(x.rows, 1);
                for i in 0..x.rows {
                    for j in 0..x.cols {
                        let idx = i * x.cols + j;
                        ga.data[idx] *= c.data[i];
                        gc.data[i] += g.data[idx] * x.data[idx];
                    }
                }
                acc!(*a, ga);
                acc!(*col, gc);
            }
            Op::MulScalar(a, s) => {
                let (x, k) = (self.value(*a), self.value(*s).data[0]);
                acc!(*a, g.scale(k));
                let d: f64 = g.data.iter().zip(&x.data).map(|(p, q)| p * q).sum();
                acc!(*s, Tensor::scalar(d));
            }
            Op::Scale(a, k) => acc!(*a, g.scale(*k)),
            Op::Shift(a) => acc!(*a, g.clone()),
            Op::Sigmoid(a) => acc!(*a, elementwise(g, y, |p, s| p * s * (1.0 - s))),
            Op::Tanh(a) => acc!(*a, elementwise(g, y, |p, t| p * (1.0 - t * t))),
            Op::Relu(a) => {
                let x = self.value(*a);
                acc!(*a, elementwise(g, x, |p, q| if q > 0.0 { p } else { 0.0 }))
            }
            Op::Exp(a) => acc!(*a, elementwise(g, y, |p, e| p * e)),
            Op::Ln(a) => acc!(*a, elementwise(g, self.value(*a), |p, x| p / x)),
            Op::Sqrt(a) => acc!(*a, elementwise(g, y, |p, s| if s > 0.0 { 0.5 * p / s } else { 0.0 })),
            Op::Square(a) => acc!(*a, elementwise(g, self.value(*a), |p, x| 2.0 * p * x)),
            Op::Cos(a) => acc!(*a, elementwise(g, self.value(*a), |p, x| -p * x.sin())),
            Op::Sin(a) => acc!(*a, elementwise(g, self.value(*a), |p, x| p * x.cos())),
            Op::Transpose(a) => acc!(*a, g.transpose()),
            Op::Reshape(a) => {
                let (r, c) = self.shape(*a);
                acc!(*a, Tensor::from_vec(r, c, g.data.clone()));
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let (r, c) = self.shape(*p);
                    acc!(*p, {
                        let mut t = Tensor::zeros(r, c);
                        for i in 0..r {
                            t.data[i * c..(i + 1) * c].copy_from_slice(&g.data[i * g.cols + off..i * g.cols + off + c]);
                        }
                        t
                    });
                    off += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let (r, c) = self.shape(*p);
                    acc!(*p, Tensor::from_vec(r, c, g.data[off..off + r * c].to_vec()));
                    off += r * c;
                }
            }
            Op::SliceCols(a, start) => acc_block(*a, 0, *start, g),
            Op::SliceRows(a, start) => acc_block(*a, *start, 0, g),
            Op::SumRows(a) => {
                let (r, c) = self.shape(*a);
                let mut t = Tensor::zeros(r, c);
                for i in 0..r {
                    t.data[i * c..(i + 1) * c].copy_from_slice(&g.data);
                }
                acc!(*a, t);
            }
            Op::SumCols(a) => {
                let (r, c) = self.shape(*a);
                let mut t = Tensor::zeros(r, c);
                for i in 0..r {
                    t.data[i * c..(i + 1) * c].iter_mut().for_each(|v| *v = g.data[i]);
                }
                acc!(*a, t);
            }
            Op::Sum(a) => {
                let (r, c) = self.shape(*a);
                acc!(*a, Tensor::full(r, c, g.data[0]));
            }
            Op::MaxExcept(a, arg) => {
                let (r, c) = self.shape(*a);
                let mut t = Tensor::zeros(r, c);
                for (idx, &src) in arg.iter().enumerate() {
                    let col = idx % c;
                    t.data[src * c + col] += g.data[idx];
                }
                acc!(*a, t);
            }
            Op::Min(a, idx) => {
                let (r, c) = self.shape(*a);
                let mut t = Tensor::zeros(r, c);
                t.data[*idx] = g.data[0];
                acc!(*a, t);
            }
            Op::SoftmaxCols(a) => {
                let mut t = Tensor::zeros(y.rows, y.cols);
                for c in 0..y.cols {
                    let dot: f64 = (0..y.rows).map(|r| g.at(r, c) * y.at(r, c)).sum();
                    for r in 0..y.rows {
                        *t.at_mut(r, c) = y.at(r, c) * (g.at(r, c) - dot);
                    }
                }
                acc!(*a, t);
            }
            Op::Solve(a, _b) => {
                let am = self.value(*a).to_nalgebra();
                let gm = g.to_nalgebra();
                let gb = am.transpose().lu().solve(&gm).expect("singular system on tape");
                let gb = Tensor::from_nalgebra(&gb);
                let ga = gb.matmul_t(y).scale(-1.0);
                acc!(*a, ga);
                if let Op::Solve(_, b) = &node.op {
                    acc!(*b, gb);
                }
            }
            Op::UnitRows(a) => {
                let x = self.value(*a);
                let mut t = Tensor::zeros(x.rows, 2);
                for r in 0..x.rows {
                    let (p, q) = (x.data[2 * r], x.data[2 * r + 1]);
                    let n = (p * p + q * q).sqrt();
                    if n > 0.0 && n.is_finite() {
                        let (u0, u1) = (y.data[2 * r], y.data[2 * r + 1]);
                        let (g0, g1) = (g.data[2 * r], g.data[2 * r + 1]);
                        let d = u0 * g0 + u1 * g1;
                        t.data[2 * r] = (g0 - u0 * d) / n;
                        t.data[2 * r + 1] = (g1 - u1 * d) / n;
                    }
                }
                acc!(*a, t);
            }
        }
    }
}

fn elementwise(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor { rows: a.rows, cols: a.cols, data: a.data.iter().zip(&b.data).map(|(&p, &q)| f(p, q)).collect() }
}

/// Adjoints from one reverse sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    param_vars: Vec<Option<Var>>,
}

impl Gradients {
    pub fn of(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for parameter `index`, zeros of `shape` if it did not take part.
    pub fn param(&self, index: usize, shape: (usize, usize)) -> Tensor {
        self.param_vars
            .get(index)
            .copied()
            .flatten()
            .and_then(|v| self.of(v).cloned())
            .unwrap_or_else(|| Tensor::zeros(shape.0, shape.1))
    }
}

/// Complex matrix as a pair of real tape variables.
#[derive(Debug, Clone, Copy)]
pub struct CVar {
    pub re: Var,
    pub im: Var,
}

impl Tape {
    pub fn complex_constant(&mut self, m: &crate::linalg::CMat) -> CVar {
        let (r, c) = m.shape();
        let re = Tensor::from_vec(r, c, (0..r).flat_map(|i| (0..c).map(move |j| (i, j))).map(|(i, j)| m[(i, j)].re).collect());
        let im = Tensor::from_vec(r, c, (0..r).flat_map(|i| (0..c).map(move |j| (i, j))).map(|(i, j)| m[(i, j)].im).collect());
        CVar { re: self.constant(re), im: self.constant(im) }
    }

    pub fn complex_value(&self, v: CVar) -> crate::linalg::CMat {
        let (re, im) = (self.value(v.re), self.value(v.im));
        crate::linalg::CMat::from_fn(re.rows, re.cols, |i, j| crate::linalg::C64::new(re.at(i, j), im.at(i, j)))
    }

    /// Complex product `a b`.
    pub fn cmatmul(&mut self, a: CVar, b: CVar) -> CVar {
        let rr = self.matmul(a.re, b.re);
        let ii = self.matmul(a.im, b.im);
        let ri = self.matmul(a.re, b.im);
        let ir = self.matmul(a.im, b.re);
        CVar { re: self.sub(rr, ii), im: self.add(ri, ir) }
    }

    /// `a^H`.
    pub fn cadjoint(&mut self, a: CVar) -> CVar {
        let re = self.transpose(a.re);
        let imt = self.transpose(a.im);
        CVar { re, im: self.scale(imt, -1.0) }
    }

    pub fn cadd(&mut self, a: CVar, b: CVar) -> CVar {
        CVar { re: self.add(a.re, b.re), im: self.add(a.im, b.im) }
    }

    pub fn csub(&mut self, a: CVar, b: CVar) -> CVar {
        CVar { re: self.sub(a.re, b.re), im: self.sub(a.im, b.im) }
    }

    /// Elementwise `|a|^2`.
    pub fn cabs2(&mut self, a: CVar) -> Var {
        let r = self.square(a.re);
        let i = self.square(a.im);
        self.add(r, i)
    }

    /// Solve the complex system `A X = B` through its real embedding.
    pub fn csolve(&mut self, a: CVar, b: CVar) -> CVar {
        let n = self.shape(a.re).0;
        let neg_im = self.scale(a.im, -1.0);
        let top = self.concat_cols(&[a.re, neg_im]);
        let bottom = self.concat_cols(&[a.im, a.re]);
        let big = self.concat_rows(&[top, bottom]);
        let rhs = self.concat_rows(&[b.re, b.im]);
        let x = self.solve(big, rhs);
        CVar { re: self.slice_rows(x, 0, n), im: self.slice_rows(x, n, n) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng as _;

    fn random(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = stream(seed, &[]);
        Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Central-difference check of `build` w.r.t. every entry of its inputs.
    fn check(inputs: Vec<Tensor>, build: impl Fn(&mut Tape, &[Var]) -> Var) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().enumerate().map(|(i, t)| tape.param(i, t)).collect();
        let out = build(&mut tape, &vars);
        let grads = tape.backward(out);
        let h = 1e-6;
        for (i, t) in inputs.iter().enumerate() {
            let g = grads.param(i, t.shape());
            for e in 0..t.data.len() {
                let eval = |delta: f64| {
                    let mut tp = Tape::new();
                    let vs: Vec<Var> = inputs
                        .iter()
                        .enumerate()
                        .map(|(j, x)| {
                            let mut x = x.clone();
                            if j == i {
                                x.data[e] += delta;
                            }
                            tp.param(j, &x)
                        })
                        .collect();
                    let o = build(&mut tp, &vs);
                    tp.value(o).data[0]
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let an = g.data[e];
                assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "input {i} entry {e}: fd {fd} vs {an}");
            }
        }
    }

    #[test]
    fn matmul_and_elementwise() {
        check(vec![random(3, 4, 1), random(4, 2, 2), random(3, 2, 3)], |t, v| {
            let m = t.matmul(v[0], v[1]);
            let s = t.sigmoid(m);
            let th = t.tanh(v[2]);
            let p = t.mul(s, th);
            let q = t.div(p, s);
            let e = t.exp(q);
            let r = t.add(e, p);
            t.sum(r)
        });
    }

    #[test]
    fn broadcast_and_reductions() {
        check(vec![random(3, 4, 4), random(1, 4, 5), random(3, 1, 6), Tensor::scalar(0.7)], |t, v| {
            let a = t.add_row(v[0], v[1]);
            let b = t.mul_col(a, v[2]);
            let c = t.mul_scalar(b, v[3]);
            let sr = t.sum_rows(c);
            let sc = t.sum_cols(c);
            let sq = t.square(sr);
            let s1 = t.sum(sq);
            let cu = t.cos(sc);
            let s2 = t.sum(cu);
            let x = t.add(s1, s2);
            let y = t.sin(x);
            let z = t.add_const(y, 3.0);
            let l = t.ln(z);
            let r = t.sqrt(l);
            t.scale(r, 2.0)
        });
    }

    #[test]
    fn structural_ops() {
        check(vec![random(2, 3, 7), random(2, 2, 8), random(4, 3, 9)], |t, v| {
            let c = t.concat_cols(&[v[0], v[1]]);
            let tr = t.transpose(c);
            let s = t.slice_rows(tr, 1, 3);
            let rs = t.reshape(s, 2, 3);
            let cr = t.concat_rows(&[rs, v[2]]);
            let sl = t.slice_cols(cr, 1, 2);
            let m = t.mean_rows(sl);
            let w = t.square(m);
            t.sum(w)
        });
    }

    #[test]
    fn pooling_min_softmax() {
        check(vec![random(5, 3, 10), random(4, 2, 11)], |t, v| {
            let mx = t.max_except(v[0], 3);
            let sm = t.softmax_cols(v[1]);
            let a = t.sum(mx);
            let w = t.mul(sm, v[1]);
            let b = t.sum(w);
            let mn = t.min(v[1]);
            let ab = t.add(a, b);
            t.add(ab, mn)
        });
    }

    #[test]
    fn solve_and_unit_rows() {
        let mut a = random(3, 3, 12);
        for i in 0..3 {
            *a.at_mut(i, i) += 3.0;
        }
        check(vec![a, random(3, 2, 13), random(4, 2, 14)], |t, v| {
            let x = t.solve(v[0], v[1]);
            let u = t.unit_rows(v[2]);
            let s1 = t.square(x);
            let s2 = t.sum(s1);
            let r = t.relu(u);
            let s3 = t.sum(r);
            t.add(s2, s3)
        });
    }

    #[test]
    fn complex_solve_matches_nalgebra() {
        let mut rng = stream(15, &[]);
        let a = crate::linalg::cn_mat(3, 3, &mut rng) + crate::linalg::CMat::identity(3, 3) * crate::linalg::C64::from(2.0);
        let b = crate::linalg::cn_mat(3, 1, &mut rng);
        let mut t = Tape::new();
        let av = t.complex_constant(&a);
        let bv = t.complex_constant(&b);
        let x = t.csolve(av, bv);
        let expect = a.clone().lu().solve(&b).unwrap();
        assert!((t.complex_value(x) - expect).norm() < 1e-12);
        let prod = t.cmatmul(av, x);
        assert!((t.complex_value(prod) - b).norm() < 1e-12);
        let adj = t.cadjoint(av);
        assert!((t.complex_value(adj) - a.adjoint()).norm() == 0.0);
    }

    #[test]
    fn unit_rows_degenerate_pair() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_vec(2, 2, vec![0.0, 0.0, 3.0, 4.0]));
        let u = t.unit_rows(x);
        assert_eq!(t.value(u).data, vec![1.0, 0.0, 0.6, 0.8]);
        assert_eq!(t.degenerate_pairs, 1);
    }
}
