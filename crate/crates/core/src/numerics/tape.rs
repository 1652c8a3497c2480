//! Eager, tape-based reverse-mode automatic differentiation over dense 2-D
//! real tensors.
//!
//! Every operation evaluates immediately and appends a node to the tape.
//! [`Tape::backward`] walks the nodes in reverse and accumulates gradients for
//! every node that depends on a parameter leaf. Nodes that only depend on
//! constants are skipped, so constant inputs (images, labels) cost nothing on
//! the way back.
//!
//! Parameter leaves borrow their values from the [`ParamStore`] for the
//! lifetime of the tape, so binding a large weight matrix is free.

use super::params::{ParamId, ParamStore};
use super::special;
use crate::{Error, Result};
use std::borrow::Cow;
use std::cell::RefCell;
use std::ops::Index;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Tanh,
    Sigmoid,
    Softplus,
    Exp,
    Log,
    Square,
    Abs,
    Sqrt,
    Recip,
    Sin,
    Cos,
    Lgamma,
    Digamma,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulScalarVar(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Unary(Var, Unary),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    Norm2Rows(Var),
}

struct Node<'a> {
    rows: usize,
    cols: usize,
    value: Cow<'a, [f64]>,
    op: Op,
    needs_grad: bool,
}

/// A parameter set bound onto a tape; index with a [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Index<ParamId> for Bound {
    type Output = Var;
    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Gradients produced by one backward pass.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Adds the gradient of every bound parameter into `out` (one buffer per
    /// parameter, in store order).
    pub fn accumulate_into(&self, bound: &Bound, out: &mut [Vec<f64>]) {
        for (slot, v) in out.iter_mut().zip(&bound.vars) {
            if let Some(g) = self.wrt(*v) {
                for (o, x) in slot.iter_mut().zip(g) {
                    *o += x;
                }
            }
        }
    }
}

#[derive(Default)]
pub struct Tape<'a> {
    nodes: RefCell<Vec<Node<'a>>>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// `out[i][j] += Σ_k a[i][k]·b[k][j]`
fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for (kk, &x) in a[i * k..(i + 1) * k].iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let brow = &b[kk * m..(kk + 1) * m];
            for (o, &y) in row.iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(256)),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, rows: usize, cols: usize, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            rows,
            cols,
            value: Cow::Owned(value),
            op,
            needs_grad,
        });
        Var(nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].needs_grad
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes.borrow()[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> Vec<f64> {
        self.nodes.borrow()[v.0].value.to_vec()
    }

    /// Runs `f` on the node's values without copying them.
    pub fn with_value<R>(&self, v: Var, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.nodes.borrow()[v.0].value)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[v.0].value.len(), 1, "scalar() on a non-scalar node");
        nodes[v.0].value[0]
    }

    /// Constant input of shape `rows × cols`.
    pub fn constant(&self, rows: usize, cols: usize, value: Vec<f64>) -> Result<Var> {
        if rows * cols != value.len() {
            return Err(Error::Shape(format!(
                "constant of shape {rows}x{cols} given {} values",
                value.len()
            )));
        }
        Ok(self.push(rows, cols, value, Op::Leaf, false))
    }

    /// Constant row vector.
    pub fn row(&self, value: Vec<f64>) -> Var {
        let n = value.len();
        self.push(1, n, value, Op::Leaf, false)
    }

    /// Binds every tensor of `store` as a differentiable leaf.
    pub fn bind(&self, store: &'a ParamStore) -> Bound {
        let mut nodes = self.nodes.borrow_mut();
        let vars = store
            .tensors()
            .map(|t| {
                let (rows, cols) = t.matrix_dims();
                nodes.push(Node {
                    rows,
                    cols,
                    value: Cow::Borrowed(&t.values),
                    op: Op::Leaf,
                    needs_grad: true,
                });
                Var(nodes.len() - 1)
            })
            .collect();
        Bound { vars }
    }

    /// Like [`Tape::bind`] but copies the values, so `store` need not outlive
    /// the tape.
    pub fn bind_copy(&self, store: &ParamStore) -> Bound {
        let mut nodes = self.nodes.borrow_mut();
        let vars = store
            .tensors()
            .map(|t| {
                let (rows, cols) = t.matrix_dims();
                nodes.push(Node {
                    rows,
                    cols,
                    value: Cow::Owned(t.values.clone()),
                    op: Op::Leaf,
                    needs_grad: true,
                });
                Var(nodes.len() - 1)
            })
            .collect();
        Bound { vars }
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(usize, usize)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(sa)
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        nodes[a.0]
            .value
            .iter()
            .zip(nodes[b.0].value.iter())
            .map(|(&x, &y)| f(x, y))
            .collect()
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.nodes.borrow()[a.0].value.iter().map(|&x| f(x)).collect()
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let ((n, k), (k2, m)) = (self.shape(a), self.shape(b));
        if k != k2 {
            return Err(Error::Shape(format!("matmul: {n}x{k} · {k2}x{m}")));
        }
        let mut out = vec![0.0; n * m];
        {
            let nodes = self.nodes.borrow();
            gemm_acc(&nodes[a.0].value, &nodes[b.0].value, &mut out, n, k, m);
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(n, m, out, Op::MatMul(a, b), ng))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape(a, b, "add")?;
        let v = self.zip_with(a, b, |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(r, c, v, Op::Add(a, b), ng))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape(a, b, "sub")?;
        let v = self.zip_with(a, b, |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(r, c, v, Op::Sub(a, b), ng))
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape(a, b, "mul")?;
        let v = self.zip_with(a, b, |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(r, c, v, Op::Mul(a, b), ng))
    }

    /// Adds a `1 × c` row to every row of `a`.
    pub fn add_row(&self, a: Var, row: Var) -> Result<Var> {
        let ((r, c), (r2, c2)) = (self.shape(a), self.shape(row));
        if r2 != 1 || c2 != c {
            return Err(Error::Shape(format!("add_row: {r}x{c} + {r2}x{c2}")));
        }
        let v = {
            let nodes = self.nodes.borrow();
            let bias = &nodes[row.0].value;
            nodes[a.0]
                .value
                .iter()
                .enumerate()
                .map(|(i, &x)| x + bias[i % c])
                .collect()
        };
        let ng = self.needs(a) || self.needs(row);
        Ok(self.push(r, c, v, Op::AddRow(a, row), ng))
    }

    /// Multiplies every entry of `a` by the `1 × 1` node `s`.
    pub fn mul_scalar_var(&self, a: Var, s: Var) -> Result<Var> {
        if self.shape(s) != (1, 1) {
            return Err(Error::Shape(format!("mul_scalar_var: scale has shape {:?}", self.shape(s))));
        }
        let k = self.scalar(s);
        let (r, c) = self.shape(a);
        let v = self.map(a, |x| x * k);
        let ng = self.needs(a) || self.needs(s);
        Ok(self.push(r, c, v, Op::MulScalarVar(a, s), ng))
    }

    pub fn scale(&self, a: Var, k: f64) -> Var {
        let (r, c) = self.shape(a);
        let v = self.map(a, |x| x * k);
        let ng = self.needs(a);
        self.push(r, c, v, Op::Scale(a, k), ng)
    }

    pub fn add_scalar(&self, a: Var, k: f64) -> Var {
        let (r, c) = self.shape(a);
        let v = self.map(a, |x| x + k);
        let ng = self.needs(a);
        self.push(r, c, v, Op::AddScalar(a), ng)
    }

    /// `1 − a`
    pub fn one_minus(&self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    /// Concatenates along columns; all parts must have the same row count.
    pub fn concat(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Shape("concat of nothing".into()));
        }
        let rows = self.shape(parts[0]).0;
        let mut cols = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            if r != rows {
                return Err(Error::Shape(format!("concat: row mismatch {r} vs {rows}")));
            }
            cols += c;
        }
        let mut v = Vec::with_capacity(rows * cols);
        {
            let nodes = self.nodes.borrow();
            for i in 0..rows {
                for &p in parts {
                    let n = &nodes[p.0];
                    v.extend_from_slice(&n.value[i * n.cols..(i + 1) * n.cols]);
                }
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(rows, cols, v, Op::Concat(parts.to_vec()), ng))
    }

    /// Columns `start..start + len` of `a`.
    pub fn slice(&self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start + len > c || len == 0 {
            return Err(Error::Shape(format!("slice {start}..{} of {c} columns", start + len)));
        }
        let v = {
            let nodes = self.nodes.borrow();
            let src = &nodes[a.0].value;
            (0..r)
                .flat_map(|i| src[i * c + start..i * c + start + len].iter().copied())
                .collect()
        };
        let ng = self.needs(a);
        Ok(self.push(r, len, v, Op::Slice(a, start), ng))
    }

    pub fn unary(&self, a: Var, kind: Unary) -> Result<Var> {
        let (r, c) = self.shape(a);
        let v: Vec<f64> = match kind {
            Unary::Tanh => self.map(a, f64::tanh),
            Unary::Sigmoid => self.map(a, sigmoid),
            Unary::Softplus => self.map(a, softplus),
            Unary::Exp => self.map(a, f64::exp),
            Unary::Log => self.map(a, f64::ln),
            Unary::Square => self.map(a, |x| x * x),
            Unary::Abs => self.map(a, f64::abs),
            Unary::Sqrt => self.map(a, f64::sqrt),
            Unary::Recip => self.map(a, |x| 1.0 / x),
            Unary::Sin => self.map(a, f64::sin),
            Unary::Cos => self.map(a, f64::cos),
            Unary::Lgamma => self
                .value(a)
                .into_iter()
                .map(special::lgamma)
                .collect::<Result<_>>()?,
            Unary::Digamma => self
                .value(a)
                .into_iter()
                .map(special::digamma)
                .collect::<Result<_>>()?,
        };
        let ng = self.needs(a);
        Ok(self.push(r, c, v, Op::Unary(a, kind), ng))
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, Unary::Tanh).expect("tanh is total")
    }
    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid).expect("sigmoid is total")
    }
    pub fn softplus(&self, a: Var) -> Var {
        self.unary(a, Unary::Softplus).expect("softplus is total")
    }
    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, Unary::Exp).expect("exp is total")
    }
    pub fn log(&self, a: Var) -> Var {
        self.unary(a, Unary::Log).expect("log is total")
    }
    pub fn square(&self, a: Var) -> Var {
        self.unary(a, Unary::Square).expect("square is total")
    }
    pub fn abs(&self, a: Var) -> Var {
        self.unary(a, Unary::Abs).expect("abs is total")
    }
    pub fn sqrt(&self, a: Var) -> Var {
        self.unary(a, Unary::Sqrt).expect("sqrt is total")
    }
    pub fn recip(&self, a: Var) -> Var {
        self.unary(a, Unary::Recip).expect("recip is total")
    }
    pub fn sin(&self, a: Var) -> Var {
        self.unary(a, Unary::Sin).expect("sin is total")
    }
    pub fn cos(&self, a: Var) -> Var {
        self.unary(a, Unary::Cos).expect("cos is total")
    }

    /// Sum of all entries, as a `1 × 1` node.
    pub fn sum(&self, a: Var) -> Var {
        let s = self.with_value(a, |v| v.iter().sum());
        let ng = self.needs(a);
        self.push(1, 1, vec![s], Op::Sum(a), ng)
    }

    pub fn mean(&self, a: Var) -> Var {
        let s = self.with_value(a, |v| v.iter().sum::<f64>() / v.len() as f64);
        let ng = self.needs(a);
        self.push(1, 1, vec![s], Op::Mean(a), ng)
    }

    /// Per-row sum: `r × c → r × 1`.
    pub fn sum_cols(&self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let v = self.with_value(a, |v| v.chunks(c).map(|row| row.iter().sum()).collect());
        let ng = self.needs(a);
        self.push(r, 1, v, Op::SumCols(a), ng)
    }

    /// Per-row Euclidean norm: `r × c → r × 1`. The gradient at a zero row is
    /// taken as zero (a valid subgradient).
    pub fn norm2_rows(&self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let v = self.with_value(a, |v| {
            v.chunks(c)
                .map(|row| row.iter().map(|x| x * x).sum::<f64>().sqrt())
                .collect()
        });
        let ng = self.needs(a);
        self.push(r, 1, v, Op::Norm2Rows(a), ng)
    }

    /// Reverse pass from a `1 × 1` root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[root.0].value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward requires a scalar root, got {}x{}",
                nodes[root.0].rows, nodes[root.0].cols
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }

        for i in (0..=root.0).rev() {
            let node = &nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let val = |v: Var| -> &[f64] { &nodes[v.0].value };
            let ng = |v: Var| nodes[v.0].needs_grad;
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (n, k) = (nodes[a.0].rows, nodes[a.0].cols);
                    let m = nodes[b.0].cols;
                    if ng(*a) {
                        let bv = val(*b);
                        let ga = acc(&mut grads, *a, n * k);
                        for r in 0..n {
                            let grow = &g[r * m..(r + 1) * m];
                            for kk in 0..k {
                                let brow = &bv[kk * m..(kk + 1) * m];
                                ga[r * k + kk] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                    }
                    if ng(*b) {
                        let av = val(*a);
                        let gb = acc(&mut grads, *b, k * m);
                        for r in 0..n {
                            let grow = &g[r * m..(r + 1) * m];
                            for kk in 0..k {
                                let x = av[r * k + kk];
                                if x == 0.0 {
                                    continue;
                                }
                                for (o, &y) in gb[kk * m..(kk + 1) * m].iter_mut().zip(grow) {
                                    *o += x * y;
                                }
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for (v, sign) in [(*a, 1.0), (*b, 1.0)] {
                        if ng(v) {
                            let gv = acc(&mut grads, v, g.len());
                            gv.iter_mut().zip(&g).for_each(|(o, x)| *o += sign * x);
                        }
                    }
                }
                Op::Sub(a, b) => {
                    for (v, sign) in [(*a, 1.0), (*b, -1.0)] {
                        if ng(v) {
                            let gv = acc(&mut grads, v, g.len());
                            gv.iter_mut().zip(&g).for_each(|(o, x)| *o += sign * x);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    if ng(*a) {
                        let bv = val(*b);
                        let ga = acc(&mut grads, *a, g.len());
                        for ((o, x), y) in ga.iter_mut().zip(&g).zip(bv) {
                            *o += x * y;
                        }
                    }
                    if ng(*b) {
                        let av = val(*a);
                        let gb = acc(&mut grads, *b, g.len());
                        for ((o, x), y) in gb.iter_mut().zip(&g).zip(av) {
                            *o += x * y;
                        }
                    }
                }
                Op::AddRow(a, row) => {
                    let c = node.cols;
                    if ng(*a) {
                        let ga = acc(&mut grads, *a, g.len());
                        ga.iter_mut().zip(&g).for_each(|(o, x)| *o += x);
                    }
                    if ng(*row) {
                        let gr = acc(&mut grads, *row, c);
                        for (j, x) in g.iter().enumerate() {
                            gr[j % c] += x;
                        }
                    }
                }
                Op::MulScalarVar(a, s) => {
                    let k = val(*s)[0];
                    if ng(*a) {
                        let ga = acc(&mut grads, *a, g.len());
                        ga.iter_mut().zip(&g).for_each(|(o, x)| *o += k * x);
                    }
                    if ng(*s) {
                        let dot: f64 = val(*a).iter().zip(&g).map(|(x, y)| x * y).sum();
                        acc(&mut grads, *s, 1)[0] += dot;
                    }
                }
                Op::Scale(a, k) => {
                    let ga = acc(&mut grads, *a, g.len());
                    ga.iter_mut().zip(&g).for_each(|(o, x)| *o += k * x);
                }
                Op::AddScalar(a) => {
                    let ga = acc(&mut grads, *a, g.len());
                    ga.iter_mut().zip(&g).for_each(|(o, x)| *o += x);
                }
                Op::Concat(parts) => {
                    let rows = node.rows;
                    let total = node.cols;
                    let mut offset = 0;
                    for &p in parts {
                        let pc = nodes[p.0].cols;
                        if ng(p) {
                            let gp = acc(&mut grads, p, rows * pc);
                            for r in 0..rows {
                                for j in 0..pc {
                                    gp[r * pc + j] += g[r * total + offset + j];
                                }
                            }
                        }
                        offset += pc;
                    }
                }
                Op::Slice(a, start) => {
                    let (rows, len) = (node.rows, node.cols);
                    let c = nodes[a.0].cols;
                    let ga = acc(&mut grads, *a, rows * c);
                    for r in 0..rows {
                        for j in 0..len {
                            ga[r * c + start + j] += g[r * len + j];
                        }
                    }
                }
                Op::Unary(a, kind) => {
                    let x = val(*a);
                    let y = &node.value;
                    let local: Vec<f64> = match kind {
                        Unary::Tanh => y.iter().map(|t| 1.0 - t * t).collect(),
                        Unary::Sigmoid => y.iter().map(|s| s * (1.0 - s)).collect(),
                        Unary::Softplus => x.iter().map(|&v| sigmoid(v)).collect(),
                        Unary::Exp => y.to_vec(),
                        Unary::Log => x.iter().map(|v| 1.0 / v).collect(),
                        Unary::Square => x.iter().map(|v| 2.0 * v).collect(),
                        Unary::Abs => x.iter().map(|v| v.signum() * (*v != 0.0) as u8 as f64).collect(),
                        Unary::Sqrt => y.iter().map(|s| 0.5 / s).collect(),
                        Unary::Recip => y.iter().map(|s| -s * s).collect(),
                        Unary::Sin => x.iter().map(|v| v.cos()).collect(),
                        Unary::Cos => x.iter().map(|v| -v.sin()).collect(),
                        Unary::Lgamma => x
                            .iter()
                            .map(|&v| special::digamma(v))
                            .collect::<Result<_>>()?,
                        Unary::Digamma => x
                            .iter()
                            .map(|&v| special::trigamma(v))
                            .collect::<Result<_>>()?,
                    };
                    let ga = acc(&mut grads, *a, g.len());
                    for ((o, d), l) in ga.iter_mut().zip(&g).zip(&local) {
                        *o += d * l;
                    }
                }
                Op::Sum(a) => {
                    let n = nodes[a.0].value.len();
                    acc(&mut grads, *a, n).iter_mut().for_each(|o| *o += g[0]);
                }
                Op::Mean(a) => {
                    let n = nodes[a.0].value.len();
                    let d = g[0] / n as f64;
                    acc(&mut grads, *a, n).iter_mut().for_each(|o| *o += d);
                }
                Op::SumCols(a) => {
                    let c = nodes[a.0].cols;
                    let n = nodes[a.0].value.len();
                    let ga = acc(&mut grads, *a, n);
                    for (j, o) in ga.iter_mut().enumerate() {
                        *o += g[j / c];
                    }
                }
                Op::Norm2Rows(a) => {
                    let c = nodes[a.0].cols;
                    let x = val(*a);
                    let y = &node.value;
                    let ga = acc(&mut grads, *a, x.len());
                    for (j, o) in ga.iter_mut().enumerate() {
                        let r = j / c;
                        if y[r] > 0.0 {
                            *o += g[r] * x[j] / y[r];
                        }
                    }
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }
}
