//! Define-by-run reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every operation in forward execution order. Calling
//! [`Var::backward`] on a scalar walks the tape once in reverse and
//! accumulates gradients into every leaf created with [`Tape::param`].
//!
//! Broadcasting is deliberately narrow: elementwise binary ops need equal
//! shapes, [`Var::mul_scalar`] scales by a `1x1` variable, and
//! [`Var::add_row`] adds one row vector to every row (the bias/centering op).
//! Anything else has to be spelled out.
//!
//! ```
//! use gmdg::autodiff::Tape;
//! use gmdg::linalg::Matrix;
//!
//! let tape = Tape::new();
//! let x = tape.param(Matrix::from_vec(1, 2, vec![1.0, 2.0]).unwrap());
//! let loss = x.square().sum();
//! loss.backward().unwrap();
//! assert_eq!(tape.grad(x).as_slice(), &[2.0, 4.0]);
//! ```

use std::cell::RefCell;
use std::fmt;

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen, Cholesky, Matrix};

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddConst(usize),
    ScaleConst(usize, f64),
    MulScalar(usize, usize),
    Tanh(usize),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Square(usize),
    Sqrt(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Symmetrize(usize),
    Sum(usize),
    Trace(usize),
    ColMean(usize),
    AddRow(usize, usize),
    SubMatrix { src: usize, row0: usize, col0: usize },
    HCat(usize, usize),
    VCat(Vec<usize>),
    Logdet { src: usize, inverse: Matrix },
    Solve { lhs: usize, rhs: usize, chol: Cholesky },
    FrobeniusNorm(usize),
    SpectralNormPsd { src: usize, top: Vec<f64> },
    SoftmaxRows(usize),
    CrossEntropy { pred: usize, target: Matrix },
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
    param: bool,
    grad: Option<Matrix>,
}

/// Operation record for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).finish()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trainable leaf; receives gradients on backward.
    pub fn param(&self, value: Matrix) -> Var<'_> {
        self.push_leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Matrix) -> Var<'_> {
        self.push_leaf(value, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Matrix::scalar(value))
    }

    fn push_leaf(&self, value: Matrix, param: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: param,
            param,
            grad: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, value: Matrix, op: Op, inputs: &[usize]) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = inputs.iter().any(|&i| nodes[i].requires_grad);
        nodes.push(Node {
            value,
            op,
            requires_grad,
            param: false,
            grad: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> std::cell::Ref<'_, Matrix> {
        std::cell::Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Accumulated gradient of a leaf; zeros if nothing reached it.
    pub fn grad(&self, var: Var<'_>) -> Matrix {
        let nodes = self.nodes.borrow();
        let node = &nodes[var.id];
        node.grad
            .clone()
            .unwrap_or_else(|| Matrix::zeros(node.value.rows(), node.value.cols()))
    }

    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }

    fn backward_from(&self, root: usize) -> Result<()> {
        let mut nodes = self.nodes.borrow_mut();
        let shape = nodes[root].value.shape();
        if shape != (1, 1) {
            return Err(Error::Shape {
                op: "backward",
                lhs: shape,
                rhs: (1, 1),
            });
        }
        let mut adj: Vec<Option<Matrix>> = Vec::with_capacity(root + 1);
        adj.resize_with(root + 1, || None);
        adj[root] = Some(Matrix::scalar(1.0));

        for id in (0..=root).rev() {
            let Some(g) = adj[id].take() else { continue };
            if !nodes[id].requires_grad {
                continue;
            }
            if nodes[id].param {
                match &mut nodes[id].grad {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
                continue;
            }
            for (input, contrib) in local_gradients(&nodes, id, &g)? {
                if !nodes[input].requires_grad {
                    continue;
                }
                match &mut adj[input] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        Ok(())
    }
}

/// Vector-Jacobian products of node `id` with upstream gradient `g`.
fn local_gradients(nodes: &[Node], id: usize, g: &Matrix) -> Result<Vec<(usize, Matrix)>> {
    let v = |i: usize| &nodes[i].value;
    let out = &nodes[id].value;
    let grads = match &nodes[id].op {
        Op::Leaf => vec![],
        Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
        Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.scale(-1.0))],
        Op::Mul(a, b) => vec![
            (*a, g.zip_map(v(*b), |g, y| g * y)),
            (*b, g.zip_map(v(*a), |g, x| g * x)),
        ],
        Op::AddConst(a) => vec![(*a, g.clone())],
        Op::ScaleConst(a, s) => vec![(*a, g.scale(*s))],
        Op::MulScalar(a, s) => {
            let sv = v(*s).item();
            let ds: f64 = g.as_slice().iter().zip(v(*a).as_slice()).map(|(g, x)| g * x).sum();
            vec![(*a, g.scale(sv)), (*s, Matrix::scalar(ds))]
        }
        Op::Tanh(a) => vec![(*a, g.zip_map(out, |g, t| g * (1.0 - t * t)))],
        Op::Relu(a) => vec![(*a, g.zip_map(v(*a), |g, x| if x > 0.0 { g } else { 0.0 }))],
        Op::Exp(a) => vec![(*a, g.zip_map(out, |g, e| g * e))],
        Op::Log(a) => vec![(*a, g.zip_map(v(*a), |g, x| g / x))],
        Op::Square(a) => vec![(*a, g.zip_map(v(*a), |g, x| 2.0 * g * x))],
        Op::Sqrt(a) => vec![(*a, g.zip_map(out, |g, r| 0.5 * g / r))],
        Op::MatMul(a, b) => vec![(*a, g.matmul_t(v(*b))?), (*b, v(*a).t_matmul(g)?)],
        Op::Transpose(a) => vec![(*a, g.transpose())],
        Op::Symmetrize(a) => vec![(*a, g.symmetrize())],
        Op::Sum(a) => {
            let (r, c) = v(*a).shape();
            vec![(*a, Matrix::filled(r, c, g.item()))]
        }
        Op::Trace(a) => {
            let n = v(*a).rows();
            vec![(*a, Matrix::identity(n).scale(g.item()))]
        }
        Op::ColMean(a) => {
            let (r, c) = v(*a).shape();
            let inv = 1.0 / r as f64;
            vec![(*a, Matrix::from_fn(r, c, |_, j| g[(0, j)] * inv))]
        }
        Op::AddRow(a, row) => vec![(*a, g.clone()), (*row, g.col_sum())],
        Op::SubMatrix { src, row0, col0 } => {
            let (r, c) = v(*src).shape();
            let mut d = Matrix::zeros(r, c);
            for i in 0..g.rows() {
                for j in 0..g.cols() {
                    d[(row0 + i, col0 + j)] = g[(i, j)];
                }
            }
            vec![(*src, d)]
        }
        Op::HCat(a, b) => {
            let ca = v(*a).cols();
            vec![
                (*a, g.submatrix(0..g.rows(), 0..ca)),
                (*b, g.submatrix(0..g.rows(), ca..g.cols())),
            ]
        }
        Op::VCat(parts) => {
            let mut row = 0;
            let mut res = Vec::with_capacity(parts.len());
            for &p in parts {
                let r = v(p).rows();
                res.push((p, g.submatrix(row..row + r, 0..g.cols())));
                row += r;
            }
            res
        }
        Op::Logdet { src, inverse } => vec![(*src, inverse.scale(g.item()))],
        Op::Solve { lhs, rhs, chol } => {
            // X = S⁻¹B: dB = S⁻¹G, dS = -dB Xᵀ (symmetrized)
            let db = chol.solve(g)?;
            let ds = db.matmul_t(out)?.scale(-1.0).symmetrize();
            vec![(*lhs, ds), (*rhs, db)]
        }
        Op::FrobeniusNorm(a) => {
            let n = out.item();
            if n == 0.0 {
                vec![(*a, Matrix::zeros(v(*a).rows(), v(*a).cols()))]
            } else {
                vec![(*a, v(*a).scale(g.item() / n))]
            }
        }
        Op::SpectralNormPsd { src, top } => {
            let k = top.len();
            let d = Matrix::from_fn(k, k, |i, j| top[i] * top[j] * g.item());
            vec![(*src, d.symmetrize())]
        }
        Op::SoftmaxRows(a) => {
            let mut d = Matrix::zeros(out.rows(), out.cols());
            for r in 0..out.rows() {
                let s = out.row(r);
                let gr = g.row(r);
                let dot: f64 = s.iter().zip(gr).map(|(s, g)| s * g).sum();
                for c in 0..out.cols() {
                    d[(r, c)] = s[c] * (gr[c] - dot);
                }
            }
            vec![(*a, d)]
        }
        Op::CrossEntropy { pred, target } => {
            let p = v(*pred);
            let inv = g.item() / p.rows() as f64;
            let d = p.zip_map(target, |p, t| if t > 0.0 { -t / p * inv } else { 0.0 });
            vec![(*pred, d)]
        }
    };
    Ok(grads)
}

impl Matrix {
    fn col_sum(&self) -> Matrix {
        let mut out = Matrix::zeros(1, self.cols());
        for r in 0..self.rows() {
            for (o, v) in out.as_mut_slice().iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        out
    }
}

fn same_shape(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    Ok(())
}

fn square(op: &'static str, a: &Matrix) -> Result<()> {
    if !a.is_square() {
        return Err(Error::Shape {
            op,
            lhs: a.shape(),
            rhs: (a.cols(), a.rows()),
        });
    }
    Ok(())
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Matrix {
        self.tape.value_of(self.id).clone()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.value_of(self.id).shape()
    }

    pub fn rows(&self) -> usize {
        self.shape().0
    }

    pub fn cols(&self) -> usize {
        self.shape().1
    }

    /// Value of a `1x1` variable.
    pub fn item(&self) -> f64 {
        self.tape.value_of(self.id).item()
    }

    pub fn grad(&self) -> Matrix {
        self.tape.grad(*self)
    }

    /// Backpropagates from this scalar. Repeated calls accumulate.
    pub fn backward(&self) -> Result<()> {
        self.tape.backward_from(self.id)
    }

    fn unary(&self, op: Op, f: impl Fn(&Matrix) -> Matrix) -> Var<'t> {
        let value = f(&self.tape.value_of(self.id));
        self.tape.push(value, op, &[self.id])
    }

    fn binary(
        &self,
        other: Var<'t>,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        let value = {
            let a = self.tape.value_of(self.id);
            let b = self.tape.value_of(other.id);
            same_shape(name, &a, &b)?;
            a.zip_map(&b, f)
        };
        Ok(self.tape.push(value, op, &[self.id, other.id]))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    /// Adds a constant matrix of the same shape.
    pub fn add_const(&self, c: &Matrix) -> Result<Var<'t>> {
        let value = {
            let a = self.tape.value_of(self.id);
            same_shape("add_const", &a, c)?;
            a.zip_map(c, |a, b| a + b)
        };
        Ok(self.tape.push(value, Op::AddConst(self.id), &[self.id]))
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        self.unary(Op::AddConst(self.id), |a| a.map(|x| x + c))
    }

    pub fn scale(&self, s: f64) -> Var<'t> {
        self.unary(Op::ScaleConst(self.id, s), |a| a.scale(s))
    }

    /// Multiplies every element by a `1x1` variable.
    pub fn mul_scalar(&self, s: Var<'t>) -> Result<Var<'t>> {
        let value = {
            let sv = self.tape.value_of(s.id);
            if sv.shape() != (1, 1) {
                return Err(Error::Shape {
                    op: "mul_scalar",
                    lhs: sv.shape(),
                    rhs: (1, 1),
                });
            }
            self.tape.value_of(self.id).scale(sv.item())
        };
        Ok(self
            .tape
            .push(value, Op::MulScalar(self.id, s.id), &[self.id, s.id]))
    }

    pub fn tanh(&self) -> Var<'t> {
        self.unary(Op::Tanh(self.id), |a| a.map(f64::tanh))
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |a| a.map(|x| x.max(0.0)))
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(Op::Exp(self.id), |a| a.map(f64::exp))
    }

    pub fn log(&self) -> Result<Var<'t>> {
        if let Some(&bad) = self.tape.value_of(self.id).as_slice().iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::Domain { op: "log", value: bad });
        }
        Ok(self.unary(Op::Log(self.id), |a| a.map(f64::ln)))
    }

    pub fn sqrt(&self) -> Result<Var<'t>> {
        if let Some(&bad) = self.tape.value_of(self.id).as_slice().iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::Domain { op: "sqrt", value: bad });
        }
        Ok(self.unary(Op::Sqrt(self.id), |a| a.map(f64::sqrt)))
    }

    pub fn square(&self) -> Var<'t> {
        self.unary(Op::Square(self.id), |a| a.map(|x| x * x))
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        let value = self
            .tape
            .value_of(self.id)
            .matmul(&self.tape.value_of(other.id))?;
        Ok(self
            .tape
            .push(value, Op::MatMul(self.id, other.id), &[self.id, other.id]))
    }

    pub fn t(&self) -> Var<'t> {
        self.unary(Op::Transpose(self.id), Matrix::transpose)
    }

    /// `(A + Aᵀ) / 2`.
    pub fn symmetrize(&self) -> Result<Var<'t>> {
        square("symmetrize", &self.tape.value_of(self.id))?;
        Ok(self.unary(Op::Symmetrize(self.id), Matrix::symmetrize))
    }

    pub fn sum(&self) -> Var<'t> {
        self.unary(Op::Sum(self.id), |a| Matrix::scalar(a.sum()))
    }

    pub fn mean(&self) -> Var<'t> {
        let n = self.tape.value_of(self.id).len() as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn trace(&self) -> Result<Var<'t>> {
        square("trace", &self.tape.value_of(self.id))?;
        Ok(self.unary(Op::Trace(self.id), |a| Matrix::scalar(a.trace())))
    }

    /// Column means, `B x d -> 1 x d`.
    pub fn col_mean(&self) -> Var<'t> {
        self.unary(Op::ColMean(self.id), Matrix::col_mean)
    }

    /// Adds the `1 x d` row `row` to every row of `self`.
    pub fn add_row(&self, row: Var<'t>) -> Result<Var<'t>> {
        let value = {
            let a = self.tape.value_of(self.id);
            let r = self.tape.value_of(row.id);
            if r.rows() != 1 || r.cols() != a.cols() {
                return Err(Error::Shape {
                    op: "add_row",
                    lhs: a.shape(),
                    rhs: r.shape(),
                });
            }
            a.add_row(&r)
        };
        Ok(self
            .tape
            .push(value, Op::AddRow(self.id, row.id), &[self.id, row.id]))
    }

    pub fn sub_row(&self, row: Var<'t>) -> Result<Var<'t>> {
        self.add_row(row.scale(-1.0))
    }

    pub fn submatrix(
        &self,
        rows: std::ops::Range<usize>,
        cols: std::ops::Range<usize>,
    ) -> Result<Var<'t>> {
        let (r, c) = self.shape();
        if rows.end > r || cols.end > c || rows.start > rows.end || cols.start > cols.end {
            return Err(Error::Shape {
                op: "submatrix",
                lhs: (r, c),
                rhs: (rows.end, cols.end),
            });
        }
        let op = Op::SubMatrix {
            src: self.id,
            row0: rows.start,
            col0: cols.start,
        };
        Ok(self.unary(op, |a| a.submatrix(rows.clone(), cols.clone())))
    }

    /// Column-wise concatenation `[self | other]`.
    pub fn hcat(&self, other: Var<'t>) -> Result<Var<'t>> {
        let value = self
            .tape
            .value_of(self.id)
            .hcat(&self.tape.value_of(other.id))?;
        Ok(self
            .tape
            .push(value, Op::HCat(self.id, other.id), &[self.id, other.id]))
    }

    /// Row-wise concatenation of `parts`.
    pub fn vcat(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("vcat of zero parts".into()))?;
        let tape = first.tape;
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let value = {
            let nodes = tape.nodes.borrow();
            let refs: Vec<&Matrix> = ids.iter().map(|&i| &nodes[i].value).collect();
            Matrix::vcat(&refs)?
        };
        Ok(tape.push(value, Op::VCat(ids.clone()), &ids))
    }

    /// `ln |S|` through a Cholesky factorization; gradient `S⁻¹` (symmetrized).
    ///
    /// `S` must already be symmetric; only its lower triangle is factored.
    pub fn logdet(&self) -> Result<Var<'t>> {
        let (value, inverse) = {
            let s = self.tape.value_of(self.id);
            let chol = Cholesky::factor(&s)?;
            (chol.logdet(), chol.inverse())
        };
        Ok(self.tape.push(
            Matrix::scalar(value),
            Op::Logdet {
                src: self.id,
                inverse,
            },
            &[self.id],
        ))
    }

    /// Solves `self · X = rhs` for symmetric positive-definite `self`.
    pub fn solve_spd(&self, rhs: Var<'t>) -> Result<Var<'t>> {
        let (value, chol) = {
            let s = self.tape.value_of(self.id);
            let chol = Cholesky::factor(&s)?;
            (chol.solve(&self.tape.value_of(rhs.id))?, chol)
        };
        Ok(self.tape.push(
            value,
            Op::Solve {
                lhs: self.id,
                rhs: rhs.id,
                chol,
            },
            &[self.id, rhs.id],
        ))
    }

    /// `‖A‖_F`; the subgradient at `A = 0` is taken as zero.
    pub fn frobenius_norm(&self) -> Var<'t> {
        self.unary(Op::FrobeniusNorm(self.id), |a| {
            Matrix::scalar(a.frobenius_norm())
        })
    }

    /// Largest eigenvalue of a symmetric PSD matrix (its spectral norm).
    pub fn spectral_norm_psd(&self) -> Result<Var<'t>> {
        let (value, top) = {
            let a = self.tape.value_of(self.id);
            square("spectral_norm_psd", &a)?;
            let (vals, vecs) = symmetric_eigen(&a);
            let k = vals.len() - 1;
            let top: Vec<f64> = (0..a.rows()).map(|r| vecs[(r, k)]).collect();
            (vals[k].max(0.0), top)
        };
        Ok(self.tape.push(
            Matrix::scalar(value),
            Op::SpectralNormPsd { src: self.id, top },
            &[self.id],
        ))
    }

    pub fn softmax_rows(&self) -> Var<'t> {
        self.unary(Op::SoftmaxRows(self.id), |a| {
            let mut out = a.clone();
            for r in 0..a.rows() {
                let row = a.row(r);
                let m = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
                for c in 0..a.cols() {
                    out[(r, c)] = (row[c] - m).exp() / z;
                }
            }
            out
        })
    }

    /// Mean over rows of `-Σ_k t_k ln p_k`, where `self` holds probabilities.
    ///
    /// Entries with zero target weight are skipped, so a one-hot prediction
    /// matching a one-hot target gives exactly zero.
    pub fn cross_entropy(&self, target: &Matrix) -> Result<Var<'t>> {
        let value = {
            let p = self.tape.value_of(self.id);
            same_shape("cross_entropy", &p, target)?;
            let mut total = 0.0;
            for (&p, &t) in p.as_slice().iter().zip(target.as_slice()) {
                if t > 0.0 {
                    if !(p > 0.0) {
                        return Err(Error::Domain { op: "cross_entropy", value: p });
                    }
                    total -= t * p.ln();
                }
            }
            total / p.rows() as f64
        };
        Ok(self.tape.push(
            Matrix::scalar(value),
            Op::CrossEntropy {
                pred: self.id,
                target: target.clone(),
            },
            &[self.id],
        ))
    }
}
