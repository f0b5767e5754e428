//! Tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! Nodes are appended to a [`Graph`] in evaluation order, so the node list
//! is already a topological order and the backward sweep simply walks it in
//! reverse. A node requires a gradient when it is a parameter or when any of
//! its parents does; constants never receive gradients.
//!
//! `add` and `mul` broadcast their right operand when it is `1×1`, a
//! `1×cols` row or a `rows×1` column; the backward pass sums the incoming
//! gradient back down to the operand's shape.

use super::matrix::{matmul_nt_into, matmul_tn_into, Matrix};
use crate::error::{Error, Result};

/// Lower clamp applied inside [`Graph::log`].
pub const LOG_CLAMP: f64 = 1e-12;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    Scalar,
    Row,
    Column,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Scale(Var, f64),
    Transpose(Var),
    SoftmaxRows(Var),
    Log(Var),
    Exp(Var),
    Relu(Var),
    Sigmoid(Var),
    Sum(Var),
    Mean(Var),
    GatherRows(Var, Vec<usize>),
    RowNorms(Var),
    ConcatRows(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    grad: Option<Matrix>,
    requires_grad: bool,
    op: Op,
}

/// A single computation graph. Build it, call [`Graph::backward`] once on a
/// scalar root, then read gradients with [`Graph::grad`].
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward root with respect to `v`. `None` for
    /// nodes that do not require gradients or before `backward` ran.
    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.nodes[v.0].grad.as_ref()
    }

    fn push(&mut self, value: Matrix, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, rg, Op::MatMul(a, b)))
    }

    fn broadcast_kind(&self, op: &'static str, a: Var, b: Var) -> Result<Broadcast> {
        let (ar, ac) = self.value(a).shape();
        let (br, bc) = self.value(b).shape();
        if (ar, ac) == (br, bc) {
            Ok(Broadcast::Same)
        } else if (br, bc) == (1, 1) {
            Ok(Broadcast::Scalar)
        } else if br == 1 && bc == ac {
            Ok(Broadcast::Row)
        } else if bc == 1 && br == ar {
            Ok(Broadcast::Column)
        } else {
            Err(Error::dim(op, format!("{ar}x{ac} with {br}x{bc}")))
        }
    }

    fn broadcast_apply(
        &self,
        a: Var,
        b: Var,
        kind: Broadcast,
        f: impl Fn(f64, f64) -> f64,
    ) -> Matrix {
        let av = self.value(a);
        let bv = self.value(b);
        let (rows, cols) = av.shape();
        let mut out = av.clone();
        let bs = bv.as_slice();
        for r in 0..rows {
            for c in 0..cols {
                let rhs = match kind {
                    Broadcast::Same => bs[r * cols + c],
                    Broadcast::Scalar => bs[0],
                    Broadcast::Row => bs[c],
                    Broadcast::Column => bs[r],
                };
                out[(r, c)] = f(av[(r, c)], rhs);
            }
        }
        out
    }

    /// `a + b`, broadcasting `b`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = self.broadcast_kind("add", a, b)?;
        let value = self.broadcast_apply(a, b, kind, |x, y| x + y);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, rg, Op::Add(a, b, kind)))
    }

    /// Elementwise `a ∘ b`, broadcasting `b`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = self.broadcast_kind("mul", a, b)?;
        let value = self.broadcast_apply(a, b, kind, |x, y| x * y);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, rg, Op::Mul(a, b, kind)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        let rg = self.any_grad(&[a]);
        self.push(value, rg, Op::Scale(a, s))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.any_grad(&[a]);
        self.push(value, rg, Op::Transpose(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).softmax_rows();
        let rg = self.any_grad(&[a]);
        self.push(value, rg, Op::SoftmaxRows(a))
    }

    /// `log(max(x, 1e-12))`; the gradient is zero where the clamp is active.
    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(LOG_CLAMP).ln());
        let rg = self.any_grad(&[a]);
        self.push(value, rg, Op::Log(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        let rg = self.any_grad(&[a]);
        self.push(value, rg, Op::Exp(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        let rg = self.any_grad(&[a]);
        self.push(value, rg, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let rg = self.any_grad(&[a]);
        self.push(value, rg, Op::Sigmoid(a))
    }

    /// Sum of all entries, as a 1×1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        let rg = self.any_grad(&[a]);
        self.push(value, rg, Op::Sum(a))
    }

    /// Mean of all entries, as a 1×1 node.
    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let value = Matrix::scalar(m.sum() / m.len().max(1) as f64);
        let rg = self.any_grad(&[a]);
        self.push(value, rg, Op::Mean(a))
    }

    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let value = self.value(a).gather_rows(indices)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, rg, Op::GatherRows(a, indices.to_vec())))
    }

    /// Euclidean norm of each row, as a rows×1 column.
    pub fn row_norms(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let norms: Vec<f64> = m
            .row_iter()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let value = Matrix::from_vec(norms.len(), 1, norms).expect("column shape");
        let rg = self.any_grad(&[a]);
        self.push(value, rg, Op::RowNorms(a))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Matrix::concat_rows(&mats)?;
        let rg = self.any_grad(parts);
        Ok(self.push(value, rg, Op::ConcatRows(parts.to_vec())))
    }

    /// Reverse sweep from a 1×1 root. Clears gradients from any previous
    /// sweep first.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).shape() != (1, 1) {
            let (r, c) = self.value(root).shape();
            return Err(Error::Contract(format!(
                "backward needs a 1x1 root, got {r}x{c}"
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.nodes[root.0].grad = Some(Matrix::scalar(1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            self.propagate(i, &g);
            self.nodes[i].grad = Some(g);
        }
        for node in &mut self.nodes {
            if node.requires_grad && node.grad.is_none() {
                node.grad = Some(Matrix::zeros(node.value.rows(), node.value.cols()));
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: Matrix) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => g.axpy(1.0, &delta).expect("gradient shape"),
            None => node.grad = Some(delta),
        }
    }

    fn propagate(&mut self, i: usize, g: &Matrix) {
        // Take the op out so parents can be mutated while we read it.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.requires_grad(*a) {
                    let bv = self.value(*b);
                    let mut da = Matrix::zeros(g.rows(), bv.rows());
                    matmul_nt_into(g, bv, &mut da);
                    self.accumulate(*a, da);
                }
                if self.requires_grad(*b) {
                    let av = self.value(*a);
                    let mut db = Matrix::zeros(av.cols(), g.cols());
                    matmul_tn_into(av, g, &mut db);
                    self.accumulate(*b, db);
                }
            }
            Op::Add(a, b, kind) => {
                if self.requires_grad(*a) {
                    self.accumulate(*a, g.clone());
                }
                if self.requires_grad(*b) {
                    let db = reduce_to(g, *kind, self.value(*b).shape());
                    self.accumulate(*b, db);
                }
            }
            Op::Mul(a, b, kind) => {
                if self.requires_grad(*a) {
                    let bexp = expand(self.value(*b), *kind, g.shape());
                    let da = g.hadamard(&bexp).expect("shape");
                    self.accumulate(*a, da);
                }
                if self.requires_grad(*b) {
                    let prod = g.hadamard(self.value(*a)).expect("shape");
                    let db = reduce_to(&prod, *kind, self.value(*b).shape());
                    self.accumulate(*b, db);
                }
            }
            Op::Scale(a, s) => self.accumulate(*a, g.scale(*s)),
            Op::Transpose(a) => self.accumulate(*a, g.transpose()),
            Op::SoftmaxRows(a) => {
                let y = &self.nodes[i].value;
                let mut da = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for (c, d) in da.row_mut(r).iter_mut().enumerate() {
                        *d = yr[c] * (gr[c] - dot);
                    }
                }
                self.accumulate(*a, da);
            }
            Op::Log(a) => {
                let da = g
                    .zip_map(self.value(*a), |gv, x| if x > LOG_CLAMP { gv / x } else { 0.0 })
                    .expect("shape");
                self.accumulate(*a, da);
            }
            Op::Exp(a) => {
                let da = g.hadamard(&self.nodes[i].value).expect("shape");
                self.accumulate(*a, da);
            }
            Op::Relu(a) => {
                let da = g
                    .zip_map(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 })
                    .expect("shape");
                self.accumulate(*a, da);
            }
            Op::Sigmoid(a) => {
                let da = g
                    .zip_map(&self.nodes[i].value, |gv, y| gv * y * (1.0 - y))
                    .expect("shape");
                self.accumulate(*a, da);
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                self.accumulate(*a, Matrix::filled(r, c, g.as_slice()[0]));
            }
            Op::Mean(a) => {
                let (r, c) = self.value(*a).shape();
                let n = (r * c).max(1) as f64;
                self.accumulate(*a, Matrix::filled(r, c, g.as_slice()[0] / n));
            }
            Op::GatherRows(a, idx) => {
                let (r, c) = self.value(*a).shape();
                let mut da = Matrix::zeros(r, c);
                for (k, &src) in idx.iter().enumerate() {
                    for (d, gv) in da.row_mut(src).iter_mut().zip(g.row(k)) {
                        *d += gv;
                    }
                }
                self.accumulate(*a, da);
            }
            Op::RowNorms(a) => {
                let norms = &self.nodes[i].value;
                let x = self.value(*a);
                let mut da = Matrix::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let n = norms.as_slice()[r];
                    if n > 0.0 {
                        let s = g.as_slice()[r] / n;
                        for (d, xv) in da.row_mut(r).iter_mut().zip(x.row(r)) {
                            *d = s * xv;
                        }
                    }
                }
                self.accumulate(*a, da);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    if self.requires_grad(p) {
                        let idx: Vec<usize> = (offset..offset + rows).collect();
                        let dp = g.gather_rows(&idx).expect("rows");
                        self.accumulate(p, dp);
                    }
                    offset += rows;
                }
            }
        }
        self.nodes[i].op = op;
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn expand(b: &Matrix, kind: Broadcast, shape: (usize, usize)) -> Matrix {
    let (rows, cols) = shape;
    let bs = b.as_slice();
    let mut out = Matrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            out[(r, c)] = match kind {
                Broadcast::Same => bs[r * cols + c],
                Broadcast::Scalar => bs[0],
                Broadcast::Row => bs[c],
                Broadcast::Column => bs[r],
            };
        }
    }
    out
}

fn reduce_to(g: &Matrix, kind: Broadcast, shape: (usize, usize)) -> Matrix {
    match kind {
        Broadcast::Same => g.clone(),
        Broadcast::Scalar => Matrix::scalar(g.sum()),
        Broadcast::Row => g.column_means().scale(g.rows() as f64),
        Broadcast::Column => {
            let sums: Vec<f64> = g.row_iter().map(|r| r.iter().sum()).collect();
            Matrix::from_vec(shape.0, 1, sums).expect("column shape")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let w = g.param(Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap());
        let s = g.sum(w);
        g.backward(s).unwrap();
        assert_eq!(g.grad(w).unwrap(), &Matrix::ones(2, 2));
    }

    #[test]
    fn square_sum_gradient() {
        let mut g = Graph::new();
        let w = g.param(Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap());
        let sq = g.mul(w, w).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap();
        assert_eq!(
            g.grad(w).unwrap(),
            &Matrix::from_rows(&[[2.0, 4.0], [6.0, 8.0]]).unwrap()
        );
    }

    #[test]
    fn fan_out_accumulates() {
        let mut g = Graph::new();
        let w = g.param(Matrix::from_rows(&[[0.5, -1.0], [2.0, 0.0]]).unwrap());
        let a = g.sum(w);
        let b = g.sum(w);
        let y = g.add(a, b).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(w).unwrap(), &Matrix::filled(2, 2, 2.0));
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut g = Graph::new();
        let w = g.param(Matrix::ones(2, 2));
        assert!(matches!(g.backward(w), Err(Error::Contract(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let w = g.param(Matrix::ones(1, 2));
        let c = g.constant(Matrix::row_vector(&[3.0, 4.0]));
        let p = g.mul(w, c).unwrap();
        let s = g.sum(p);
        g.backward(s).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(w).unwrap().as_slice(), &[3.0, 4.0]);
    }

    #[test]
    fn unreached_params_get_zero_gradient() {
        let mut g = Graph::new();
        let w = g.param(Matrix::ones(1, 2));
        let unused = g.param(Matrix::ones(3, 1));
        let s = g.sum(w);
        g.backward(s).unwrap();
        assert_eq!(g.grad(unused).unwrap(), &Matrix::zeros(3, 1));
    }

    #[test]
    fn broadcast_reductions() {
        let mut g = Graph::new();
        let x = g.param(Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).unwrap());
        let row = g.param(Matrix::row_vector(&[10.0, 20.0]));
        let col = g.param(Matrix::from_vec(3, 1, vec![1.0, 2.0, 3.0]).unwrap());
        let s = g.param(Matrix::scalar(2.0));
        let a = g.add(x, row).unwrap();
        let b = g.mul(a, col).unwrap();
        let c = g.mul(b, s).unwrap();
        let total = g.sum(c);
        g.backward(total).unwrap();
        // d/d row_c = Σ_r col_r · s = 12
        assert_eq!(g.grad(row).unwrap().as_slice(), &[12.0, 12.0]);
        // d/d col_r = s · Σ_c (x_rc + row_c)
        assert_eq!(g.grad(col).unwrap().as_slice(), &[66.0, 74.0, 82.0]);
        assert_eq!(g.grad(s).unwrap().item().unwrap(), 230.0);
        let bad = g.constant(Matrix::zeros(2, 3));
        assert!(g.add(x, bad).is_err());
    }

    #[test]
    fn log_clamp_has_zero_gradient() {
        let mut g = Graph::new();
        let x = g.param(Matrix::row_vector(&[0.0, 0.5]));
        let l = g.log(x);
        assert!((g.value(l)[(0, 0)] - LOG_CLAMP.ln()).abs() < 1e-12);
        let s = g.sum(l);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().as_slice(), &[0.0, 2.0]);
    }
}
