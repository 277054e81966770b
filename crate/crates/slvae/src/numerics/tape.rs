//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] is built fresh for every loss evaluation: leaves are pushed,
//! operations record their inputs and cached forward value, and
//! [`Tape::backward`] sweeps the record in reverse from a 1x1 root.

use std::sync::Arc;

use super::sparse::CsrMatrix;
use super::tensor::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    SpMul(Arc<CsrMatrix>, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Maximum(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Log(Var),
    Exp(Var),
    Clamp(Var, f64, f64),
    PosPart(Var),
    Sum(Var),
    SumSquares(Var),
    LogSumExp(Var),
    SliceCols(Var, usize),
    Transpose(Var),
    Reshape(Var),
    StackFeatures(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node on the tape.
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, zeros when the root does not depend on it.
    pub fn wrt(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn leaf(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf)
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.leaf(m)
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn same_shape(&self, a: Var, b: Var, context: &'static str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Dimension {
                expected: sa.0 * sa.1,
                got: sb.0 * sb.1,
                context,
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ca, rb) = (self.shape(a).1, self.shape(b).0);
        if ca != rb {
            return Err(Error::Dimension {
                expected: ca,
                got: rb,
                context: "matmul inner dimension",
            });
        }
        let v = self.value(a).matmul(self.value(b));
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// Constant sparse matrix times a dense variable.
    pub fn sp_mul(&mut self, s: &Arc<CsrMatrix>, a: Var) -> Result<Var> {
        if s.n_cols() != self.shape(a).0 {
            return Err(Error::Dimension {
                expected: s.n_cols(),
                got: self.shape(a).0,
                context: "sparse product",
            });
        }
        let v = s.mul_dense(self.value(a));
        Ok(self.push(v, Op::SpMul(Arc::clone(s), a)))
    }

    /// `a + b` where `b` is a `1 x cols` row broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.shape(a);
        if self.shape(b) != (1, ca) {
            return Err(Error::Dimension {
                expected: ca,
                got: self.shape(b).1,
                context: "row broadcast",
            });
        }
        let mut v = self.value(a).clone();
        let bias = self.value(b).as_slice().to_vec();
        for r in 0..ra {
            for (c, bv) in bias.iter().enumerate() {
                let cur = v.get(r, c);
                v.set(r, c, cur + bv);
            }
        }
        Ok(self.push(v, Op::AddRow(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// Elementwise maximum; ties send the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "maximum")?;
        let v = self.value(a).zip_map(self.value(b), f64::max);
        Ok(self.push(v, Op::Maximum(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x + s);
        self.push(v, Op::AddScalar(a))
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let n = self.scale(a, -1.0);
        self.add_scalar(n, 1.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Log(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    /// Elementwise `max(0, a)`.
    pub fn pos_part(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::PosPart(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Matrix::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let v = Matrix::scalar(self.value(a).as_slice().iter().map(|x| x * x).sum());
        self.push(v, Op::SumSquares(a))
    }

    /// Stable `log(sum(exp(a)))` over all entries.
    pub fn log_sum_exp(&mut self, a: Var) -> Result<Var> {
        let v = super::stable::log_sum_exp(self.value(a).as_slice())?;
        Ok(self.push(Matrix::scalar(v), Op::LogSumExp(a)))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start + len > c {
            return Err(Error::Dimension {
                expected: c,
                got: start + len,
                context: "column slice",
            });
        }
        let src = self.value(a);
        let mut v = Matrix::zeros(r, len);
        for i in 0..r {
            for j in 0..len {
                v.set(i, j, src.get(i, start + j));
            }
        }
        Ok(self.push(v, Op::SliceCols(a, start)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    /// Row-major reinterpretation with the same element count.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let src = self.value(a);
        let v = Matrix::from_vec(rows, cols, src.as_slice().to_vec())?;
        Ok(self.push(v, Op::Reshape(a)))
    }

    /// Turn `F` equally shaped `m x n` matrices into an `(m*n) x F` feature
    /// matrix; row `i*n + j` holds entry `(i, j)` of every input.
    pub fn stack_features(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Empty("feature stack"));
        };
        for &p in &parts[1..] {
            self.same_shape(first, p, "feature stack")?;
        }
        let (m, n) = self.shape(first);
        let f = parts.len();
        let mut data = vec![0.0; m * n * f];
        for (k, &p) in parts.iter().enumerate() {
            for (idx, &x) in self.value(p).as_slice().iter().enumerate() {
                data[idx * f + k] = x;
            }
        }
        let v = Matrix::from_vec(m * n, f, data)?;
        Ok(self.push(v, Op::StackFeatures(parts.to_vec())))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Grads> {
        let (r, c) = self.shape(root);
        if (r, c) != (1, 1) {
            return Err(Error::NonScalarRoot { rows: r, cols: c });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Matrix::scalar(1.0));

        fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut grads[v.0] {
                Some(cur) => cur.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b));
                    let gb = self.value(*a).t_matmul(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::SpMul(s, a) => acc(&mut grads, *a, s.t_mul_dense(&g)),
                Op::AddRow(a, b) => {
                    let cols = g.cols();
                    let mut gb = Matrix::zeros(1, cols);
                    for rr in 0..g.rows() {
                        for cc in 0..cols {
                            let cur = gb.get(0, cc);
                            gb.set(0, cc, cur + g.get(rr, cc));
                        }
                    }
                    acc(&mut grads, *b, gb);
                    acc(&mut grads, *a, g);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.map(|x| -x));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y);
                    let gb = g.zip_map(self.value(*a), |x, y| x * y);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Maximum(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let mut ga = g.clone();
                    let mut gb = g;
                    for i in 0..ga.len() {
                        if va.as_slice()[i] >= vb.as_slice()[i] {
                            gb.as_mut_slice()[i] = 0.0;
                        } else {
                            ga.as_mut_slice()[i] = 0.0;
                        }
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.map(|x| x * s)),
                Op::AddScalar(a) => acc(&mut grads, *a, g),
                Op::Relu(a) | Op::PosPart(a) => {
                    let ga = g.zip_map(self.value(*a), |x, v| if v > 0.0 { x } else { 0.0 });
                    acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = g.zip_map(&node.value, |x, s| x * s * (1.0 - s));
                    acc(&mut grads, *a, ga);
                }
                Op::Log(a) => {
                    let ga = g.zip_map(self.value(*a), |x, v| x / v);
                    acc(&mut grads, *a, ga);
                }
                Op::Exp(a) => {
                    let ga = g.zip_map(&node.value, |x, e| x * e);
                    acc(&mut grads, *a, ga);
                }
                Op::Clamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    let ga = g.zip_map(self.value(*a), |x, v| {
                        if v >= lo && v <= hi {
                            x
                        } else {
                            0.0
                        }
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let (r, c) = self.shape(*a);
                    acc(&mut grads, *a, Matrix::filled(r, c, g.item()));
                }
                Op::SumSquares(a) => {
                    let s = 2.0 * g.item();
                    acc(&mut grads, *a, self.value(*a).map(|v| s * v));
                }
                Op::LogSumExp(a) => {
                    let lse = node.value.item();
                    let s = g.item();
                    acc(&mut grads, *a, self.value(*a).map(|v| s * (v - lse).exp()));
                }
                Op::SliceCols(a, start) => {
                    let (r, c) = self.shape(*a);
                    let mut ga = Matrix::zeros(r, c);
                    for i in 0..g.rows() {
                        for j in 0..g.cols() {
                            ga.set(i, start + j, g.get(i, j));
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose()),
                Op::Reshape(a) => {
                    let (r, c) = self.shape(*a);
                    acc(&mut grads, *a, Matrix::from_vec(r, c, g.into_vec())?);
                }
                Op::StackFeatures(parts) => {
                    let f = parts.len();
                    let (m, n) = self.shape(parts[0]);
                    for (k, &p) in parts.iter().enumerate() {
                        let data: Vec<f64> = (0..m * n).map(|idx| g.as_slice()[idx * f + k]).collect();
                        acc(&mut grads, p, Matrix::from_vec(m, n, data)?);
                    }
                }
            }
        }
        let shapes = self.nodes[..=root.0].iter().map(|n| n.value.shape()).collect();
        Ok(Grads { grads, shapes })
    }
}

/// Value and gradients of a scalar function of several matrix inputs.
///
/// `f` receives a fresh tape and one leaf per input, and returns the root.
pub fn grad<F>(f: F, inputs: &[Matrix]) -> Result<(f64, Vec<Matrix>)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let root = f(&mut tape, &vars)?;
    let grads = tape.backward(root)?;
    let value = tape.scalar(root);
    Ok((value, vars.iter().map(|&v| grads.wrt(v)).collect()))
}

/// Value only; the tape is still built but never swept.
pub fn eval<F>(f: &F, inputs: &[Matrix]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let root = f(&mut tape, &vars)?;
    Ok(tape.scalar(root))
}
