//! A minimal reverse-mode tape over batched row-major matrices.
//!
//! Nodes are appended in evaluation order, so the reverse of insertion order
//! is a valid topological order for backpropagation. Parameter leaves carry
//! the offset of their values in the flat parameter vector; their gradients
//! are accumulated there.

use crate::linalg::{gemm, Matrix};

use super::loss::LossKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Var(usize);

enum Op {
    Leaf,
    Param { offset: usize },
    /// `a · bᵀ`
    MatMulT(Var, Var),
    /// Adds the `1 × cols` row `b` to every row of `x`.
    AddBias(Var, Var),
    LeakyRelu(Var, f64),
    /// `out[:, j] = x[:, perm[j]]`
    PermuteCols(Var, Vec<usize>),
    Sub(Var, Var),
    NormalizeRows(Var),
    /// Mean over all entries of the measurement-consistency loss.
    McLoss { yhat: Var, target: Matrix, kind: LossKind },
    /// Sum of squares divided by the number of rows.
    RowSquaredNormMean(Var),
    /// Weighted sum of `1 × 1` nodes.
    Combine(Vec<(Var, f64)>),
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub(crate) struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.as_slice()[0]
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn param(&mut self, value: Matrix, offset: usize) -> Var {
        self.push(value, Op::Param { offset }, true)
    }

    /// A copy of `v`'s value that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self
            .value(a)
            .matmul_t(self.value(b))
            .expect("tape shapes are fixed by construction");
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::MatMulT(a, b), needs)
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let mut value = self.value(x).clone();
        let bias = self.value(b).as_slice().to_vec();
        let cols = value.cols();
        for row in value.as_mut_slice().chunks_mut(cols) {
            row.iter_mut().zip(&bias).for_each(|(v, b)| *v += b);
        }
        let needs = self.needs(x) || self.needs(b);
        self.push(value, Op::AddBias(x, b), needs)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let mut value = self.value(x).clone();
        value
            .as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = if *v > 0.0 { *v } else { slope * *v });
        let needs = self.needs(x);
        self.push(value, Op::LeakyRelu(x, slope), needs)
    }

    pub fn permute_cols(&mut self, x: Var, perm: Vec<usize>) -> Var {
        let src = self.value(x);
        let cols = src.cols();
        let mut value = Matrix::zeros(src.rows(), cols);
        for (out, row) in value.as_mut_slice().chunks_mut(cols).zip(src.iter_rows()) {
            for (j, &p) in perm.iter().enumerate() {
                out[j] = row[p];
            }
        }
        let needs = self.needs(x);
        self.push(value, Op::PermuteCols(x, perm), needs)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).clone();
        value
            .as_mut_slice()
            .iter_mut()
            .zip(self.value(b).as_slice())
            .for_each(|(x, y)| *x -= y);
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Sub(a, b), needs)
    }

    pub fn normalize_rows(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        let cols = value.cols();
        for row in value.as_mut_slice().chunks_mut(cols) {
            let n = crate::linalg::norm(row).max(f64::MIN_POSITIVE);
            row.iter_mut().for_each(|v| *v /= n);
        }
        let needs = self.needs(x);
        self.push(value, Op::NormalizeRows(x), needs)
    }

    pub fn mc_loss(&mut self, yhat: Var, target: Matrix, kind: LossKind) -> Var {
        let pred = self.value(yhat).as_slice();
        let total: f64 = target
            .as_slice()
            .iter()
            .zip(pred)
            .map(|(&y, &p)| kind.entry(y, p))
            .sum();
        let value = scalar(total / pred.len() as f64);
        let needs = self.needs(yhat);
        self.push(value, Op::McLoss { yhat, target, kind }, needs)
    }

    pub fn row_squared_norm_mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let total: f64 = v.as_slice().iter().map(|a| a * a).sum();
        let value = scalar(total / v.rows() as f64);
        let needs = self.needs(x);
        self.push(value, Op::RowSquaredNormMean(x), needs)
    }

    pub fn combine(&mut self, terms: Vec<(Var, f64)>) -> Var {
        let total = terms.iter().map(|&(v, w)| w * self.scalar(v)).sum();
        let needs = terms.iter().any(|&(v, _)| self.needs(v));
        self.push(scalar(total), Op::Combine(terms), needs)
    }

    /// Feeds the side of every leaky-rectifier kink into `h`.
    pub fn hash_activations(&self, h: &mut impl std::hash::Hasher) {
        for node in &self.nodes {
            if let Op::LeakyRelu(x, _) = node.op {
                for v in self.value(x).as_slice() {
                    h.write_u8((*v > 0.0) as u8);
                }
            }
        }
    }

    /// Backpropagates from the scalar `output`, accumulating parameter
    /// gradients into `grad` (indexed like the flat parameter vector).
    pub fn backward(&self, output: Var, grad: &mut [f64]) {
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(scalar(1.0));
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param { offset } => {
                    grad[*offset..*offset + g.as_slice().len()]
                        .iter_mut()
                        .zip(g.as_slice())
                        .for_each(|(a, b)| *a += b);
                }
                Op::MatMulT(a, b) => {
                    if self.needs(*a) {
                        // dA = dC · B
                        let bv = self.value(*b);
                        let mut da = Matrix::zeros(g.rows(), bv.cols());
                        gemm(1.0, &g, false, bv, false, 0.0, &mut da);
                        accumulate(&mut grads, *a, da);
                    }
                    if self.needs(*b) {
                        // dB = dCᵀ · A
                        let av = self.value(*a);
                        let mut db = Matrix::zeros(g.cols(), av.cols());
                        gemm(1.0, &g, true, av, false, 0.0, &mut db);
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::AddBias(x, b) => {
                    if self.needs(*b) {
                        let cols = g.cols();
                        let mut db = vec![0.0; cols];
                        for row in g.iter_rows() {
                            db.iter_mut().zip(row).for_each(|(a, r)| *a += r);
                        }
                        accumulate(&mut grads, *b, Matrix::from_vec_unchecked(1, cols, db));
                    }
                    if self.needs(*x) {
                        accumulate(&mut grads, *x, g);
                    }
                }
                Op::LeakyRelu(x, slope) => {
                    let mut dx = g;
                    dx.as_mut_slice()
                        .iter_mut()
                        .zip(self.value(*x).as_slice())
                        .for_each(|(d, &v)| {
                            if v <= 0.0 {
                                *d *= slope
                            }
                        });
                    accumulate(&mut grads, *x, dx);
                }
                Op::PermuteCols(x, perm) => {
                    let cols = g.cols();
                    let mut dx = Matrix::zeros(g.rows(), cols);
                    for (out, row) in dx.as_mut_slice().chunks_mut(cols).zip(g.iter_rows()) {
                        for (j, &p) in perm.iter().enumerate() {
                            out[p] += row[j];
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sub(a, b) => {
                    if self.needs(*b) {
                        let mut nb = g.clone();
                        nb.as_mut_slice().iter_mut().for_each(|v| *v = -*v);
                        accumulate(&mut grads, *b, nb);
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::NormalizeRows(x) => {
                    // d(x/‖x‖) = (dy − y (y·dy)) / ‖x‖
                    let xv = self.value(*x);
                    let yv = &node.value;
                    let cols = g.cols();
                    let mut dx = g.clone();
                    for ((d, y), xr) in dx.as_mut_slice().chunks_mut(cols).zip(yv.iter_rows()).zip(xv.iter_rows()) {
                        let n = crate::linalg::norm(xr).max(f64::MIN_POSITIVE);
                        let proj = crate::linalg::dot(y, d);
                        d.iter_mut().zip(y).for_each(|(dv, yv)| *dv = (*dv - yv * proj) / n);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::McLoss { yhat, target, kind } => {
                    let pred = self.value(*yhat);
                    let scale = g.as_slice()[0] / pred.as_slice().len() as f64;
                    let data = target
                        .as_slice()
                        .iter()
                        .zip(pred.as_slice())
                        .map(|(&y, &p)| scale * kind.entry_grad(y, p))
                        .collect();
                    accumulate(&mut grads, *yhat, Matrix::from_vec_unchecked(pred.rows(), pred.cols(), data));
                }
                Op::RowSquaredNormMean(x) => {
                    let xv = self.value(*x);
                    let scale = 2.0 * g.as_slice()[0] / xv.rows() as f64;
                    let data = xv.as_slice().iter().map(|v| scale * v).collect();
                    accumulate(&mut grads, *x, Matrix::from_vec_unchecked(xv.rows(), xv.cols(), data));
                }
                Op::Combine(terms) => {
                    let s = g.as_slice()[0];
                    for &(v, w) in terms {
                        if self.needs(v) {
                            accumulate(&mut grads, v, scalar(w * s));
                        }
                    }
                }
            }
        }
    }
}

fn scalar(v: f64) -> Matrix {
    Matrix::from_vec_unchecked(1, 1, vec![v])
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing
            .as_mut_slice()
            .iter_mut()
            .zip(g.as_slice())
            .for_each(|(a, b)| *a += b),
        slot => *slot = Some(g),
    }
}
