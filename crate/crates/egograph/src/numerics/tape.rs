//! Reverse-mode gradient engine over a fixed matrix operation set.
//!
//! A `Tape` records matrix-valued operations eagerly (values are computed
//! at recording time) and propagates gradients backward on demand. The op
//! set is exactly what the encoder/descriptor/loss pipeline needs; this is
//! not a general autodiff library.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::matrix::Matrix;
use super::store::ParameterStore;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValueId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(ValueId, ValueId),
    Sub(ValueId, ValueId),
    Mul(ValueId, ValueId),
    Div(ValueId, ValueId),
    Neg(ValueId),
    Scale(ValueId, f64),
    /// Scale every entry of the first operand by a 1x1 tape value.
    ScaleByScalar(ValueId, ValueId),
    MatMul(ValueId, ValueId),
    /// a * b^T
    MatMulNT(ValueId, ValueId),
    /// m x n plus a broadcast 1 x n row.
    AddRow(ValueId, ValueId),
    Relu(ValueId),
    LeakyRelu(ValueId, f64),
    Softplus(ValueId),
    Sqrt(ValueId),
    /// Per-row squared Euclidean norm: m x n -> m x 1.
    RowSqnorm(ValueId),
    /// Per-row x / max(||x||, eps).
    RowUnit(ValueId, f64),
    /// Rows of a (m x n) scaled by w (m x 1).
    ScaleRows(ValueId, ValueId),
    /// Softmax over a column vector (m x 1), max-subtracted.
    ColSoftmax(ValueId),
    ConcatCols(ValueId, ValueId),
    ConcatRows(ValueId, ValueId),
    GatherRows(ValueId, Vec<usize>),
    /// Mean of the selected rows: -> 1 x n.
    MeanRows(ValueId, Vec<usize>),
}

struct Node {
    value: Matrix,
    grad: Matrix,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, id: ValueId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: ValueId) -> &Matrix {
        &self.nodes[id.0].grad
    }

    fn push(&mut self, value: Matrix, op: Op) -> ValueId {
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.nodes.push(Node { value, grad, op });
        ValueId(self.nodes.len() - 1)
    }

    /// Leaf node. Gradients are accumulated for every leaf; whether they
    /// flow anywhere is the caller's concern (constants simply ignore them).
    pub fn leaf(&mut self, value: Matrix) -> ValueId {
        self.push(value, Op::Leaf)
    }

    pub fn scalar_leaf(&mut self, v: f64) -> ValueId {
        self.leaf(Matrix::from_vec(1, 1, vec![v]))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let v = self.value(a).add(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let v = self.value(a).sub(self.value(b));
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let v = self.value(a).hadamard(self.value(b));
        self.push(v, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: ValueId, b: ValueId) -> ValueId {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "div shape mismatch");
        let v = Matrix::from_vec(
            self.value(a).rows(),
            self.value(a).cols(),
            self.value(a)
                .data()
                .iter()
                .zip(self.value(b).data())
                .map(|(x, y)| x / y)
                .collect(),
        );
        self.push(v, Op::Div(a, b))
    }

    pub fn neg(&mut self, a: ValueId) -> ValueId {
        let v = self.value(a).scale(-1.0);
        self.push(v, Op::Neg(a))
    }

    pub fn scale(&mut self, a: ValueId, c: f64) -> ValueId {
        let v = self.value(a).scale(c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn scale_by_scalar(&mut self, a: ValueId, s: ValueId) -> ValueId {
        let sv = self.value(s).scalar();
        let v = self.value(a).scale(sv);
        self.push(v, Op::ScaleByScalar(a, s))
    }

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_nt(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let v = self.value(a).matmul_nt(self.value(b));
        self.push(v, Op::MatMulNT(a, b))
    }

    pub fn add_row(&mut self, a: ValueId, row: ValueId) -> ValueId {
        let (m, n) = self.value(a).shape();
        assert_eq!(self.value(row).shape(), (1, n), "add_row expects a 1 x n row");
        let mut v = self.value(a).clone();
        for r in 0..m {
            let rv = self.nodes[row.0].value.row(0).to_vec();
            for (o, b) in v.row_mut(r).iter_mut().zip(rv) {
                *o += b;
            }
        }
        self.push(v, Op::AddRow(a, row))
    }

    pub fn relu(&mut self, a: ValueId) -> ValueId {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: ValueId, slope: f64) -> ValueId {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(v, Op::LeakyRelu(a, slope))
    }

    pub fn softplus(&mut self, a: ValueId) -> ValueId {
        let v = self.value(a).map(softplus);
        self.push(v, Op::Softplus(a))
    }

    pub fn sqrt(&mut self, a: ValueId) -> ValueId {
        let v = self.value(a).map(f64::sqrt);
        self.push(v, Op::Sqrt(a))
    }

    pub fn row_sqnorm(&mut self, a: ValueId) -> ValueId {
        let m = self.value(a).rows();
        let mut v = Matrix::zeros(m, 1);
        for r in 0..m {
            let s: f64 = self.value(a).row(r).iter().map(|x| x * x).sum();
            v.set(r, 0, s);
        }
        self.push(v, Op::RowSqnorm(a))
    }

    pub fn row_unit(&mut self, a: ValueId, eps: f64) -> ValueId {
        assert!(eps > 0.0, "row_unit eps must be positive");
        let (m, n) = self.value(a).shape();
        let mut v = Matrix::zeros(m, n);
        for r in 0..m {
            let norm = self.value(a).row_norm(r).max(eps);
            for c in 0..n {
                v.set(r, c, self.value(a).get(r, c) / norm);
            }
        }
        self.push(v, Op::RowUnit(a, eps))
    }

    pub fn scale_rows(&mut self, a: ValueId, w: ValueId) -> ValueId {
        let (m, n) = self.value(a).shape();
        assert_eq!(self.value(w).shape(), (m, 1), "scale_rows expects m x 1 weights");
        let mut v = Matrix::zeros(m, n);
        for r in 0..m {
            let wr = self.value(w).get(r, 0);
            for c in 0..n {
                v.set(r, c, self.value(a).get(r, c) * wr);
            }
        }
        self.push(v, Op::ScaleRows(a, w))
    }

    pub fn col_softmax(&mut self, a: ValueId) -> ValueId {
        let m = self.value(a).rows();
        assert_eq!(self.value(a).cols(), 1, "col_softmax expects m x 1");
        let max = self
            .value(a)
            .data()
            .iter()
            .fold(f64::NEG_INFINITY, |acc, &x| acc.max(x));
        let exps: Vec<f64> = self.value(a).data().iter().map(|&x| (x - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let v = Matrix::from_vec(m, 1, exps.into_iter().map(|e| e / total).collect());
        self.push(v, Op::ColSoftmax(a))
    }

    pub fn concat_cols(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let (m, na) = self.value(a).shape();
        let (mb, nb) = self.value(b).shape();
        assert_eq!(m, mb, "concat_cols row mismatch");
        let mut v = Matrix::zeros(m, na + nb);
        for r in 0..m {
            for c in 0..na {
                v.set(r, c, self.value(a).get(r, c));
            }
            for c in 0..nb {
                v.set(r, na + c, self.value(b).get(r, c));
            }
        }
        self.push(v, Op::ConcatCols(a, b))
    }

    pub fn concat_rows(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let v = Matrix::vstack(&[self.value(a), self.value(b)]);
        self.push(v, Op::ConcatRows(a, b))
    }

    pub fn gather_rows(&mut self, a: ValueId, indices: &[usize]) -> ValueId {
        let n = self.value(a).cols();
        let mut v = Matrix::zeros(indices.len(), n);
        for (out_r, &src_r) in indices.iter().enumerate() {
            for c in 0..n {
                v.set(out_r, c, self.value(a).get(src_r, c));
            }
        }
        self.push(v, Op::GatherRows(a, indices.to_vec()))
    }

    pub fn mean_rows(&mut self, a: ValueId, indices: &[usize]) -> ValueId {
        assert!(!indices.is_empty(), "mean_rows over an empty index set");
        let n = self.value(a).cols();
        let mut v = Matrix::zeros(1, n);
        for &r in indices {
            for c in 0..n {
                v.set(0, c, v.get(0, c) + self.value(a).get(r, c));
            }
        }
        let inv = 1.0 / indices.len() as f64;
        let v = v.scale(inv);
        self.push(v, Op::MeanRows(a, indices.to_vec()))
    }

    /// Single row as a 1 x n matrix.
    pub fn row(&mut self, a: ValueId, r: usize) -> ValueId {
        self.mean_rows(a, &[r])
    }

    /// Cosine similarity between two 1 x d rows as a 1 x 1 node.
    /// Errors on a zero-norm operand (cosine undefined).
    pub fn cosine(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        for (name, id) in [("left", a), ("right", b)] {
            if self.value(id).row_norm(0) == 0.0 {
                return Err(Error::Loss(format!(
                    "cosine similarity: zero-norm {name} embedding"
                )));
            }
        }
        let dot = self.matmul_nt(a, b);
        let ra = self.row_sqnorm(a);
        let rb = self.row_sqnorm(b);
        let na = self.sqrt(ra);
        let nb = self.sqrt(rb);
        let denom = self.mul(na, nb);
        Ok(self.div(dot, denom))
    }

    /// Dot product of two 1 x d rows as a 1 x 1 node.
    pub fn dot(&mut self, a: ValueId, b: ValueId) -> ValueId {
        self.matmul_nt(a, b)
    }

    /// Mean of a list of 1 x 1 nodes.
    pub fn mean_scalars(&mut self, ids: &[ValueId]) -> ValueId {
        assert!(!ids.is_empty(), "mean of no scalars");
        let mut acc = ids[0];
        for &id in &ids[1..] {
            acc = self.add(acc, id);
        }
        self.scale(acc, 1.0 / ids.len() as f64)
    }

    /// Backward pass from a 1 x 1 loss node. Zeroes all gradients first.
    pub fn backward(&mut self, loss: ValueId) {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward from a non-scalar node");
        for node in &mut self.nodes {
            node.grad.fill(0.0);
        }
        self.nodes[loss.0].grad.set(0, 0, 1.0);

        for i in (0..self.nodes.len()).rev() {
            let go = self.nodes[i].grad.clone();
            if go.data().iter().all(|&g| g == 0.0) {
                continue;
            }
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    self.nodes[a.0].grad.add_assign(&go);
                    self.nodes[b.0].grad.add_assign(&go);
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    self.nodes[a.0].grad.add_assign(&go);
                    self.nodes[b.0].grad.add_assign(&go.scale(-1.0));
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let da = go.hadamard(&self.nodes[b.0].value);
                    let db = go.hadamard(&self.nodes[a.0].value);
                    self.nodes[a.0].grad.add_assign(&da);
                    self.nodes[b.0].grad.add_assign(&db);
                }
                Op::Div(a, b) => {
                    let (a, b) = (*a, *b);
                    let bv = &self.nodes[b.0].value;
                    let da = go.zip_div(bv);
                    let db = go
                        .hadamard(&self.nodes[a.0].value)
                        .zip_div(bv)
                        .zip_div(bv)
                        .scale(-1.0);
                    self.nodes[a.0].grad.add_assign(&da);
                    self.nodes[b.0].grad.add_assign(&db);
                }
                Op::Neg(a) => {
                    let a = *a;
                    self.nodes[a.0].grad.add_assign(&go.scale(-1.0));
                }
                Op::Scale(a, c) => {
                    let (a, c) = (*a, *c);
                    self.nodes[a.0].grad.add_assign(&go.scale(c));
                }
                Op::ScaleByScalar(a, s) => {
                    let (a, s) = (*a, *s);
                    let sv = self.nodes[s.0].value.scalar();
                    let da = go.scale(sv);
                    let ds: f64 = go
                        .data()
                        .iter()
                        .zip(self.nodes[a.0].value.data())
                        .map(|(g, x)| g * x)
                        .sum();
                    self.nodes[a.0].grad.add_assign(&da);
                    let g = self.nodes[s.0].grad.get(0, 0);
                    self.nodes[s.0].grad.set(0, 0, g + ds);
                }
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let da = go.matmul_nt(&self.nodes[b.0].value);
                    let db = self.nodes[a.0].value.matmul_tn(&go);
                    self.nodes[a.0].grad.add_assign(&da);
                    self.nodes[b.0].grad.add_assign(&db);
                }
                Op::MatMulNT(a, b) => {
                    let (a, b) = (*a, *b);
                    let da = go.matmul(&self.nodes[b.0].value);
                    let db = go.matmul_tn(&self.nodes[a.0].value);
                    self.nodes[a.0].grad.add_assign(&da);
                    self.nodes[b.0].grad.add_assign(&db);
                }
                Op::AddRow(a, row) => {
                    let (a, row) = (*a, *row);
                    self.nodes[a.0].grad.add_assign(&go);
                    let n = go.cols();
                    let mut drow = Matrix::zeros(1, n);
                    for r in 0..go.rows() {
                        for c in 0..n {
                            drow.set(0, c, drow.get(0, c) + go.get(r, c));
                        }
                    }
                    self.nodes[row.0].grad.add_assign(&drow);
                }
                Op::Relu(a) => {
                    let a = *a;
                    let mask = self.nodes[a.0].value.map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    self.nodes[a.0].grad.add_assign(&go.hadamard(&mask));
                }
                Op::LeakyRelu(a, slope) => {
                    let (a, slope) = (*a, *slope);
                    let mask = self.nodes[a.0]
                        .value
                        .map(|x| if x > 0.0 { 1.0 } else { slope });
                    self.nodes[a.0].grad.add_assign(&go.hadamard(&mask));
                }
                Op::Softplus(a) => {
                    let a = *a;
                    let sig = self.nodes[a.0].value.map(sigmoid);
                    self.nodes[a.0].grad.add_assign(&go.hadamard(&sig));
                }
                Op::Sqrt(a) => {
                    let a = *a;
                    let dv = go
                        .data()
                        .iter()
                        .zip(self.nodes[i].value.data())
                        .map(|(g, y)| g / (2.0 * y))
                        .collect();
                    let da = Matrix::from_vec(go.rows(), go.cols(), dv);
                    self.nodes[a.0].grad.add_assign(&da);
                }
                Op::RowSqnorm(a) => {
                    let a = *a;
                    let (m, n) = self.nodes[a.0].value.shape();
                    let mut da = Matrix::zeros(m, n);
                    for r in 0..m {
                        let g = go.get(r, 0);
                        for c in 0..n {
                            da.set(r, c, 2.0 * self.nodes[a.0].value.get(r, c) * g);
                        }
                    }
                    self.nodes[a.0].grad.add_assign(&da);
                }
                Op::RowUnit(a, eps) => {
                    let (a, eps) = (*a, *eps);
                    let (m, n) = self.nodes[a.0].value.shape();
                    let mut da = Matrix::zeros(m, n);
                    for r in 0..m {
                        let norm = self.nodes[a.0].value.row_norm(r);
                        if norm > eps {
                            // y = x / ||x||: dx = (dy - y (y . dy)) / ||x||
                            let y = self.nodes[i].value.row(r);
                            let dy = go.row(r);
                            let ydy: f64 = y.iter().zip(dy).map(|(p, q)| p * q).sum();
                            for c in 0..n {
                                da.set(r, c, (dy[c] - y[c] * ydy) / norm);
                            }
                        } else {
                            // Clamped branch: constant divisor eps.
                            for c in 0..n {
                                da.set(r, c, go.get(r, c) / eps);
                            }
                        }
                    }
                    self.nodes[a.0].grad.add_assign(&da);
                }
                Op::ScaleRows(a, w) => {
                    let (a, w) = (*a, *w);
                    let (m, n) = self.nodes[a.0].value.shape();
                    let mut da = Matrix::zeros(m, n);
                    let mut dw = Matrix::zeros(m, 1);
                    for r in 0..m {
                        let wr = self.nodes[w.0].value.get(r, 0);
                        let mut acc = 0.0;
                        for c in 0..n {
                            da.set(r, c, go.get(r, c) * wr);
                            acc += go.get(r, c) * self.nodes[a.0].value.get(r, c);
                        }
                        dw.set(r, 0, acc);
                    }
                    self.nodes[a.0].grad.add_assign(&da);
                    self.nodes[w.0].grad.add_assign(&dw);
                }
                Op::ColSoftmax(a) => {
                    let a = *a;
                    let y = &self.nodes[i].value;
                    let m = y.rows();
                    let ydy: f64 = (0..m).map(|r| y.get(r, 0) * go.get(r, 0)).sum();
                    let mut da = Matrix::zeros(m, 1);
                    for r in 0..m {
                        da.set(r, 0, y.get(r, 0) * (go.get(r, 0) - ydy));
                    }
                    self.nodes[a.0].grad.add_assign(&da);
                }
                Op::ConcatCols(a, b) => {
                    let (a, b) = (*a, *b);
                    let na = self.nodes[a.0].value.cols();
                    let nb = self.nodes[b.0].value.cols();
                    let m = go.rows();
                    let mut da = Matrix::zeros(m, na);
                    let mut db = Matrix::zeros(m, nb);
                    for r in 0..m {
                        for c in 0..na {
                            da.set(r, c, go.get(r, c));
                        }
                        for c in 0..nb {
                            db.set(r, c, go.get(r, na + c));
                        }
                    }
                    self.nodes[a.0].grad.add_assign(&da);
                    self.nodes[b.0].grad.add_assign(&db);
                }
                Op::ConcatRows(a, b) => {
                    let (a, b) = (*a, *b);
                    let ma = self.nodes[a.0].value.rows();
                    let mb = self.nodes[b.0].value.rows();
                    let n = go.cols();
                    let mut da = Matrix::zeros(ma, n);
                    let mut db = Matrix::zeros(mb, n);
                    for r in 0..ma {
                        for c in 0..n {
                            da.set(r, c, go.get(r, c));
                        }
                    }
                    for r in 0..mb {
                        for c in 0..n {
                            db.set(r, c, go.get(ma + r, c));
                        }
                    }
                    self.nodes[a.0].grad.add_assign(&da);
                    self.nodes[b.0].grad.add_assign(&db);
                }
                Op::GatherRows(a, indices) => {
                    let (a, indices) = (*a, indices.clone());
                    let (m, n) = self.nodes[a.0].value.shape();
                    let mut da = Matrix::zeros(m, n);
                    for (out_r, &src_r) in indices.iter().enumerate() {
                        for c in 0..n {
                            da.set(src_r, c, da.get(src_r, c) + go.get(out_r, c));
                        }
                    }
                    self.nodes[a.0].grad.add_assign(&da);
                }
                Op::MeanRows(a, indices) => {
                    let (a, indices) = (*a, indices.clone());
                    let (m, n) = self.nodes[a.0].value.shape();
                    let inv = 1.0 / indices.len() as f64;
                    let mut da = Matrix::zeros(m, n);
                    for &r in &indices {
                        for c in 0..n {
                            da.set(r, c, da.get(r, c) + go.get(0, c) * inv);
                        }
                    }
                    self.nodes[a.0].grad.add_assign(&da);
                }
            }
        }
    }
}

impl Matrix {
    fn zip_div(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.shape(), other.shape());
        Matrix::from_vec(
            self.rows(),
            self.cols(),
            self.data()
                .iter()
                .zip(other.data())
                .map(|(a, b)| a / b)
                .collect(),
        )
    }
}

/// Numerically stable log(1 + e^x).
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Named leaves for every entry of a [`ParameterStore`].
pub struct Binding {
    ids: BTreeMap<String, ValueId>,
}

impl Binding {
    pub fn id(&self, name: &str) -> ValueId {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("parameter '{name}' not bound on tape"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, ValueId)> {
        self.ids.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

impl Tape {
    /// Binds every parameter in the store as a leaf on this tape.
    pub fn bind(&mut self, store: &ParameterStore) -> Binding {
        let mut ids = BTreeMap::new();
        for (name, entry) in store.iter() {
            ids.insert(name.to_string(), self.leaf(entry.value.clone()));
        }
        Binding { ids }
    }

    /// Adds this tape's leaf gradients into the store's gradient slots.
    pub fn accumulate_gradients(&self, binding: &Binding, store: &mut ParameterStore) -> Result<()> {
        for (name, id) in binding.iter() {
            store.add_to_gradient(name, self.grad(id))?;
        }
        Ok(())
    }
}
