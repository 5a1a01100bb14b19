//! Define-by-run reverse-mode differentiation over matrix-valued nodes.
//!
//! A `Tape` is rebuilt for every loss evaluation. Forward values are
//! computed eagerly as nodes are pushed; `backward` seeds the scalar
//! output with 1 and visits nodes in strict reverse order.

use crate::error::{Result, SurjError};
use crate::numerics::chol::Cholesky;
use crate::numerics::matrix::DenseMatrix;

pub type NodeId = usize;

#[derive(Clone, Debug)]
enum Op {
    /// Differentiable leaf (parameter).
    Leaf,
    /// Non-differentiable constant.
    Const,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Hadamard(NodeId, NodeId),
    ScaleConst(NodeId, f64),
    AddConst(NodeId, #[allow(dead_code)] f64),
    Transpose(NodeId),
    /// X (n x d) + broadcast of a 1 x d row.
    AddRowBroadcast(NodeId, NodeId),
    /// X (n x d) * broadcast of a 1 x d row, elementwise.
    MulRowBroadcast(NodeId, NodeId),
    ConcatCols(NodeId, NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Softmax(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    FrobSq(NodeId),
    Trace(NodeId),
    RowSums(NodeId),
    ColSums(NodeId),
    SqRowSums(NodeId),
    /// Solve SPD(a) * x = b; the factor is cached for the backward pass.
    SpdSolve(NodeId, NodeId),
    LogDetSpd(NodeId),
    /// Per-row -log Cat(target | softmax(logits)).
    SoftmaxCrossEntropy(NodeId, DenseMatrix),
    /// Per-row summed Bernoulli negative log-likelihood on logits.
    SigmoidBce(NodeId, DenseMatrix),
}

struct Node {
    op: Op,
    value: DenseMatrix,
    grad: DenseMatrix,
    chol: Option<Cholesky>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, op: Op, value: DenseMatrix) -> NodeId {
        let grad = DenseMatrix::zeros(value.rows, value.cols);
        self.nodes.push(Node {
            op,
            value,
            grad,
            chol: None,
        });
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, value: DenseMatrix) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn constant(&mut self, value: DenseMatrix) -> NodeId {
        self.push(Op::Const, value)
    }

    pub fn value(&self, id: NodeId) -> &DenseMatrix {
        &self.nodes[id].value
    }

    pub fn grad(&self, id: NodeId) -> &DenseMatrix {
        &self.nodes[id].grad
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        let v = &self.nodes[id].value;
        assert_eq!((v.rows, v.cols), (1, 1), "node is not scalar");
        v.data[0]
    }

    // ---- graph-building ops ----

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.nodes[a]
            .value
            .matmul(&self.nodes[b].value)
            .expect("tape matmul shape mismatch");
        self.push(Op::MatMul(a, b), v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.nodes[a]
            .value
            .add(&self.nodes[b].value)
            .expect("tape add shape mismatch");
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.nodes[a]
            .value
            .sub(&self.nodes[b].value)
            .expect("tape sub shape mismatch");
        self.push(Op::Sub(a, b), v)
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        assert!(va.same_shape(vb), "tape hadamard shape mismatch");
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x * y).collect();
        let v = DenseMatrix::from_vec(va.rows, va.cols, data);
        self.push(Op::Hadamard(a, b), v)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.nodes[a].value.scale(s);
        self.push(Op::ScaleConst(a, s), v)
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> NodeId {
        let va = &self.nodes[a].value;
        let data = va.data.iter().map(|x| x + c).collect();
        let v = DenseMatrix::from_vec(va.rows, va.cols, data);
        self.push(Op::AddConst(a, c), v)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.transpose();
        self.push(Op::Transpose(a), v)
    }

    pub fn add_row_broadcast(&mut self, x: NodeId, b: NodeId) -> NodeId {
        let (vx, vb) = (&self.nodes[x].value, &self.nodes[b].value);
        assert_eq!(vb.rows, 1, "broadcast row must be 1 x d");
        assert_eq!(vx.cols, vb.cols, "broadcast width mismatch");
        let mut v = vx.clone();
        for i in 0..v.rows {
            for j in 0..v.cols {
                v.data[i * v.cols + j] += vb.data[j];
            }
        }
        self.push(Op::AddRowBroadcast(x, b), v)
    }

    pub fn mul_row_broadcast(&mut self, x: NodeId, r: NodeId) -> NodeId {
        let (vx, vr) = (&self.nodes[x].value, &self.nodes[r].value);
        assert_eq!(vr.rows, 1, "broadcast row must be 1 x d");
        assert_eq!(vx.cols, vr.cols, "broadcast width mismatch");
        let mut v = vx.clone();
        for i in 0..v.rows {
            for j in 0..v.cols {
                v.data[i * v.cols + j] *= vr.data[j];
            }
        }
        self.push(Op::MulRowBroadcast(x, r), v)
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!(va.rows, vb.rows, "concat row mismatch");
        let mut v = DenseMatrix::zeros(va.rows, va.cols + vb.cols);
        for i in 0..va.rows {
            for j in 0..va.cols {
                v.set(i, j, va.get(i, j));
            }
            for j in 0..vb.cols {
                v.set(i, va.cols + j, vb.get(i, j));
            }
        }
        self.push(Op::ConcatCols(a, b), v)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let va = &self.nodes[a].value;
        let data = va.data.iter().map(|x| x.tanh()).collect();
        let v = DenseMatrix::from_vec(va.rows, va.cols, data);
        self.push(Op::Tanh(a), v)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let va = &self.nodes[a].value;
        let data = va.data.iter().map(|x| sigmoid(*x)).collect();
        let v = DenseMatrix::from_vec(va.rows, va.cols, data);
        self.push(Op::Sigmoid(a), v)
    }

    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let va = &self.nodes[a].value;
        let mut v = va.clone();
        for i in 0..v.rows {
            let row = &mut v.data[i * v.cols..(i + 1) * v.cols];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                z += *x;
            }
            for x in row.iter_mut() {
                *x /= z;
            }
        }
        self.push(Op::Softmax(a), v)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let va = &self.nodes[a].value;
        let data = va.data.iter().map(|x| x.exp()).collect();
        let v = DenseMatrix::from_vec(va.rows, va.cols, data);
        self.push(Op::Exp(a), v)
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let va = &self.nodes[a].value;
        let data = va.data.iter().map(|x| x.ln()).collect();
        let v = DenseMatrix::from_vec(va.rows, va.cols, data);
        self.push(Op::Ln(a), v)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a].value.data.iter().sum();
        self.push(Op::Sum(a), DenseMatrix::scalar(s))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let va = &self.nodes[a].value;
        let s: f64 = va.data.iter().sum::<f64>() / va.data.len() as f64;
        self.push(Op::Mean(a), DenseMatrix::scalar(s))
    }

    pub fn frob_sq(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a].value.data.iter().map(|x| x * x).sum();
        self.push(Op::FrobSq(a), DenseMatrix::scalar(s))
    }

    pub fn trace(&mut self, a: NodeId) -> NodeId {
        let s = self.nodes[a].value.trace();
        self.push(Op::Trace(a), DenseMatrix::scalar(s))
    }

    pub fn row_sums(&mut self, a: NodeId) -> NodeId {
        let va = &self.nodes[a].value;
        let data = (0..va.rows).map(|i| va.row(i).iter().sum()).collect();
        let v = DenseMatrix::from_vec(va.rows, 1, data);
        self.push(Op::RowSums(a), v)
    }

    pub fn col_sums(&mut self, a: NodeId) -> NodeId {
        let va = &self.nodes[a].value;
        let data = (0..va.cols)
            .map(|j| (0..va.rows).map(|i| va.get(i, j)).sum())
            .collect();
        let v = DenseMatrix::from_vec(1, va.cols, data);
        self.push(Op::ColSums(a), v)
    }

    pub fn sq_row_sums(&mut self, a: NodeId) -> NodeId {
        let va = &self.nodes[a].value;
        let data = (0..va.rows)
            .map(|i| va.row(i).iter().map(|x| x * x).sum())
            .collect();
        let v = DenseMatrix::from_vec(va.rows, 1, data);
        self.push(Op::SqRowSums(a), v)
    }

    pub fn spd_solve(&mut self, m: NodeId, rhs: NodeId) -> Result<NodeId> {
        let chol = Cholesky::new(&self.nodes[m].value)?;
        let x = chol.solve(&self.nodes[rhs].value)?;
        let id = self.push(Op::SpdSolve(m, rhs), x);
        self.nodes[id].chol = Some(chol);
        Ok(id)
    }

    pub fn log_det_spd(&mut self, m: NodeId) -> Result<NodeId> {
        let chol = Cholesky::new(&self.nodes[m].value)?;
        let ld = chol.log_det();
        let id = self.push(Op::LogDetSpd(m), DenseMatrix::scalar(ld));
        self.nodes[id].chol = Some(chol);
        Ok(id)
    }

    /// Per-row categorical NLL of one-hot (or soft) targets given logits.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, targets: DenseMatrix) -> NodeId {
        let vl = &self.nodes[logits].value;
        assert!(vl.same_shape(&targets), "cross entropy shape mismatch");
        let mut out = DenseMatrix::zeros(vl.rows, 1);
        for i in 0..vl.rows {
            let row = vl.row(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            let dot: f64 = row.iter().zip(targets.row(i)).map(|(l, t)| l * t).sum();
            let tmass: f64 = targets.row(i).iter().sum();
            out.data[i] = tmass * lse - dot;
        }
        self.push(Op::SoftmaxCrossEntropy(logits, targets), out)
    }

    /// Per-row summed Bernoulli NLL of targets in [0,1] given logits.
    pub fn sigmoid_bce(&mut self, logits: NodeId, targets: DenseMatrix) -> NodeId {
        let vl = &self.nodes[logits].value;
        assert!(vl.same_shape(&targets), "bce shape mismatch");
        let mut out = DenseMatrix::zeros(vl.rows, 1);
        for i in 0..vl.rows {
            let mut s = 0.0;
            for (l, t) in vl.row(i).iter().zip(targets.row(i)) {
                // softplus(l) - t*l, numerically stable
                s += l.max(0.0) + (-l.abs()).exp().ln_1p() - t * l;
            }
            out.data[i] = s;
        }
        self.push(Op::SigmoidBce(logits, targets), out)
    }

    // ---- backward ----

    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let v = &self.nodes[loss].value;
        if (v.rows, v.cols) != (1, 1) {
            return Err(SurjError::Contract(format!(
                "backward requires a scalar loss, got {}x{}",
                v.rows, v.cols
            )));
        }
        for n in self.nodes.iter_mut() {
            n.grad.data.iter_mut().for_each(|g| *g = 0.0);
        }
        self.nodes[loss].grad.data[0] = 1.0;

        for id in (0..=loss).rev() {
            let op = self.nodes[id].op.clone();
            let g = self.nodes[id].grad.clone();
            if g.data.iter().all(|x| *x == 0.0) {
                continue;
            }
            match op {
                Op::Leaf | Op::Const => {}
                Op::MatMul(a, b) => {
                    let bt = self.nodes[b].value.transpose();
                    let ga = g.matmul(&bt).unwrap();
                    self.accum(a, &ga);
                    let at = self.nodes[a].value.transpose();
                    let gb = at.matmul(&g).unwrap();
                    self.accum(b, &gb);
                }
                Op::Add(a, b) => {
                    self.accum(a, &g);
                    self.accum(b, &g);
                }
                Op::Sub(a, b) => {
                    self.accum(a, &g);
                    let ng = g.scale(-1.0);
                    self.accum(b, &ng);
                }
                Op::Hadamard(a, b) => {
                    let vb = self.nodes[b].value.clone();
                    let ga = elem_mul(&g, &vb);
                    self.accum(a, &ga);
                    let va = self.nodes[a].value.clone();
                    let gb = elem_mul(&g, &va);
                    self.accum(b, &gb);
                }
                Op::ScaleConst(a, s) => {
                    let ga = g.scale(s);
                    self.accum(a, &ga);
                }
                Op::AddConst(a, _) => self.accum(a, &g),
                Op::Transpose(a) => {
                    let ga = g.transpose();
                    self.accum(a, &ga);
                }
                Op::AddRowBroadcast(x, b) => {
                    self.accum(x, &g);
                    let mut gb = DenseMatrix::zeros(1, g.cols);
                    for i in 0..g.rows {
                        for j in 0..g.cols {
                            gb.data[j] += g.get(i, j);
                        }
                    }
                    self.accum(b, &gb);
                }
                Op::MulRowBroadcast(x, r) => {
                    let vr = self.nodes[r].value.clone();
                    let vx = self.nodes[x].value.clone();
                    let mut gx = g.clone();
                    let mut gr = DenseMatrix::zeros(1, g.cols);
                    for i in 0..g.rows {
                        for j in 0..g.cols {
                            gx.data[i * g.cols + j] *= vr.data[j];
                            gr.data[j] += g.get(i, j) * vx.get(i, j);
                        }
                    }
                    self.accum(x, &gx);
                    self.accum(r, &gr);
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.nodes[a].value.cols;
                    let cb = self.nodes[b].value.cols;
                    let mut ga = DenseMatrix::zeros(g.rows, ca);
                    let mut gb = DenseMatrix::zeros(g.rows, cb);
                    for i in 0..g.rows {
                        for j in 0..ca {
                            ga.set(i, j, g.get(i, j));
                        }
                        for j in 0..cb {
                            gb.set(i, j, g.get(i, ca + j));
                        }
                    }
                    self.accum(a, &ga);
                    self.accum(b, &gb);
                }
                Op::Tanh(a) => {
                    let y = self.nodes[id].value.clone();
                    let mut ga = g.clone();
                    for (gi, yi) in ga.data.iter_mut().zip(&y.data) {
                        *gi *= 1.0 - yi * yi;
                    }
                    self.accum(a, &ga);
                }
                Op::Sigmoid(a) => {
                    let y = self.nodes[id].value.clone();
                    let mut ga = g.clone();
                    for (gi, yi) in ga.data.iter_mut().zip(&y.data) {
                        *gi *= yi * (1.0 - yi);
                    }
                    self.accum(a, &ga);
                }
                Op::Softmax(a) => {
                    let p = self.nodes[id].value.clone();
                    let mut ga = DenseMatrix::zeros(g.rows, g.cols);
                    for i in 0..g.rows {
                        let dot: f64 = (0..g.cols).map(|j| g.get(i, j) * p.get(i, j)).sum();
                        for j in 0..g.cols {
                            ga.set(i, j, p.get(i, j) * (g.get(i, j) - dot));
                        }
                    }
                    self.accum(a, &ga);
                }
                Op::Exp(a) => {
                    let y = self.nodes[id].value.clone();
                    let ga = elem_mul(&g, &y);
                    self.accum(a, &ga);
                }
                Op::Ln(a) => {
                    let x = self.nodes[a].value.clone();
                    let mut ga = g.clone();
                    for (gi, xi) in ga.data.iter_mut().zip(&x.data) {
                        *gi /= xi;
                    }
                    self.accum(a, &ga);
                }
                Op::Sum(a) => {
                    let va = &self.nodes[a].value;
                    let ga = DenseMatrix::from_vec(
                        va.rows,
                        va.cols,
                        vec![g.data[0]; va.data.len()],
                    );
                    self.accum(a, &ga);
                }
                Op::Mean(a) => {
                    let va = &self.nodes[a].value;
                    let n = va.data.len() as f64;
                    let ga =
                        DenseMatrix::from_vec(va.rows, va.cols, vec![g.data[0] / n; va.data.len()]);
                    self.accum(a, &ga);
                }
                Op::FrobSq(a) => {
                    let ga = self.nodes[a].value.scale(2.0 * g.data[0]);
                    self.accum(a, &ga);
                }
                Op::Trace(a) => {
                    let va = &self.nodes[a].value;
                    let mut ga = DenseMatrix::zeros(va.rows, va.cols);
                    let n = va.rows.min(va.cols);
                    for i in 0..n {
                        ga.set(i, i, g.data[0]);
                    }
                    self.accum(a, &ga);
                }
                Op::RowSums(a) => {
                    let va = &self.nodes[a].value;
                    let mut ga = DenseMatrix::zeros(va.rows, va.cols);
                    for i in 0..va.rows {
                        for j in 0..va.cols {
                            ga.set(i, j, g.data[i]);
                        }
                    }
                    self.accum(a, &ga);
                }
                Op::ColSums(a) => {
                    let va = &self.nodes[a].value;
                    let mut ga = DenseMatrix::zeros(va.rows, va.cols);
                    for i in 0..va.rows {
                        for j in 0..va.cols {
                            ga.set(i, j, g.data[j]);
                        }
                    }
                    self.accum(a, &ga);
                }
                Op::SqRowSums(a) => {
                    let va = self.nodes[a].value.clone();
                    let mut ga = va.clone();
                    for i in 0..va.rows {
                        for j in 0..va.cols {
                            ga.set(i, j, 2.0 * g.data[i] * va.get(i, j));
                        }
                    }
                    self.accum(a, &ga);
                }
                Op::SpdSolve(m, rhs) => {
                    let chol = self.nodes[id].chol.as_ref().unwrap().clone();
                    let x = self.nodes[id].value.clone();
                    let g_rhs = chol.solve(&g).unwrap();
                    let gm = g_rhs.matmul(&x.transpose()).unwrap().scale(-1.0);
                    self.accum(m, &gm);
                    self.accum(rhs, &g_rhs);
                }
                Op::LogDetSpd(m) => {
                    let chol = self.nodes[id].chol.as_ref().unwrap().clone();
                    let n = chol.dim();
                    let inv = chol.solve(&DenseMatrix::identity(n)).unwrap();
                    let gm = inv.scale(g.data[0]);
                    self.accum(m, &gm);
                }
                Op::SoftmaxCrossEntropy(logits, targets) => {
                    let vl = self.nodes[logits].value.clone();
                    let mut gl = DenseMatrix::zeros(vl.rows, vl.cols);
                    for i in 0..vl.rows {
                        let row = vl.row(i);
                        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let exps: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
                        let z: f64 = exps.iter().sum();
                        let tmass: f64 = targets.row(i).iter().sum();
                        for j in 0..vl.cols {
                            gl.set(
                                i,
                                j,
                                g.data[i] * (tmass * exps[j] / z - targets.get(i, j)),
                            );
                        }
                    }
                    self.accum(logits, &gl);
                }
                Op::SigmoidBce(logits, targets) => {
                    let vl = self.nodes[logits].value.clone();
                    let mut gl = DenseMatrix::zeros(vl.rows, vl.cols);
                    for i in 0..vl.rows {
                        for j in 0..vl.cols {
                            gl.set(
                                i,
                                j,
                                g.data[i] * (sigmoid(vl.get(i, j)) - targets.get(i, j)),
                            );
                        }
                    }
                    self.accum(logits, &gl);
                }
            }
        }
        Ok(())
    }

    fn accum(&mut self, id: NodeId, g: &DenseMatrix) {
        let grad = &mut self.nodes[id].grad;
        debug_assert!(grad.same_shape(g));
        for (a, b) in grad.data.iter_mut().zip(&g.data) {
            *a += b;
        }
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

fn elem_mul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
    DenseMatrix::from_vec(a.rows, a.cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grad_of_squared_norm() {
        // f(x) = ||x||^2  ->  grad 2x
        let mut t = Tape::new();
        let x = t.leaf(DenseMatrix::col_vec(&[1.0, -2.0, 3.0]));
        let loss = t.frob_sq(x);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).data, vec![2.0, -4.0, 6.0]);
    }

    #[test]
    fn grad_of_trace_is_identity() {
        let mut t = Tape::new();
        let w = t.leaf(DenseMatrix::from_rows(&[vec![1.0, 5.0], vec![2.0, 7.0]]));
        let loss = t.trace(w);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(w), &DenseMatrix::identity(2));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(DenseMatrix::col_vec(&[1.0, 2.0]));
        assert!(t.backward(x).is_err());
    }

    #[test]
    fn adjoint_seed_is_one() {
        let mut t = Tape::new();
        let x = t.leaf(DenseMatrix::scalar(3.0));
        let y = t.scale(x, 1.0);
        t.backward(y).unwrap();
        assert_eq!(t.grad(y).data[0], 1.0);
        assert_eq!(t.grad(x).data[0], 1.0);
    }
}
