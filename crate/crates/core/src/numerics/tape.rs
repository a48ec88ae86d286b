//! Reverse-mode gradient tape over the small op set the tiny LM needs.
//!
//! Nodes are appended in execution order; `backward` walks them in reverse and
//! accumulates adjoints. A tape is owned by a single forward/backward pass.

use super::tensor::{self, Tensor};
use crate::error::{Result, XtfError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    MatMulBt(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Gelu(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    CausalSoftmax(NodeId),
    SliceCols {
        src: NodeId,
        start: usize,
    },
    ConcatCols(Vec<NodeId>),
    Gather {
        table: NodeId,
        ids: Vec<usize>,
    },
    MaskedNll {
        logits: NodeId,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
    },
    Sum(NodeId),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints for every node of a tape after `backward`.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient w.r.t. `id`; zeros when the node did not influence the loss.
    pub fn get(&self, id: NodeId) -> Tensor {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[id.0]),
        }
    }

    pub fn take(&mut self, id: NodeId) -> Tensor {
        match self.grads[id.0].take() {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[id.0]),
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn check_rank2(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        s => Err(XtfError::Dimension(format!("{what}: expected rank 2, got {s:?}"))),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::matmul_bt(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMulBt(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(XtfError::Dimension(format!(
                "add {:?} vs {:?}",
                x.shape(),
                y.shape()
            )));
        }
        let mut v = x.clone();
        v.add_assign(y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(XtfError::Dimension(format!(
                "mul {:?} vs {:?}",
                x.shape(),
                y.shape()
            )));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let v = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// Adds a length-n vector to every row of an m×n matrix.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (_, n) = check_rank2(self.value(a), "add_row")?;
        if self.value(bias).len() != n {
            return Err(XtfError::Dimension(format!(
                "bias length {} vs {n} columns",
                self.value(bias).len()
            )));
        }
        let mut v = self.value(a).clone();
        let b = self.value(bias).data().to_vec();
        for r in v.data_mut().chunks_mut(n) {
            for (x, bb) in r.iter_mut().zip(&b) {
                *x += bb;
            }
        }
        Ok(self.push(v, Op::AddRow(a, bias)))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let mut v = self.value(a).clone();
        v.scale_in_place(s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let v = Tensor::new(x.shape().to_vec(), x.data().iter().map(|&t| gelu(t)).collect())
            .expect("same shape");
        self.push(v, Op::Gelu(a))
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId> {
        let (m, n) = check_rank2(self.value(x), "layer_norm")?;
        if self.value(gain).len() != n || self.value(bias).len() != n {
            return Err(XtfError::Dimension("layer_norm gain/bias length".into()));
        }
        let g = self.value(gain).data().to_vec();
        let b = self.value(bias).data().to_vec();
        let xs = self.value(x).data();
        let mut xhat = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xs[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd[i] = r;
            for j in 0..n {
                let h = (row[j] - mean) * r;
                xhat[i * n + j] = h;
                out[i * n + j] = h * g[j] + b[j];
            }
        }
        let v = Tensor::new(vec![m, n], out)?;
        Ok(self.push(
            v,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        ))
    }

    /// Row softmax of a square score matrix with entries above the diagonal
    /// forced to exactly zero.
    pub fn causal_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = check_rank2(self.value(a), "causal_softmax")?;
        if m != n {
            return Err(XtfError::Dimension(format!("causal_softmax needs square, got {m}x{n}")));
        }
        let x = self.value(a);
        x.check_finite("attention scores")?;
        let mut out = vec![0.0; m * n];
        for q in 0..m {
            let p = tensor::softmax_slice(&x.row(q)[..=q]);
            out[q * n..q * n + q + 1].copy_from_slice(&p);
        }
        let v = Tensor::new(vec![m, n], out)?;
        Ok(self.push(v, Op::CausalSoftmax(a)))
    }

    pub fn slice_cols(&mut self, src: NodeId, start: usize, width: usize) -> Result<NodeId> {
        let (m, n) = check_rank2(self.value(src), "slice_cols")?;
        if start + width > n {
            return Err(XtfError::Dimension(format!(
                "slice {start}..{} of {n} columns",
                start + width
            )));
        }
        let x = self.value(src);
        let mut out = Vec::with_capacity(m * width);
        for i in 0..m {
            out.extend_from_slice(&x.row(i)[start..start + width]);
        }
        let v = Tensor::new(vec![m, width], out)?;
        Ok(self.push(v, Op::SliceCols { src, start }))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let m = self.value(parts[0]).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = check_rank2(self.value(p), "concat_cols")?;
            if pm != m {
                return Err(XtfError::Dimension("concat_cols row mismatch".into()));
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let v = Tensor::new(vec![m, total], out)?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    /// Selects rows of `table` by index.
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let (v_rows, n) = check_rank2(self.value(table), "gather")?;
        let t = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * n);
        for &id in ids {
            if id >= v_rows {
                return Err(XtfError::Input(format!("row {id} out of {v_rows}")));
            }
            out.extend_from_slice(t.row(id));
        }
        let v = Tensor::new(vec![ids.len(), n], out)?;
        Ok(self.push(
            v,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Sum over rows `i` with `targets[i] = Some(t)` of `-log softmax(logits[i])[t]`.
    /// Rows with `None` contribute neither loss nor gradient.
    pub fn masked_nll(&mut self, logits: NodeId, targets: &[Option<usize>]) -> Result<NodeId> {
        let (m, n) = check_rank2(self.value(logits), "masked_nll")?;
        if targets.len() != m {
            return Err(XtfError::Contract(format!(
                "{} targets for {m} logit rows",
                targets.len()
            )));
        }
        let x = self.value(logits);
        x.check_finite("logits")?;
        let mut probs = vec![0.0; m * n];
        let mut loss = 0.0;
        for (i, t) in targets.iter().enumerate() {
            if let Some(t) = *t {
                if t >= n {
                    return Err(XtfError::Input(format!("target {t} out of vocab {n}")));
                }
                let ls = tensor::log_softmax_slice(x.row(i));
                loss -= ls[t];
                for (j, l) in ls.iter().enumerate() {
                    probs[i * n + j] = l.exp();
                }
            }
        }
        Ok(self.push(
            Tensor::scalar(loss),
            Op::MaskedNll {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(XtfError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            // Leaf adjoints stay in place for callers to read.
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let ga = tensor::matmul_bt(&g, self.value(*b))?;
                    let gb = tensor::matmul_at(self.value(*a), &g)?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMulBt(a, b) => {
                    let ga = tensor::matmul(&g, self.value(*b))?;
                    let gb = tensor::matmul_at(&g, self.value(*a))?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Mul(a, b) => {
                    let ga = elementwise(&g, self.value(*b));
                    let gb = elementwise(&g, self.value(*a));
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRow(a, bias) => {
                    let n = g.cols();
                    let mut gb = vec![0.0; n];
                    for r in g.data().chunks(n) {
                        for (acc, v) in gb.iter_mut().zip(r) {
                            *acc += v;
                        }
                    }
                    let shape = self.value(*bias).shape().to_vec();
                    accumulate(&mut grads, *bias, Tensor::new(shape, gb)?);
                    accumulate(&mut grads, *a, g);
                }
                Op::Scale(a, s) => {
                    let mut ga = g;
                    ga.scale_in_place(*s);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let data = g
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(gv, xv)| gv * gelu_grad(*xv))
                        .collect();
                    accumulate(&mut grads, *a, Tensor::new(x.shape().to_vec(), data)?);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let (m, n) = (g.rows(), g.cols());
                    let gv = self.value(*gain).data();
                    let mut dg = vec![0.0; n];
                    let mut db = vec![0.0; n];
                    let mut dx = vec![0.0; m * n];
                    let mut dxhat = vec![0.0; n];
                    for i in 0..m {
                        let gr = g.row(i);
                        let hr = &xhat[i * n..(i + 1) * n];
                        let mut mean_d = 0.0;
                        let mut mean_dh = 0.0;
                        for j in 0..n {
                            dg[j] += gr[j] * hr[j];
                            db[j] += gr[j];
                            dxhat[j] = gr[j] * gv[j];
                            mean_d += dxhat[j];
                            mean_dh += dxhat[j] * hr[j];
                        }
                        mean_d /= n as f64;
                        mean_dh /= n as f64;
                        for j in 0..n {
                            dx[i * n + j] = rstd[i] * (dxhat[j] - mean_d - hr[j] * mean_dh);
                        }
                    }
                    let gshape = self.value(*gain).shape().to_vec();
                    let bshape = self.value(*bias).shape().to_vec();
                    accumulate(&mut grads, *gain, Tensor::new(gshape, dg)?);
                    accumulate(&mut grads, *bias, Tensor::new(bshape, db)?);
                    accumulate(&mut grads, *x, Tensor::new(vec![m, n], dx)?);
                }
                Op::CausalSoftmax(a) => {
                    let y = &node.value;
                    let n = y.cols();
                    let mut dx = vec![0.0; y.len()];
                    for q in 0..y.rows() {
                        let yr = &y.row(q)[..=q];
                        let gr = &g.row(q)[..=q];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for p in 0..=q {
                            dx[q * n + p] = yr[p] * (gr[p] - dot);
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::new(y.shape().to_vec(), dx)?);
                }
                Op::SliceCols { src, start } => {
                    let s = self.value(*src);
                    let (m, n) = (s.rows(), s.cols());
                    let w = g.cols();
                    let mut gs = Tensor::zeros(&[m, n]);
                    for i in 0..m {
                        gs.row_mut(i)[*start..*start + w].copy_from_slice(g.row(i));
                    }
                    accumulate(&mut grads, *src, gs);
                }
                Op::ConcatCols(parts) => {
                    let m = g.rows();
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let mut gp = Vec::with_capacity(m * w);
                        for i in 0..m {
                            gp.extend_from_slice(&g.row(i)[off..off + w]);
                        }
                        accumulate(&mut grads, p, Tensor::new(vec![m, w], gp)?);
                        off += w;
                    }
                }
                Op::Gather { table, ids } => {
                    let t = self.value(*table);
                    let mut gt = Tensor::zeros(t.shape());
                    for (i, &id) in ids.iter().enumerate() {
                        for (acc, v) in gt.row_mut(id).iter_mut().zip(g.row(i)) {
                            *acc += v;
                        }
                    }
                    accumulate(&mut grads, *table, gt);
                }
                Op::MaskedNll {
                    logits,
                    targets,
                    probs,
                } => {
                    let upstream = g.data()[0];
                    let x = self.value(*logits);
                    let n = x.cols();
                    let mut gl = Tensor::zeros(x.shape());
                    for (i, t) in targets.iter().enumerate() {
                        if let Some(t) = *t {
                            let row = gl.row_mut(i);
                            row.copy_from_slice(&probs[i * n..(i + 1) * n]);
                            row[t] -= 1.0;
                            for v in row.iter_mut() {
                                *v *= upstream;
                            }
                        }
                    }
                    accumulate(&mut grads, *logits, gl);
                }
                Op::Sum(a) => {
                    let s = self.value(*a).shape().to_vec();
                    accumulate(&mut grads, *a, Tensor::full(&s, g.data()[0]));
                }
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }
}

fn elementwise(a: &Tensor, b: &Tensor) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 3], vec![1.0, -2.0, 0.5]).unwrap());
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap());
        let c = tape.leaf(Tensor::scalar(5.0));
        let g = tape.backward(c).unwrap();
        assert_eq!(g.get(x).data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2, 2]));
        assert!(matches!(tape.backward(x), Err(XtfError::Contract(_))));
    }

    #[test]
    fn causal_softmax_masks_future() {
        let mut tape = Tape::new();
        let s = tape.leaf(Tensor::full(&[3, 3], 0.7));
        let a = tape.causal_softmax(s).unwrap();
        let v = tape.value(a);
        assert_eq!(v.row(0), &[1.0, 0.0, 0.0]);
        assert_eq!(v.row(1), &[0.5, 0.5, 0.0]);
        assert!((v.row(2).iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn masked_nll_all_none_is_zero() {
        let mut tape = Tape::new();
        let l = tape.leaf(Tensor::full(&[2, 4], 0.3));
        let loss = tape.masked_nll(l, &[None, None]).unwrap();
        assert_eq!(tape.value(loss).data()[0], 0.0);
        let g = tape.backward(loss).unwrap();
        assert!(g.get(l).data().iter().all(|&v| v == 0.0));
    }
}
