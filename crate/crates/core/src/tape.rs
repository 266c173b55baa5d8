//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Forward ops append nodes with their computed values; `backward` walks the
//! tape in reverse and accumulates vector-Jacobian products. Parameters enter
//! the tape as leaves tagged with their `ParamId`; gradients flow back into a
//! `ParamStore` through `Gradients::accumulate_into`, filtered by a `GroupSet`
//! so each loss component only updates its gated parameter groups.

use crate::error::{Error, Result};
use crate::nn::{GroupSet, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf(Option<ParamId>),
    MatMul(NodeId, NodeId),
    AddRowBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Offset(NodeId),
    Abs(NodeId),
    Square(NodeId),
    Exp(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    ConcatCols(Vec<NodeId>),
    SliceCols(NodeId, usize, usize),
    EmbedMean(NodeId, Vec<Vec<u32>>),
    Softmax(NodeId),
    NllLoss(NodeId, Vec<usize>),
    MseLoss(NodeId, NodeId),
    SumAll(NodeId),
    WeightedSum(Vec<(NodeId, f64)>),
}

struct Node {
    value: Tensor,
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value.scalar_value()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant leaf; receives no parameter gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf(None))
    }

    /// Parameter leaf; value is snapshotted from the store.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        let value = store.get(id).value.clone();
        self.push(value, Op::Leaf(Some(id)))
    }

    /// x[n×k] · w[k×m] -> [n×m]
    pub fn matmul(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        let (n, k) = self.value(x).dims2();
        let (k2, m) = self.value(w).dims2();
        if k != k2 {
            return Err(Error::ShapeMismatch {
                expected: self.value(x).shape.clone(),
                got: self.value(w).shape.clone(),
                context: "matmul inner dimensions".into(),
            });
        }
        let xd = &self.value(x).data;
        let wd = &self.value(w).data;
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for p in 0..k {
                let a = xd[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let wrow = &wd[p * m..(p + 1) * m];
                let orow = &mut out[i * m..(i + 1) * m];
                for j in 0..m {
                    orow[j] += a * wrow[j];
                }
            }
        }
        let t = Tensor::matrix(n, m, out)?;
        Ok(self.push(t, Op::MatMul(x, w)))
    }

    /// y[n×m] + b[m], bias broadcast over rows.
    pub fn add_row_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (n, m) = self.value(x).dims2();
        if self.value(b).numel() != m {
            return Err(Error::ShapeMismatch {
                expected: vec![m],
                got: self.value(b).shape.clone(),
                context: "row bias width".into(),
            });
        }
        let mut out = self.value(x).data.clone();
        let bd = &self.value(b).data;
        for i in 0..n {
            for j in 0..m {
                out[i * m + j] += bd[j];
            }
        }
        let t = Tensor::matrix(n, m, out)?;
        Ok(self.push(t, Op::AddRowBias(x, b)))
    }

    fn binary_elementwise(
        &mut self,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        self.value(a).same_shape(self.value(b), "elementwise op")?;
        let data: Vec<f64> = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| f(*x, *y))
            .collect();
        let t = Tensor {
            shape: self.value(a).shape.clone(),
            data,
        };
        Ok(self.push(t, op))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, x: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let data: Vec<f64> = self.value(x).data.iter().map(|v| f(*v)).collect();
        let t = Tensor {
            shape: self.value(x).shape.clone(),
            data,
        };
        self.push(t, op)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn offset(&mut self, x: NodeId, c: f64) -> NodeId {
        self.unary(x, |v| v + c, Op::Offset(x))
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |v| v.abs(), Op::Abs(x))
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |v| v.exp(), Op::Exp(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |v| v.tanh(), Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |v| 1.0 / (1.0 + (-v).exp()), Op::Sigmoid(x))
    }

    /// Concatenate along columns; all inputs must share the row count.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let n = self.value(parts[0]).dims2().0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pn, pm) = self.value(p).dims2();
            if pn != n {
                return Err(Error::ShapeMismatch {
                    expected: vec![n],
                    got: vec![pn],
                    context: "concat_cols row count".into(),
                });
            }
            widths.push(pm);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; n * total];
        for i in 0..n {
            let mut off = 0;
            for (&p, &w) in parts.iter().zip(&widths) {
                out[i * total + off..i * total + off + w].copy_from_slice(self.value(p).row(i));
                off += w;
            }
        }
        let t = Tensor::matrix(n, total, out)?;
        Ok(self.push(t, Op::ConcatCols(parts.to_vec())))
    }

    /// Columns [start, end) of a matrix.
    pub fn slice_cols(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let (n, m) = self.value(x).dims2();
        if end > m || start >= end {
            return Err(Error::InvalidInput(format!(
                "slice_cols [{start}, {end}) out of range for width {m}"
            )));
        }
        let w = end - start;
        let mut out = vec![0.0; n * w];
        for i in 0..n {
            out[i * w..(i + 1) * w].copy_from_slice(&self.value(x).row(i)[start..end]);
        }
        let t = Tensor::matrix(n, w, out)?;
        Ok(self.push(t, Op::SliceCols(x, start, end)))
    }

    /// Mean of embedding-table rows per example: table[V×d], one id list per
    /// example -> [n×d]. Repeated ids count with multiplicity.
    pub fn embed_mean(&mut self, table: NodeId, ids: &[Vec<u32>]) -> Result<NodeId> {
        let (vocab, d) = self.value(table).dims2();
        let n = ids.len();
        let mut out = vec![0.0; n * d];
        for (i, toks) in ids.iter().enumerate() {
            if toks.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "empty token sequence at example {i}"
                )));
            }
            for &t in toks {
                let t = t as usize;
                if t >= vocab {
                    return Err(Error::InvalidInput(format!(
                        "token id {t} out of vocabulary size {vocab}"
                    )));
                }
                let row = self.value(table).row(t).to_vec();
                for j in 0..d {
                    out[i * d + j] += row[j];
                }
            }
            let inv = 1.0 / toks.len() as f64;
            for j in 0..d {
                out[i * d + j] *= inv;
            }
        }
        let t = Tensor::matrix(n, d, out)?;
        Ok(self.push(t, Op::EmbedMean(table, ids.to_vec())))
    }

    /// Row-wise softmax with max-subtraction.
    pub fn softmax(&mut self, logits: NodeId) -> NodeId {
        let (n, c) = self.value(logits).dims2();
        let mut out = vec![0.0; n * c];
        for i in 0..n {
            let row = self.value(logits).row(i);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..c {
                let e = (row[j] - mx).exp();
                out[i * c + j] = e;
                sum += e;
            }
            for j in 0..c {
                out[i * c + j] /= sum;
            }
        }
        let t = Tensor::matrix(n, c, out).unwrap();
        self.push(t, Op::Softmax(logits))
    }

    /// Mean negative log of the probability at the gold label.
    pub fn nll_loss(&mut self, probs: NodeId, labels: &[usize]) -> Result<NodeId> {
        let (n, c) = self.value(probs).dims2();
        if labels.len() != n {
            return Err(Error::InvalidInput(format!(
                "{} labels for {n} rows",
                labels.len()
            )));
        }
        let mut acc = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            if y >= c {
                return Err(Error::InvalidInput(format!(
                    "label {y} out of range for {c} classes"
                )));
            }
            acc -= self.value(probs).row(i)[y].ln();
        }
        let t = Tensor::scalar(acc / n as f64);
        Ok(self.push(t, Op::NllLoss(probs, labels.to_vec())))
    }

    /// softmax followed by mean NLL; returns (probs, loss).
    pub fn softmax_cross_entropy(
        &mut self,
        logits: NodeId,
        labels: &[usize],
    ) -> Result<(NodeId, NodeId)> {
        let probs = self.softmax(logits);
        let loss = self.nll_loss(probs, labels)?;
        Ok((probs, loss))
    }

    /// Mean squared error over all elements -> scalar.
    pub fn mse_loss(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.value(a).same_shape(self.value(b), "mse_loss")?;
        let v = crate::tensor::mse(self.value(a), self.value(b))?;
        Ok(self.push(Tensor::scalar(v), Op::MseLoss(a, b)))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).data.iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(x))
    }

    /// Weighted sum of scalar nodes -> scalar.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, f64)]) -> NodeId {
        let s: f64 = terms.iter().map(|(id, c)| self.scalar(*id) * c).sum();
        self.push(Tensor::scalar(s), Op::WeightedSum(terms.to_vec()))
    }

    /// Reverse pass from a scalar loss node. Returns gradients for every
    /// tape node; parameter gradients are pulled out via `accumulate_into`.
    pub fn backward(&self, loss: NodeId) -> Gradients {
        let mut grads: Vec<Vec<f64>> = self.nodes.iter().map(|n| vec![0.0; n.value.numel()]).collect();
        debug_assert_eq!(self.nodes[loss.0].value.numel(), 1);
        grads[loss.0][0] = 1.0;

        for idx in (0..=loss.0).rev() {
            if grads[idx].iter().all(|g| *g == 0.0) {
                continue;
            }
            let g_out = grads[idx].clone();
            match &self.nodes[idx].op {
                Op::Leaf(_) => {}
                Op::MatMul(x, w) => {
                    let (n, k) = self.value(*x).dims2();
                    let m = self.value(*w).dims2().1;
                    let xd = &self.value(*x).data;
                    let wd = &self.value(*w).data;
                    {
                        let gx = &mut grads[x.0];
                        for i in 0..n {
                            for p in 0..k {
                                let mut acc = 0.0;
                                for j in 0..m {
                                    acc += g_out[i * m + j] * wd[p * m + j];
                                }
                                gx[i * k + p] += acc;
                            }
                        }
                    }
                    {
                        let gw = &mut grads[w.0];
                        for p in 0..k {
                            for i in 0..n {
                                let a = xd[i * k + p];
                                if a == 0.0 {
                                    continue;
                                }
                                for j in 0..m {
                                    gw[p * m + j] += a * g_out[i * m + j];
                                }
                            }
                        }
                    }
                }
                Op::AddRowBias(x, b) => {
                    let (n, m) = self.value(*x).dims2();
                    for (gi, go) in grads[x.0].iter_mut().zip(&g_out) {
                        *gi += go;
                    }
                    let gb = &mut grads[b.0];
                    for i in 0..n {
                        for j in 0..m {
                            gb[j] += g_out[i * m + j];
                        }
                    }
                }
                Op::Add(a, b) => {
                    for (gi, go) in grads[a.0].iter_mut().zip(&g_out) {
                        *gi += go;
                    }
                    for (gi, go) in grads[b.0].iter_mut().zip(&g_out) {
                        *gi += go;
                    }
                }
                Op::Sub(a, b) => {
                    for (gi, go) in grads[a.0].iter_mut().zip(&g_out) {
                        *gi += go;
                    }
                    for (gi, go) in grads[b.0].iter_mut().zip(&g_out) {
                        *gi -= go;
                    }
                }
                Op::Mul(a, b) => {
                    let ad = &self.value(*a).data;
                    let bd = &self.value(*b).data;
                    for (i, go) in g_out.iter().enumerate() {
                        grads[a.0][i] += go * bd[i];
                    }
                    for (i, go) in g_out.iter().enumerate() {
                        grads[b.0][i] += go * ad[i];
                    }
                }
                Op::Scale(x, c) => {
                    for (gi, go) in grads[x.0].iter_mut().zip(&g_out) {
                        *gi += go * c;
                    }
                }
                Op::Offset(x) => {
                    for (gi, go) in grads[x.0].iter_mut().zip(&g_out) {
                        *gi += go;
                    }
                }
                Op::Abs(x) => {
                    let xd = &self.value(*x).data;
                    for (i, go) in g_out.iter().enumerate() {
                        grads[x.0][i] += go * xd[i].signum() * (xd[i] != 0.0) as u8 as f64;
                    }
                }
                Op::Square(x) => {
                    let xd = &self.value(*x).data;
                    for (i, go) in g_out.iter().enumerate() {
                        grads[x.0][i] += go * 2.0 * xd[i];
                    }
                }
                Op::Exp(x) => {
                    let yd = &self.nodes[idx].value.data;
                    for (i, go) in g_out.iter().enumerate() {
                        grads[x.0][i] += go * yd[i];
                    }
                }
                Op::Tanh(x) => {
                    let yd = &self.nodes[idx].value.data;
                    for (i, go) in g_out.iter().enumerate() {
                        grads[x.0][i] += go * (1.0 - yd[i] * yd[i]);
                    }
                }
                Op::Sigmoid(x) => {
                    let yd = &self.nodes[idx].value.data;
                    for (i, go) in g_out.iter().enumerate() {
                        grads[x.0][i] += go * yd[i] * (1.0 - yd[i]);
                    }
                }
                Op::ConcatCols(parts) => {
                    let n = self.nodes[idx].value.dims2().0;
                    let total = self.nodes[idx].value.dims2().1;
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).dims2().1;
                        let gp = &mut grads[p.0];
                        for i in 0..n {
                            for j in 0..w {
                                gp[i * w + j] += g_out[i * total + off + j];
                            }
                        }
                        off += w;
                    }
                }
                Op::SliceCols(x, start, end) => {
                    let (n, m) = self.value(*x).dims2();
                    let w = end - start;
                    let gx = &mut grads[x.0];
                    for i in 0..n {
                        for j in 0..w {
                            gx[i * m + start + j] += g_out[i * w + j];
                        }
                    }
                }
                Op::EmbedMean(table, ids) => {
                    let d = self.value(*table).dims2().1;
                    let gt = &mut grads[table.0];
                    for (i, toks) in ids.iter().enumerate() {
                        let inv = 1.0 / toks.len() as f64;
                        for &t in toks {
                            let t = t as usize;
                            for j in 0..d {
                                gt[t * d + j] += g_out[i * d + j] * inv;
                            }
                        }
                    }
                }
                Op::Softmax(x) => {
                    let (n, c) = self.value(*x).dims2();
                    let yd = &self.nodes[idx].value.data;
                    let gx = &mut grads[x.0];
                    for i in 0..n {
                        let y = &yd[i * c..(i + 1) * c];
                        let go = &g_out[i * c..(i + 1) * c];
                        let dot: f64 = y.iter().zip(go).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            gx[i * c + j] += y[j] * (go[j] - dot);
                        }
                    }
                }
                Op::NllLoss(probs, labels) => {
                    let c = self.value(*probs).dims2().1;
                    let n = labels.len() as f64;
                    let pd = &self.value(*probs).data;
                    let gp = &mut grads[probs.0];
                    for (i, &y) in labels.iter().enumerate() {
                        gp[i * c + y] -= g_out[0] / (n * pd[i * c + y]);
                    }
                }
                Op::MseLoss(a, b) => {
                    let ad = &self.value(*a).data;
                    let bd = &self.value(*b).data;
                    let n = ad.len() as f64;
                    for i in 0..ad.len() {
                        let d = 2.0 * (ad[i] - bd[i]) / n * g_out[0];
                        grads[a.0][i] += d;
                        grads[b.0][i] -= d;
                    }
                }
                Op::SumAll(x) => {
                    for gi in grads[x.0].iter_mut() {
                        *gi += g_out[0];
                    }
                }
                Op::WeightedSum(terms) => {
                    for (id, c) in terms {
                        grads[id.0][0] += g_out[0] * c;
                    }
                }
            }
        }
        Gradients { grads }
    }
}

/// Per-node gradients from one reverse pass.
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn grad(&self, id: NodeId) -> &[f64] {
        &self.grads[id.0]
    }

    /// Add `coef` times each parameter-leaf gradient into the store,
    /// restricted to parameters whose group is in `gate`.
    pub fn accumulate_into(&self, tape: &Tape, store: &mut ParamStore, gate: GroupSet, coef: f64) {
        for (idx, node) in tape.nodes.iter().enumerate() {
            if let Op::Leaf(Some(pid)) = node.op {
                let group = store.get(pid).group;
                if !gate.contains(group) {
                    continue;
                }
                let src = &self.grads[idx];
                let dst = &mut store.get_mut(pid).grad_data;
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += coef * s;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamGroup;

    #[test]
    fn scalar_chain_hand_derivative() {
        // y = (2x)^2 at x = 3 → dy/dx = 8x = 24
        let mut store = ParamStore::new();
        let x = store.add("x", ParamGroup::Encoder, Tensor::scalar(3.0));
        store.zero_grad();
        let mut tape = Tape::new();
        let xn = tape.param(&store, x);
        let two_x = tape.scale(xn, 2.0);
        let y = tape.square(two_x);
        assert_eq!(tape.scalar(y), 36.0);
        let grads = tape.backward(y);
        grads.accumulate_into(&tape, &mut store, GroupSet::all(), 1.0);
        assert_eq!(store.get(x).grad()[0], 24.0);
    }

    #[test]
    fn mse_of_x_with_itself_zero_grad() {
        let mut store = ParamStore::new();
        let x = store.add(
            "x",
            ParamGroup::Encoder,
            Tensor::from_vec(vec![1.0, -2.0, 0.5]),
        );
        store.zero_grad();
        let mut tape = Tape::new();
        let a = tape.param(&store, x);
        let b = tape.param(&store, x);
        let loss = tape.mse_loss(a, b).unwrap();
        assert_eq!(tape.scalar(loss), 0.0);
        let grads = tape.backward(loss);
        grads.accumulate_into(&tape, &mut store, GroupSet::all(), 1.0);
        assert!(store.get(x).grad().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn affine_identity_map() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let w = tape.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = tape.constant(Tensor::from_vec(vec![0.0, 0.0]));
        let y = tape.matmul(x, w).unwrap();
        let y = tape.add_row_bias(y, b).unwrap();
        assert_eq!(tape.value(y).data, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn affine_shape_mismatch_names_shapes() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        let w = tape.constant(Tensor::matrix(2, 2, vec![0.0; 4]).unwrap());
        let err = tape.matmul(x, w).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(3, 4, (0..12).map(|i| i as f64 * 0.7 - 3.0).collect()).unwrap());
        let p = tape.softmax(x);
        for i in 0..3 {
            let s: f64 = tape.value(p).row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_logits_cross_entropy_is_ln_c() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(2, 3, vec![0.5; 6]).unwrap());
        let (_, loss) = tape.softmax_cross_entropy(x, &[0, 2]).unwrap();
        assert!((tape.scalar(loss) - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_logits_drive_loss_to_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(1, 3, vec![40.0, 0.0, 0.0]).unwrap());
        let (_, loss) = tape.softmax_cross_entropy(x, &[0]).unwrap();
        assert!(tape.scalar(loss) < 1e-12);
    }

    #[test]
    fn cross_entropy_matches_log_sum_exp_hand_computation() {
        let logits = [1.3f64, -0.4, 2.1];
        let label = 1usize;
        let lse = logits.iter().map(|v| v.exp()).sum::<f64>().ln();
        let expected = lse - logits[label];
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(1, 3, logits.to_vec()).unwrap());
        let (_, loss) = tape.softmax_cross_entropy(x, &[label]).unwrap();
        assert!((tape.scalar(loss) - expected).abs() < 1e-12);
    }

    #[test]
    fn label_out_of_range_rejected() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(1, 3, vec![0.0; 3]).unwrap());
        assert!(tape.softmax_cross_entropy(x, &[3]).is_err());
    }

    #[test]
    fn embed_mean_of_single_token_is_that_row() {
        let mut tape = Tape::new();
        let table = tape.constant(Tensor::matrix(3, 2, vec![0.0, 0.0, 1.0, 2.0, 3.0, 4.0]).unwrap());
        let out = tape.embed_mean(table, &[vec![2]]).unwrap();
        assert_eq!(tape.value(out).data, vec![3.0, 4.0]);
    }

    #[test]
    fn embed_mean_rejects_empty_sequence() {
        let mut tape = Tape::new();
        let table = tape.constant(Tensor::matrix(3, 2, vec![0.0; 6]).unwrap());
        assert!(tape.embed_mean(table, &[vec![]]).is_err());
    }

    #[test]
    fn unreachable_parameter_keeps_zero_grad() {
        let mut store = ParamStore::new();
        let x = store.add("x", ParamGroup::Encoder, Tensor::scalar(1.0));
        let unused = store.add("u", ParamGroup::Encoder, Tensor::scalar(5.0));
        store.zero_grad();
        let mut tape = Tape::new();
        let xn = tape.param(&store, x);
        let _un = tape.param(&store, unused);
        let y = tape.square(xn);
        let grads = tape.backward(y);
        grads.accumulate_into(&tape, &mut store, GroupSet::all(), 1.0);
        assert_eq!(store.get(x).grad()[0], 2.0);
        assert_eq!(store.get(unused).grad()[0], 0.0);
    }

    #[test]
    fn backward_twice_accumulates() {
        let mut store = ParamStore::new();
        let x = store.add("x", ParamGroup::Encoder, Tensor::scalar(3.0));
        store.zero_grad();
        let mut tape = Tape::new();
        let xn = tape.param(&store, x);
        let y = tape.square(xn);
        let grads = tape.backward(y);
        grads.accumulate_into(&tape, &mut store, GroupSet::all(), 1.0);
        grads.accumulate_into(&tape, &mut store, GroupSet::all(), 1.0);
        assert_eq!(store.get(x).grad()[0], 12.0);
    }
}
