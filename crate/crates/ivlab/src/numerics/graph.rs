//! Wengert-tape reverse-mode differentiation.
//!
//! Ops evaluate eagerly as they are recorded; `backward` replays the tape in
//! reverse and accumulates parameter gradients into the [`ParamSet`].
//! Every reduction runs in a fixed left-to-right order, so results are
//! bit-deterministic for identical inputs.

use crate::error::{IvLabError, Result};
use crate::numerics::params::{ParamId, ParamSet};
use crate::numerics::tensor::{Precision, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    /// Leaf reading a parameter value. Backward writes into the param grad.
    Param(ParamId),
    /// Leaf with no gradient.
    Const,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    SliceCols(NodeId, usize, usize),
    SliceRows(NodeId, usize, usize),
    EmbedRows(NodeId, Vec<usize>),
    CausalSoftmaxRows(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
    },
    Gelu(NodeId),
    /// Adds `scale * vec` to the listed rows. The vector is a constant:
    /// gradients pass through to the input untouched.
    AddRowsConst {
        a: NodeId,
    },
    /// Replaces the listed rows with a constant vector. Gradient is zeroed
    /// at the replaced rows.
    ReplaceRowsConst {
        a: NodeId,
        rows: Vec<usize>,
    },
    Row(NodeId, usize),
    SumAll(NodeId),
    /// Mean over (row, target) pairs of -log softmax(logits[row])[target].
    MaskedNllMean {
        logits: NodeId,
        pairs: Vec<(usize, usize)>,
    },
    /// KL(teacher || softmax(student)) against a constant teacher
    /// distribution; gradient flows into the student logits only.
    KlConstTeacher {
        student: NodeId,
        teacher: Tensor,
    },
}

struct Node {
    op: Op,
    value: Tensor,
}

pub struct Graph {
    nodes: Vec<Node>,
    precision: Precision,
    nan_at: Option<String>,
}

impl Graph {
    pub fn new(precision: Precision) -> Self {
        Graph {
            nodes: Vec::new(),
            precision,
            nan_at: None,
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    fn push(&mut self, op: Op, mut value: Tensor, name: &str) -> NodeId {
        self.precision.round_slice(value.data_mut());
        if self.nan_at.is_none() && !value.is_finite() {
            self.nan_at = Some(name.to_string());
        }
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Value extraction for callers; reports any NaN produced anywhere in
    /// the recorded computation.
    pub fn try_value(&self, id: NodeId) -> Result<&Tensor> {
        if let Some(at) = &self.nan_at {
            return Err(IvLabError::NonFinite(format!("forward op {at}")));
        }
        Ok(&self.nodes[id.0].value)
    }

    pub fn scalar_value(&self, id: NodeId) -> Result<f64> {
        let v = self.try_value(id)?;
        if v.len() != 1 {
            return Err(IvLabError::ShapeMismatch(format!(
                "expected scalar, got shape {:?}",
                v.shape()
            )));
        }
        Ok(v.first())
    }

    // ── leaves ──────────────────────────────────────────────────────────

    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> NodeId {
        let value = params.get(id).value.clone();
        self.push(Op::Param(id), value, "param")
    }

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Const, t, "const")
    }

    // ── elementwise ─────────────────────────────────────────────────────

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.shape(), vb.shape(), "add shape mismatch");
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::from_vec(va.shape(), data).unwrap();
        self.push(Op::Add(a, b), t, "add")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.shape(), vb.shape(), "sub shape mismatch");
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x - y)
            .collect();
        let t = Tensor::from_vec(va.shape(), data).unwrap();
        self.push(Op::Sub(a, b), t, "sub")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.shape(), vb.shape(), "mul shape mismatch");
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::from_vec(va.shape(), data).unwrap();
        self.push(Op::Mul(a, b), t, "mul")
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let va = &self.nodes[a.0].value;
        let data = va.data().iter().map(|x| x * c).collect();
        let t = Tensor::from_vec(va.shape(), data).unwrap();
        self.push(Op::Scale(a, c), t, "scale")
    }

    // ── linear algebra ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (m, k) = (va.rows(), va.cols());
        let (k2, n) = (vb.rows(), vb.cols());
        assert_eq!(k, k2, "matmul inner dim mismatch: {k} vs {k2}");
        let mut out = vec![0.0; m * n];
        matmul_into(va.data(), vb.data(), &mut out, m, k, n);
        let t = Tensor::from_vec(&[m, n], out).unwrap();
        self.push(Op::MatMul(a, b), t, "matmul")
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let va = &self.nodes[a.0].value;
        let (m, n) = (va.rows(), va.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = va.data()[i * n + j];
            }
        }
        let t = Tensor::from_vec(&[n, m], out).unwrap();
        self.push(Op::Transpose(a), t, "transpose")
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let va = &self.nodes[a.0].value;
        let (m, n) = (va.rows(), va.cols());
        assert!(start + len <= n, "slice_cols out of range");
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&va.data()[i * n + start..i * n + start + len]);
        }
        let t = Tensor::from_vec(&[m, len], out).unwrap();
        self.push(Op::SliceCols(a, start, len), t, "slice_cols")
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let va = &self.nodes[a.0].value;
        let (m, n) = (va.rows(), va.cols());
        assert!(start + len <= m, "slice_rows out of range");
        let out = va.data()[start * n..(start + len) * n].to_vec();
        let t = Tensor::from_vec(&[len, n], out).unwrap();
        self.push(Op::SliceRows(a, start, len), t, "slice_rows")
    }

    /// Gather rows of a table (e.g. token or position embeddings).
    pub fn embed_rows(&mut self, table: NodeId, ids: &[usize]) -> NodeId {
        let vt = &self.nodes[table.0].value;
        let (v, d) = (vt.rows(), vt.cols());
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            assert!(id < v, "embed id out of range");
            out.extend_from_slice(vt.row(id));
        }
        let t = Tensor::from_vec(&[ids.len(), d], out).unwrap();
        self.push(Op::EmbedRows(table, ids.to_vec()), t, "embed_rows")
    }

    // ── nonlinearities ──────────────────────────────────────────────────

    /// Row-wise softmax over a square score matrix with a causal mask:
    /// row `t` is a distribution over columns `0..=t`, zero elsewhere.
    pub fn causal_softmax_rows(&mut self, a: NodeId) -> NodeId {
        let va = &self.nodes[a.0].value;
        let (m, n) = (va.rows(), va.cols());
        assert_eq!(m, n, "causal softmax expects square scores");
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &va.data()[i * n..i * n + i + 1];
            let probs = stable_softmax(row);
            out[i * n..i * n + i + 1].copy_from_slice(&probs);
        }
        let t = Tensor::from_vec(&[m, n], out).unwrap();
        self.push(Op::CausalSoftmaxRows(a), t, "causal_softmax")
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> NodeId {
        let vx = &self.nodes[x.0].value;
        let (m, n) = (vx.rows(), vx.cols());
        let g = &self.nodes[gain.0].value;
        let b = &self.nodes[bias.0].value;
        assert_eq!(g.len(), n, "layer_norm gain length");
        assert_eq!(b.len(), n, "layer_norm bias length");
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = vx.row(i);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let rstd = 1.0 / (var + eps).sqrt();
            for j in 0..n {
                out[i * n + j] = (row[j] - mean) * rstd * g.data()[j] + b.data()[j];
            }
        }
        let t = Tensor::from_vec(&[m, n], out).unwrap();
        self.push(Op::LayerNorm { x, gain, bias, eps }, t, "layer_norm")
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let va = &self.nodes[a.0].value;
        let data = va.data().iter().map(|&x| gelu_fwd(x)).collect();
        let t = Tensor::from_vec(va.shape(), data).unwrap();
        self.push(Op::Gelu(a), t, "gelu")
    }

    // ── interventions ───────────────────────────────────────────────────

    pub fn add_rows_const(&mut self, a: NodeId, rows: &[usize], vec: &Tensor, scale: f64) -> NodeId {
        let va = &self.nodes[a.0].value;
        let n = va.cols();
        assert_eq!(vec.len(), n, "add_rows_const vector length");
        let mut t = va.clone();
        for &r in rows {
            assert!(r < va.rows(), "add_rows_const row out of range");
            for (dst, src) in t.row_mut(r).iter_mut().zip(vec.data()) {
                *dst += scale * src;
            }
        }
        self.push(Op::AddRowsConst { a }, t, "add_rows_const")
    }

    pub fn replace_rows_const(&mut self, a: NodeId, rows: &[usize], vec: &Tensor) -> NodeId {
        let va = &self.nodes[a.0].value;
        let n = va.cols();
        assert_eq!(vec.len(), n, "replace_rows_const vector length");
        let mut t = va.clone();
        for &r in rows {
            assert!(r < va.rows(), "replace_rows_const row out of range");
            t.row_mut(r).copy_from_slice(vec.data());
        }
        self.push(
            Op::ReplaceRowsConst {
                a,
                rows: rows.to_vec(),
            },
            t,
            "replace_rows_const",
        )
    }

    // ── reductions & losses ─────────────────────────────────────────────

    pub fn row(&mut self, a: NodeId, idx: usize) -> NodeId {
        let va = &self.nodes[a.0].value;
        assert!(idx < va.rows(), "row index out of range");
        let t = Tensor::from_vec(&[va.cols()], va.row(idx).to_vec()).unwrap();
        self.push(Op::Row(a, idx), t, "row")
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let va = &self.nodes[a.0].value;
        let s: f64 = va.data().iter().sum();
        self.push(Op::SumAll(a), Tensor::scalar(s), "sum_all")
    }

    /// Mean next-token cross-entropy over the given (row, target) pairs.
    pub fn masked_nll_mean(&mut self, logits: NodeId, pairs: &[(usize, usize)]) -> NodeId {
        assert!(!pairs.is_empty(), "masked_nll_mean needs at least one pair");
        let vl = &self.nodes[logits.0].value;
        let n = vl.cols();
        let mut total = 0.0;
        for &(row, target) in pairs {
            assert!(target < n, "nll target out of range");
            let lsm = stable_log_softmax(vl.row(row));
            total -= lsm[target];
        }
        let t = Tensor::scalar(total / pairs.len() as f64);
        self.push(
            Op::MaskedNllMean {
                logits,
                pairs: pairs.to_vec(),
            },
            t,
            "masked_nll_mean",
        )
    }

    /// KL(teacher || softmax(student)) with a frozen teacher distribution.
    pub fn kl_const_teacher(&mut self, student: NodeId, teacher: Tensor) -> NodeId {
        let vs = &self.nodes[student.0].value;
        assert_eq!(vs.len(), teacher.len(), "kl teacher length mismatch");
        let lsm = stable_log_softmax(vs.data());
        let mut total = 0.0;
        for (j, &p) in teacher.data().iter().enumerate() {
            if p > 0.0 {
                total += p * (p.ln() - lsm[j]);
            }
        }
        // analytically >= 0; clamp away round-off when the distributions
        // coincide
        let t = Tensor::scalar(total.max(0.0));
        self.push(Op::KlConstTeacher { student, teacher }, t, "kl_const_teacher")
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Parameter gradients accumulate into
    /// `params.grad`; repeated calls without zeroing add up.
    pub fn backward(&mut self, loss: NodeId, params: &mut ParamSet) -> Result<()> {
        if let Some(at) = &self.nan_at {
            return Err(IvLabError::NonFinite(format!("forward op {at}")));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(IvLabError::ShapeMismatch(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..self.nodes.len()).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            if g.iter().any(|v| !v.is_finite()) {
                return Err(IvLabError::NonFinite(format!(
                    "reverse sweep at node {i}"
                )));
            }
            self.backward_node(i, &g, &mut grads, params);
        }
        params.grads_finite()?;
        Ok(())
    }

    fn backward_node(
        &self,
        i: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        params: &mut ParamSet,
    ) {
        let acc = |grads: &mut [Option<Vec<f64>>], id: NodeId, add: &dyn Fn(&mut [f64])| {
            let len = self.nodes[id.0].value.len();
            let slot = grads[id.0].get_or_insert_with(|| vec![0.0; len]);
            add(slot);
        };
        match &self.nodes[i].op {
            Op::Const => {}
            Op::Param(pid) => {
                let p = params.get_mut(*pid);
                for (dst, src) in p.grad.data_mut().iter_mut().zip(g) {
                    *dst += src;
                }
            }
            Op::Add(a, b) => {
                acc(grads, *a, &|s| add_into(s, g, 1.0));
                acc(grads, *b, &|s| add_into(s, g, 1.0));
            }
            Op::Sub(a, b) => {
                acc(grads, *a, &|s| add_into(s, g, 1.0));
                acc(grads, *b, &|s| add_into(s, g, -1.0));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                acc(grads, *a, &|s| {
                    for ((dst, gi), bi) in s.iter_mut().zip(g).zip(vb.data()) {
                        *dst += gi * bi;
                    }
                });
                acc(grads, *b, &|s| {
                    for ((dst, gi), ai) in s.iter_mut().zip(g).zip(va.data()) {
                        *dst += gi * ai;
                    }
                });
            }
            Op::Scale(a, c) => {
                let c = *c;
                acc(grads, *a, &|s| add_into(s, g, c));
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (m, k) = (va.rows(), va.cols());
                let n = vb.cols();
                // dA += dC · Bᵀ
                acc(grads, *a, &|s| add_matmul_nt(g, vb.data(), s, m, k, n));
                // dB += Aᵀ · dC
                acc(grads, *b, &|s| add_matmul_tn(va.data(), g, s, m, k, n));
            }
            Op::Transpose(a) => {
                let va = &self.nodes[a.0].value;
                let (m, n) = (va.rows(), va.cols());
                acc(grads, *a, &|s| {
                    for i2 in 0..m {
                        for j in 0..n {
                            s[i2 * n + j] += g[j * m + i2];
                        }
                    }
                });
            }
            Op::SliceCols(a, start, len) => {
                let va = &self.nodes[a.0].value;
                let (m, n) = (va.rows(), va.cols());
                let (start, len) = (*start, *len);
                acc(grads, *a, &|s| {
                    for i2 in 0..m {
                        for j in 0..len {
                            s[i2 * n + start + j] += g[i2 * len + j];
                        }
                    }
                });
            }
            Op::SliceRows(a, start, len) => {
                let va = &self.nodes[a.0].value;
                let n = va.cols();
                let (start, len) = (*start, *len);
                acc(grads, *a, &|s| {
                    s[start * n..(start + len) * n]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(dst, src)| *dst += src);
                });
            }
            Op::EmbedRows(table, ids) => {
                let d = self.nodes[table.0].value.cols();
                acc(grads, *table, &|s| {
                    for (pos, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            s[id * d + j] += g[pos * d + j];
                        }
                    }
                });
            }
            Op::CausalSoftmaxRows(a) => {
                let p = &self.nodes[i].value;
                let n = p.cols();
                acc(grads, *a, &|s| {
                    for r in 0..n {
                        let prow = &p.data()[r * n..r * n + r + 1];
                        let grow = &g[r * n..r * n + r + 1];
                        let dot: f64 = prow.iter().zip(grow).map(|(pi, gi)| pi * gi).sum();
                        for j in 0..=r {
                            s[r * n + j] += prow[j] * (grow[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let vx = &self.nodes[x.0].value;
                let vg = &self.nodes[gain.0].value;
                let (m, n) = (vx.rows(), vx.cols());
                let eps = *eps;
                // recompute per-row stats; cheaper than caching for toy sizes
                let mut xhat = vec![0.0; m * n];
                let mut rstds = vec![0.0; m];
                for r in 0..m {
                    let row = vx.row(r);
                    let mean = row.iter().sum::<f64>() / n as f64;
                    let var =
                        row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                    let rstd = 1.0 / (var + eps).sqrt();
                    rstds[r] = rstd;
                    for j in 0..n {
                        xhat[r * n + j] = (row[j] - mean) * rstd;
                    }
                }
                acc(grads, *gain, &|s| {
                    for r in 0..m {
                        for j in 0..n {
                            s[j] += g[r * n + j] * xhat[r * n + j];
                        }
                    }
                });
                acc(grads, *bias, &|s| {
                    for r in 0..m {
                        for j in 0..n {
                            s[j] += g[r * n + j];
                        }
                    }
                });
                acc(grads, *x, &|s| {
                    for r in 0..m {
                        let mut mean_t = 0.0;
                        let mut mean_tx = 0.0;
                        for j in 0..n {
                            let t = g[r * n + j] * vg.data()[j];
                            mean_t += t;
                            mean_tx += t * xhat[r * n + j];
                        }
                        mean_t /= n as f64;
                        mean_tx /= n as f64;
                        for j in 0..n {
                            let t = g[r * n + j] * vg.data()[j];
                            s[r * n + j] += rstds[r] * (t - mean_t - xhat[r * n + j] * mean_tx);
                        }
                    }
                });
            }
            Op::Gelu(a) => {
                let va = &self.nodes[a.0].value;
                acc(grads, *a, &|s| {
                    for ((dst, gi), &x) in s.iter_mut().zip(g).zip(va.data()) {
                        *dst += gi * gelu_bwd(x);
                    }
                });
            }
            Op::AddRowsConst { a, .. } => {
                acc(grads, *a, &|s| add_into(s, g, 1.0));
            }
            Op::ReplaceRowsConst { a, rows } => {
                let n = self.nodes[a.0].value.cols();
                acc(grads, *a, &|s| {
                    add_into(s, g, 1.0);
                    for &r in rows {
                        s[r * n..(r + 1) * n].fill(0.0);
                    }
                });
            }
            Op::Row(a, idx) => {
                let n = self.nodes[a.0].value.cols();
                let idx = *idx;
                acc(grads, *a, &|s| {
                    s[idx * n..(idx + 1) * n]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(dst, src)| *dst += src);
                });
            }
            Op::SumAll(a) => {
                let g0 = g[0];
                acc(grads, *a, &|s| {
                    for dst in s.iter_mut() {
                        *dst += g0;
                    }
                });
            }
            Op::MaskedNllMean { logits, pairs } => {
                let vl = &self.nodes[logits.0].value;
                let n = vl.cols();
                let g0 = g[0] / pairs.len() as f64;
                acc(grads, *logits, &|s| {
                    for &(row, target) in pairs {
                        let probs = stable_softmax(vl.row(row));
                        for j in 0..n {
                            let delta = if j == target { 1.0 } else { 0.0 };
                            s[row * n + j] += g0 * (probs[j] - delta);
                        }
                    }
                });
            }
            Op::KlConstTeacher { student, teacher } => {
                let vs = &self.nodes[student.0].value;
                let probs = stable_softmax(vs.data());
                let g0 = g[0];
                acc(grads, *student, &|s| {
                    for (j, dst) in s.iter_mut().enumerate() {
                        *dst += g0 * (probs[j] - teacher.data()[j]);
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

/// c += a·b, a is m×k, b is k×n. ikj order for cache-friendly inner loops.
fn matmul_into(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for l in 0..k {
            let av = a[i * k + l];
            if av == 0.0 {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
}

/// c += a·bᵀ where a is m×n, b is k×n; result m×k.
fn add_matmul_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for l in 0..k {
            let brow = &b[l * n..(l + 1) * n];
            let mut dot = 0.0;
            for j in 0..n {
                dot += arow[j] * brow[j];
            }
            c[i * k + l] += dot;
        }
    }
}

/// c += aᵀ·g where a is m×k, g is m×n; result k×n.
fn add_matmul_tn(a: &[f64], g: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for l in 0..k {
            let av = a[i * k + l];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[l * n..(l + 1) * n];
            for j in 0..n {
                crow[j] += av * grow[j];
            }
        }
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu_fwd(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_bwd(x: f64) -> f64 {
    let inner = GELU_K * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_K * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Numerically stable softmax; shift-invariant, sums to 1.
pub fn stable_softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Numerically stable log-softmax; entries are always <= 0.
pub fn stable_log_softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - max - log_sum).collect()
}
