//! Reverse-mode differentiation over [`Tensor2`] values.
//!
//! Every op evaluates eagerly when it is pushed and records what its
//! backward rule needs. Parameters are borrowed from a [`ParamStore`] and
//! entered at most once per tape, so batched sub-graphs share them.
//! [`Tape::backward`] returns owned gradients, which the caller folds into
//! the store once the tape is dropped.

use super::kernels::{gelu, gelu_grad, sigmoid, softmax_unchecked, LAYER_NORM_EPS, MIN_NORM};
use super::params::{ParamId, ParamStore};
use super::tensor::{dot, Tensor2};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    MatMulBt(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Gelu(NodeId),
    Sigmoid(NodeId),
    Log(NodeId),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Tensor2,
        inv_std: Vec<f64>,
    },
    SoftmaxRows(NodeId),
    MeanRows(NodeId),
    Gather {
        table: NodeId,
        indices: Vec<usize>,
    },
    SliceRows(NodeId, usize),
    SliceCols(NodeId, usize),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    L2NormalizeRows {
        x: NodeId,
        norms: Vec<f64>,
    },
}

struct Node {
    // `None` for parameter nodes, whose value lives in the store.
    value: Option<Tensor2>,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
}

/// Result of a backward pass.
pub struct Gradients {
    nodes: Vec<Option<Tensor2>>,
    params: Vec<(ParamId, Tensor2)>,
}

impl Gradients {
    /// Gradient reaching `node`, if any flowed there.
    pub fn wrt(&self, node: NodeId) -> Option<&Tensor2> {
        self.nodes.get(node.0).and_then(Option::as_ref)
    }

    pub fn params(&self) -> &[(ParamId, Tensor2)] {
        &self.params
    }

    pub fn accumulate_into(&self, store: &mut ParamStore) -> Result<()> {
        for (id, g) in &self.params {
            store.accumulate(*id, g)?;
        }
        Ok(())
    }
}

fn shape_err(op: &str, a: &Tensor2, b: &Tensor2) -> Error {
    Error::dim(format!("{op}: {:?} vs {:?}", a.shape(), b.shape()))
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn value(&self, id: NodeId) -> &Tensor2 {
        let node = &self.nodes[id.0];
        match (&node.value, &node.op) {
            (Some(v), _) => v,
            (None, Op::Param(p)) => self.params.value(*p),
            (None, _) => unreachable!("non-parameter node without a value"),
        }
    }

    fn push(&mut self, value: Tensor2, op: Op) -> NodeId {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant or differentiable input.
    pub fn input(&mut self, value: Tensor2) -> NodeId {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.param_nodes[id.0] {
            return n;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let n = NodeId(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(n);
        n
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul_bt(self.value(b))?;
        Ok(self.push(v, Op::MatMulBt(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let v = va
            .zip_map(vb, |x, y| x + y)
            .map_err(|_| shape_err("add", va, vb))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    /// Adds a `1 × c` row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(bias));
        if vb.rows() != 1 || vb.cols() != va.cols() {
            return Err(shape_err("add_row", va, vb));
        }
        let mut v = va.clone();
        for r in 0..v.rows() {
            for (x, b) in v.row_mut(r).iter_mut().zip(vb.data()) {
                *x += b;
            }
        }
        Ok(self.push(v, Op::AddRow(a, bias)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let v = va
            .zip_map(vb, |x, y| x * y)
            .map_err(|_| shape_err("mul", va, vb))?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(gelu);
        self.push(v, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        if va.data().iter().any(|&x| x <= 0.0) {
            return Err(Error::Domain("log of a non-positive value".into()));
        }
        let v = va.map(f64::ln);
        Ok(self.push(v, Op::Log(a)))
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` (`1 × c`).
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let vx = self.value(x);
        let (vg, vb) = (self.value(gamma), self.value(beta));
        let c = vx.cols();
        if vg.shape() != (1, c) || vb.shape() != (1, c) {
            return Err(shape_err("layer_norm", vx, vg));
        }
        let mut xhat = Tensor2::zeros(vx.rows(), c);
        let mut out = Tensor2::zeros(vx.rows(), c);
        let mut inv_std = Vec::with_capacity(vx.rows());
        for r in 0..vx.rows() {
            let row = vx.row(r);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat.set(r, j, h);
                out.set(r, j, h * vg.data()[j] + vb.data()[j]);
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        va.ensure_finite("softmax logits")?;
        let mut v = Tensor2::zeros(va.rows(), va.cols());
        for r in 0..va.rows() {
            v.row_mut(r).copy_from_slice(&softmax_unchecked(va.row(r)));
        }
        Ok(self.push(v, Op::SoftmaxRows(a)))
    }

    /// Mean over rows, giving a `1 × c` result.
    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        if va.rows() == 0 {
            return Err(Error::EmptyInput("mean over zero rows".into()));
        }
        let mut v = Tensor2::zeros(1, va.cols());
        for r in 0..va.rows() {
            for (o, x) in v.data_mut().iter_mut().zip(va.row(r)) {
                *o += x;
            }
        }
        let n = va.rows() as f64;
        v.data_mut().iter_mut().for_each(|x| *x /= n);
        Ok(self.push(v, Op::MeanRows(a)))
    }

    /// Selects rows of `table` by index (embedding lookup).
    pub fn gather(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId> {
        let vt = self.value(table);
        let mut v = Tensor2::zeros(indices.len(), vt.cols());
        for (r, &i) in indices.iter().enumerate() {
            if i >= vt.rows() {
                return Err(Error::dim(format!(
                    "gather index {i} in a {}-row table",
                    vt.rows()
                )));
            }
            v.row_mut(r).copy_from_slice(vt.row(i));
        }
        Ok(self.push(
            v,
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
        ))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = self.value(a).slice_rows(start, len)?;
        Ok(self.push(v, Op::SliceRows(a, start)))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = self.value(a).slice_cols(start, len)?;
        Ok(self.push(v, Op::SliceCols(a, start)))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let vals: Vec<&Tensor2> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor2::concat_rows(&vals)?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let vals: Vec<&Tensor2> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor2::concat_cols(&vals)?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    /// Normalizes every row to unit Euclidean length.
    pub fn l2_normalize_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        va.ensure_finite("l2_normalize input")?;
        let mut v = va.clone();
        let mut norms = Vec::with_capacity(va.rows());
        for r in 0..va.rows() {
            let n = dot(va.row(r), va.row(r)).sqrt();
            if n <= MIN_NORM {
                return Err(Error::DegenerateVector {
                    norm: n,
                    min: MIN_NORM,
                });
            }
            v.row_mut(r).iter_mut().for_each(|x| *x /= n);
            norms.push(n);
        }
        Ok(self.push(v, Op::L2NormalizeRows { x: a, norms }))
    }

    /// Runs the backward pass from one or more seeded outputs.
    pub fn backward(&self, seeds: &[(NodeId, Tensor2)]) -> Result<Gradients> {
        let mut grads: Vec<Option<Tensor2>> = vec![None; self.nodes.len()];
        let mut last = 0;
        for (node, seed) in seeds {
            let v = self.value(*node);
            if !v.same_shape(seed) {
                return Err(shape_err("backward seed", v, seed));
            }
            accumulate(&mut grads, *node, seed.clone())?;
            last = last.max(node.0 + 1);
        }

        for idx in (0..last).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        let params = self
            .param_nodes
            .iter()
            .enumerate()
            .filter_map(|(pi, n)| {
                let n = (*n)?;
                grads[n.0].clone().map(|g| (ParamId(pi), g))
            })
            .collect();
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }

    fn propagate(&self, idx: usize, g: &Tensor2, grads: &mut [Option<Tensor2>]) -> Result<()> {
        let out = self.nodes[idx].value.as_ref();
        match &self.nodes[idx].op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let da = g.matmul_bt(self.value(*b))?;
                let db = self.value(*a).matmul_at(g)?;
                accumulate(grads, *a, da)?;
                accumulate(grads, *b, db)?;
            }
            Op::MatMulBt(a, b) => {
                let da = g.matmul(self.value(*b))?;
                let db = g.matmul_at(self.value(*a))?;
                accumulate(grads, *a, da)?;
                accumulate(grads, *b, db)?;
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone())?;
                accumulate(grads, *b, g.clone())?;
            }
            Op::AddRow(a, bias) => {
                let mut db = Tensor2::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (o, x) in db.data_mut().iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
                accumulate(grads, *a, g.clone())?;
                accumulate(grads, *bias, db)?;
            }
            Op::Mul(a, b) => {
                let da = g.zip_map(self.value(*b), |x, y| x * y)?;
                let db = g.zip_map(self.value(*a), |x, y| x * y)?;
                accumulate(grads, *a, da)?;
                accumulate(grads, *b, db)?;
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.scale(*s))?,
            Op::Relu(a) => {
                let d = g.zip_map(self.value(*a), |gi, x| if x > 0.0 { gi } else { 0.0 })?;
                accumulate(grads, *a, d)?;
            }
            Op::Gelu(a) => {
                let d = g.zip_map(self.value(*a), |gi, x| gi * gelu_grad(x))?;
                accumulate(grads, *a, d)?;
            }
            Op::Sigmoid(a) => {
                let y = out.expect("sigmoid output");
                let d = g.zip_map(y, |gi, s| gi * s * (1.0 - s))?;
                accumulate(grads, *a, d)?;
            }
            Op::Log(a) => {
                let d = g.zip_map(self.value(*a), |gi, x| gi / x)?;
                accumulate(grads, *a, d)?;
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let vg = self.value(*gamma);
                let c = g.cols();
                let cf = c as f64;
                let mut dgamma = Tensor2::zeros(1, c);
                let mut dbeta = Tensor2::zeros(1, c);
                let mut dx = Tensor2::zeros(g.rows(), c);
                for r in 0..g.rows() {
                    let gr = g.row(r);
                    let hr = xhat.row(r);
                    let mut sum_dh = 0.0;
                    let mut sum_dh_h = 0.0;
                    for j in 0..c {
                        dgamma.data_mut()[j] += gr[j] * hr[j];
                        dbeta.data_mut()[j] += gr[j];
                        let dh = gr[j] * vg.data()[j];
                        sum_dh += dh;
                        sum_dh_h += dh * hr[j];
                    }
                    let is = inv_std[r];
                    let dxr = dx.row_mut(r);
                    for j in 0..c {
                        let dh = gr[j] * vg.data()[j];
                        dxr[j] = is / cf * (cf * dh - sum_dh - hr[j] * sum_dh_h);
                    }
                }
                accumulate(grads, *x, dx)?;
                accumulate(grads, *gamma, dgamma)?;
                accumulate(grads, *beta, dbeta)?;
            }
            Op::SoftmaxRows(a) => {
                let y = out.expect("softmax output");
                let mut d = Tensor2::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let s = dot(g.row(r), y.row(r));
                    for ((o, gi), yi) in d.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o = yi * (gi - s);
                    }
                }
                accumulate(grads, *a, d)?;
            }
            Op::MeanRows(a) => {
                let rows = self.value(*a).rows();
                let mut d = Tensor2::zeros(rows, g.cols());
                let inv = 1.0 / rows as f64;
                for r in 0..rows {
                    for (o, gi) in d.row_mut(r).iter_mut().zip(g.data()) {
                        *o = gi * inv;
                    }
                }
                accumulate(grads, *a, d)?;
            }
            Op::Gather { table, indices } => {
                let vt = self.value(*table);
                let mut d = Tensor2::zeros(vt.rows(), vt.cols());
                for (r, &i) in indices.iter().enumerate() {
                    for (o, gi) in d.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += gi;
                    }
                }
                accumulate(grads, *table, d)?;
            }
            Op::SliceRows(a, start) => {
                let va = self.value(*a);
                let mut d = Tensor2::zeros(va.rows(), va.cols());
                for r in 0..g.rows() {
                    d.row_mut(start + r).copy_from_slice(g.row(r));
                }
                accumulate(grads, *a, d)?;
            }
            Op::SliceCols(a, start) => {
                let va = self.value(*a);
                let mut d = Tensor2::zeros(va.rows(), va.cols());
                for r in 0..g.rows() {
                    d.row_mut(r)[*start..start + g.cols()].copy_from_slice(g.row(r));
                }
                accumulate(grads, *a, d)?;
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let rows = self.value(*p).rows();
                    accumulate(grads, *p, g.slice_rows(offset, rows)?)?;
                    offset += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let cols = self.value(*p).cols();
                    accumulate(grads, *p, g.slice_cols(offset, cols)?)?;
                    offset += cols;
                }
            }
            Op::L2NormalizeRows { x, norms } => {
                let y = out.expect("normalize output");
                let mut d = Tensor2::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let s = dot(g.row(r), y.row(r));
                    let n = norms[r];
                    for ((o, gi), yi) in d.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o = (gi - yi * s) / n;
                    }
                }
                accumulate(grads, *x, d)?;
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor2>], node: NodeId, g: Tensor2) -> Result<()> {
    match &mut grads[node.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Multi-head scaled dot-product self-attention over the rows of `x`.
///
/// `q`, `k`, `v` are `n × width` projections; returns the concatenated head
/// outputs (`n × width`), before any output projection.
pub fn multi_head_attention(
    tape: &mut Tape<'_>,
    q: NodeId,
    k: NodeId,
    v: NodeId,
    heads: usize,
) -> Result<NodeId> {
    let width = tape.value(q).cols();
    if heads == 0 || width % heads != 0 {
        return Err(Error::Contract(format!(
            "{heads} heads do not divide width {width}"
        )));
    }
    let hd = width / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * hd, hd)?;
        let kh = tape.slice_cols(k, h * hd, hd)?;
        let vh = tape.slice_cols(v, h * hd, hd)?;
        let scores = tape.matmul_bt(qh, kh)?;
        let scores = tape.scale(scores, scale);
        let attn = tape.softmax_rows(scores)?;
        outs.push(tape.matmul(attn, vh)?);
    }
    if outs.len() == 1 {
        Ok(outs[0])
    } else {
        tape.concat_cols(&outs)
    }
}
