//! Operation tape for reverse-mode differentiation.
//!
//! A fresh tape records one forward pass; `backward` replays it in reverse.
//! The skimming graph is dynamic (step count and gating depend on data), so a
//! per-pass tape is the natural fit. Every op validates shapes, checks its
//! output for non-finite values, and adds its multiply-accumulate count to a
//! per-component counter so analytic cost ledgers can be cross-checked
//! against instrumented runs.

use std::collections::BTreeMap;

use super::params::ParamStore;
use super::{NumericsError, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Cost-accounting bucket an op is attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Component {
    Encoders,
    Fusion,
    Classifier,
    Lstm,
    Querying,
    Interpolation,
    Teacher,
    Loss,
    Other,
}

impl Component {
    pub fn name(self) -> &'static str {
        match self {
            Component::Encoders => "encoders",
            Component::Fusion => "fusion",
            Component::Classifier => "classifier",
            Component::Lstm => "lstm",
            Component::Querying => "querying",
            Component::Interpolation => "interpolation",
            Component::Teacher => "teacher",
            Component::Loss => "loss",
            Component::Other => "other",
        }
    }
}

/// Multiply-accumulates plus separately tracked bias adds and elementwise
/// multiplies. Only `macs` enters headline cost ratios.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MacCount {
    pub macs: u64,
    pub bias_adds: u64,
    pub aux_mults: u64,
}

impl MacCount {
    pub fn add(&mut self, other: MacCount) {
        self.macs += other.macs;
        self.bias_adds += other.bias_adds;
        self.aux_mults += other.aux_mults;
    }
}

enum Op {
    Leaf,
    /// y = W·x + b
    Affine { x: NodeId, w: NodeId, b: NodeId },
    /// y = M·v
    MatVec { m: NodeId, v: NodeId },
    /// Matrix whose rows are the given vector nodes.
    StackRows { parts: Vec<NodeId> },
    /// y_k = sum_j w_j · M[j][k]
    WeightedRows { w: NodeId, m: NodeId },
    Concat { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    MulElem { a: NodeId, b: NodeId },
    Scale { x: NodeId, k: f64 },
    AddN { parts: Vec<NodeId> },
    Relu { x: NodeId },
    Sigmoid { x: NodeId },
    Tanh { x: NodeId },
    Softmax { x: NodeId },
    Log { x: NodeId },
    ClampMin { x: NodeId, lo: f64 },
    Abs { x: NodeId },
    Sum { x: NodeId },
    Dot { a: NodeId, b: NodeId },
    /// Scalar [1] tensor holding x[idx].
    Extract { x: NodeId, idx: usize },
    /// y_i = x_i · s[0]
    MulBroadcast { x: NodeId, s: NodeId },
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Tape {
    nodes: Vec<Node>,
    bindings: BTreeMap<String, NodeId>,
    counts: BTreeMap<Component, MacCount>,
    scope: Component,
    grads: Vec<Vec<f64>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bindings: BTreeMap::new(),
            counts: BTreeMap::new(),
            scope: Component::Other,
            grads: Vec::new(),
        }
    }

    /// Set the cost bucket for subsequently recorded ops.
    pub fn scope(&mut self, component: Component) {
        self.scope = component;
    }

    pub fn counts(&self) -> &BTreeMap<Component, MacCount> {
        &self.counts
    }

    pub fn total_macs(&self) -> u64 {
        self.counts.values().map(|c| c.macs).sum()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> &[f64] {
        &self.grads[id.0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn tally(&mut self, macs: u64, bias_adds: u64, aux_mults: u64) {
        let c = self.counts.entry(self.scope).or_default();
        c.macs += macs;
        c.bias_adds += bias_adds;
        c.aux_mults += aux_mults;
    }

    /// Record multiply-accumulates performed outside the tape (data prep
    /// such as interpolation) under the current scope.
    pub fn tally_external(&mut self, macs: u64, bias_adds: u64, aux_mults: u64) {
        self.tally(macs, bias_adds, aux_mults);
    }

    fn push(&mut self, op_name: &str, value: Tensor, op: Op) -> Result<NodeId> {
        if !value.data().iter().all(|v| v.is_finite()) {
            return Err(NumericsError::NonFinite { op: op_name.into() });
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value, op });
        Ok(id)
    }

    /// Constant leaf; no gradient flows out of the caller's view.
    pub fn leaf(&mut self, value: Tensor) -> Result<NodeId> {
        self.push("leaf", value, Op::Leaf)
    }

    /// Leaf bound to a named parameter; `accumulate_grads` adds its gradient
    /// back into the store after `backward`.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<NodeId> {
        if let Some(id) = self.bindings.get(name) {
            return Ok(*id);
        }
        let value = store.get(name)?.clone();
        let id = self.push("param", value, Op::Leaf)?;
        self.bindings.insert(name.to_string(), id);
        Ok(id)
    }

    fn want_vector(&self, op: &str, id: NodeId) -> Result<()> {
        if !self.value(id).is_vector() {
            return Err(NumericsError::ShapeMismatch {
                op: op.into(),
                detail: format!("expected vector, got shape {:?}", self.value(id).shape()),
            });
        }
        Ok(())
    }

    /// y = W·x + b with W of shape [m, n], x of shape [n], b of shape [m].
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (wv, xv, bv) = (self.value(w), self.value(x), self.value(b));
        if !wv.is_matrix() || !xv.is_vector() || !bv.is_vector() {
            return Err(NumericsError::ShapeMismatch {
                op: "affine".into(),
                detail: format!(
                    "W shape {:?}, x shape {:?}, b shape {:?}",
                    wv.shape(),
                    xv.shape(),
                    bv.shape()
                ),
            });
        }
        let (m, n) = (wv.rows(), wv.cols());
        if xv.len() != n || bv.len() != m {
            return Err(NumericsError::ShapeMismatch {
                op: "affine".into(),
                detail: format!("W[{}x{}] incompatible with x[{}] and b[{}]", m, n, xv.len(), bv.len()),
            });
        }
        let mut out = vec![0.0; m];
        {
            let wd = wv.data();
            let xd = xv.data();
            let bd = bv.data();
            for i in 0..m {
                let row = &wd[i * n..(i + 1) * n];
                let mut acc = 0.0;
                for j in 0..n {
                    acc += row[j] * xd[j];
                }
                out[i] = acc + bd[i];
            }
        }
        self.tally((m * n) as u64, m as u64, 0);
        self.push("affine", Tensor::from_parts_unchecked(vec![m], out), Op::Affine { x, w, b })
    }

    /// y = M·v with M of shape [r, c], v of shape [c].
    pub fn matvec(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        let (mv, vv) = (self.value(m), self.value(v));
        if !mv.is_matrix() || !vv.is_vector() || mv.cols() != vv.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "matvec".into(),
                detail: format!("M shape {:?} vs v shape {:?}", mv.shape(), vv.shape()),
            });
        }
        let (r, c) = (mv.rows(), mv.cols());
        let mut out = vec![0.0; r];
        for i in 0..r {
            let row = mv.row(i);
            let mut acc = 0.0;
            for k in 0..c {
                acc += row[k] * vv.data()[k];
            }
            out[i] = acc;
        }
        self.tally((r * c) as u64, 0, 0);
        self.push("matvec", Tensor::from_parts_unchecked(vec![r], out), Op::MatVec { m, v })
    }

    pub fn stack_rows(&mut self, parts: Vec<NodeId>) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(NumericsError::EmptyInput { op: "stack_rows".into() });
        }
        let c = self.value(parts[0]).len();
        for p in &parts {
            self.want_vector("stack_rows", *p)?;
            if self.value(*p).len() != c {
                return Err(NumericsError::ShapeMismatch {
                    op: "stack_rows".into(),
                    detail: "rows of unequal length".into(),
                });
            }
        }
        let mut data = Vec::with_capacity(parts.len() * c);
        for p in &parts {
            data.extend_from_slice(self.value(*p).data());
        }
        let shape = vec![parts.len(), c];
        self.push("stack_rows", Tensor::from_parts_unchecked(shape, data), Op::StackRows { parts })
    }

    /// Weighted sum of matrix rows: y_k = sum_j w_j · M[j][k].
    pub fn weighted_rows(&mut self, w: NodeId, m: NodeId) -> Result<NodeId> {
        let (wv, mv) = (self.value(w), self.value(m));
        if !wv.is_vector() || !mv.is_matrix() || wv.len() != mv.rows() {
            return Err(NumericsError::ShapeMismatch {
                op: "weighted_rows".into(),
                detail: format!("w shape {:?} vs M shape {:?}", wv.shape(), mv.shape()),
            });
        }
        let (r, c) = (mv.rows(), mv.cols());
        let mut out = vec![0.0; c];
        for j in 0..r {
            let wj = wv.data()[j];
            let row = mv.row(j);
            for k in 0..c {
                out[k] += wj * row[k];
            }
        }
        self.tally((r * c) as u64, 0, 0);
        self.push("weighted_rows", Tensor::from_parts_unchecked(vec![c], out), Op::WeightedRows { w, m })
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.want_vector("concat", a)?;
        self.want_vector("concat", b)?;
        let mut data = self.value(a).data().to_vec();
        data.extend_from_slice(self.value(b).data());
        let shape = vec![data.len()];
        self.push("concat", Tensor::from_parts_unchecked(shape, data), Op::Concat { a, b })
    }

    fn binary_same_shape(&mut self, name: &str, a: NodeId, b: NodeId) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(NumericsError::ShapeMismatch {
                op: name.into(),
                detail: format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("add", a, b)?;
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        self.push("add", Tensor::from_parts_unchecked(shape, data), Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("sub", a, b)?;
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        self.push("sub", Tensor::from_parts_unchecked(shape, data), Op::Sub { a, b })
    }

    pub fn mul_elem(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("mul_elem", a, b)?;
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        self.tally(0, 0, data.len() as u64);
        self.push("mul_elem", Tensor::from_parts_unchecked(shape, data), Op::MulElem { a, b })
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> Result<NodeId> {
        if !k.is_finite() {
            return Err(NumericsError::NonFinite { op: "scale".into() });
        }
        let data: Vec<f64> = self.value(x).data().iter().map(|v| v * k).collect();
        let shape = self.value(x).shape().to_vec();
        self.tally(0, 0, data.len() as u64);
        self.push("scale", Tensor::from_parts_unchecked(shape, data), Op::Scale { x, k })
    }

    /// Elementwise sum of identically shaped nodes, accumulated in argument
    /// order.
    pub fn add_n(&mut self, parts: Vec<NodeId>) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(NumericsError::EmptyInput { op: "add_n".into() });
        }
        let shape = self.value(parts[0]).shape().to_vec();
        for p in &parts[1..] {
            if self.value(*p).shape() != shape.as_slice() {
                return Err(NumericsError::ShapeMismatch {
                    op: "add_n".into(),
                    detail: "mixed shapes".into(),
                });
            }
        }
        let mut data = vec![0.0; shape.iter().product()];
        for p in &parts {
            for (o, v) in data.iter_mut().zip(self.value(*p).data()) {
                *o += v;
            }
        }
        self.push("add_n", Tensor::from_parts_unchecked(shape, data), Op::AddN { parts })
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let data: Vec<f64> = self.value(x).data().iter().map(|v| v.max(0.0)).collect();
        let shape = self.value(x).shape().to_vec();
        self.push("relu", Tensor::from_parts_unchecked(shape, data), Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let data: Vec<f64> = self.value(x).data().iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
        let shape = self.value(x).shape().to_vec();
        self.push("sigmoid", Tensor::from_parts_unchecked(shape, data), Op::Sigmoid { x })
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let data: Vec<f64> = self.value(x).data().iter().map(|v| v.tanh()).collect();
        let shape = self.value(x).shape().to_vec();
        self.push("tanh", Tensor::from_parts_unchecked(shape, data), Op::Tanh { x })
    }

    /// Max-subtracted softmax over a vector.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        self.want_vector("softmax", x)?;
        if self.value(x).is_empty() {
            return Err(NumericsError::EmptyInput { op: "softmax".into() });
        }
        let xd = self.value(x).data();
        let max = xd.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = xd.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let data: Vec<f64> = exps.iter().map(|e| e / total).collect();
        let shape = vec![data.len()];
        self.push("softmax", Tensor::from_parts_unchecked(shape, data), Op::Softmax { x })
    }

    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        let data: Vec<f64> = self.value(x).data().iter().map(|v| v.ln()).collect();
        let shape = self.value(x).shape().to_vec();
        self.push("log", Tensor::from_parts_unchecked(shape, data), Op::Log { x })
    }

    pub fn clamp_min(&mut self, x: NodeId, lo: f64) -> Result<NodeId> {
        let data: Vec<f64> = self.value(x).data().iter().map(|v| v.max(lo)).collect();
        let shape = self.value(x).shape().to_vec();
        self.push("clamp_min", Tensor::from_parts_unchecked(shape, data), Op::ClampMin { x, lo })
    }

    pub fn abs(&mut self, x: NodeId) -> Result<NodeId> {
        let data: Vec<f64> = self.value(x).data().iter().map(|v| v.abs()).collect();
        let shape = self.value(x).shape().to_vec();
        self.push("abs", Tensor::from_parts_unchecked(shape, data), Op::Abs { x })
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let mut acc = 0.0;
        for v in self.value(x).data() {
            acc += v;
        }
        self.push("sum", Tensor::from_parts_unchecked(vec![1], vec![acc]), Op::Sum { x })
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.want_vector("dot", a)?;
        self.want_vector("dot", b)?;
        self.binary_same_shape("dot", a, b)?;
        let mut acc = 0.0;
        for (x, y) in self.value(a).data().iter().zip(self.value(b).data()) {
            acc += x * y;
        }
        self.tally(self.value(a).len() as u64, 0, 0);
        self.push("dot", Tensor::from_parts_unchecked(vec![1], vec![acc]), Op::Dot { a, b })
    }

    pub fn extract(&mut self, x: NodeId, idx: usize) -> Result<NodeId> {
        if idx >= self.value(x).len() {
            return Err(NumericsError::ShapeMismatch {
                op: "extract".into(),
                detail: format!("index {} out of {}", idx, self.value(x).len()),
            });
        }
        let v = self.value(x).data()[idx];
        self.push("extract", Tensor::from_parts_unchecked(vec![1], vec![v]), Op::Extract { x, idx })
    }

    /// y_i = x_i · s[0] where s is a shape-[1] node.
    pub fn mul_broadcast(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        if self.value(s).len() != 1 {
            return Err(NumericsError::ShapeMismatch {
                op: "mul_broadcast".into(),
                detail: format!("scale has shape {:?}", self.value(s).shape()),
            });
        }
        let k = self.value(s).data()[0];
        let data: Vec<f64> = self.value(x).data().iter().map(|v| v * k).collect();
        let shape = self.value(x).shape().to_vec();
        self.tally(0, 0, data.len() as u64);
        self.push("mul_broadcast", Tensor::from_parts_unchecked(shape, data), Op::MulBroadcast { x, s })
    }

    /// Reverse pass from a scalar output node. Gradients are recomputed from
    /// scratch on every call.
    pub fn backward(&mut self, out: NodeId) -> Result<()> {
        if self.value(out).len() != 1 {
            return Err(NumericsError::ShapeMismatch {
                op: "backward".into(),
                detail: format!("output must be scalar, got shape {:?}", self.value(out).shape()),
            });
        }
        self.grads = self.nodes.iter().map(|n| vec![0.0; n.value.len()]).collect();
        self.grads[out.0][0] = 1.0;

        // Disjoint field borrows: node values are read-only while gradient
        // buffers are mutated, so no per-op copies of weight matrices.
        let Tape { nodes, grads, .. } = self;
        for i in (0..nodes.len()).rev() {
            let g = std::mem::take(&mut grads[i]);
            if g.iter().all(|v| *v == 0.0) {
                grads[i] = g;
                continue;
            }
            match &nodes[i].op {
                Op::Leaf => {}
                Op::Affine { x, w, b } => {
                    let (xi, wi, bi) = (x.0, w.0, b.0);
                    let n = nodes[xi].value.len();
                    let m = g.len();
                    for r in 0..m {
                        let gr = g[r];
                        if gr == 0.0 {
                            continue;
                        }
                        {
                            let row = &nodes[wi].value.data()[r * n..(r + 1) * n];
                            let gx = &mut grads[xi];
                            for c in 0..n {
                                gx[c] += row[c] * gr;
                            }
                        }
                        {
                            let xd = nodes[xi].value.data();
                            let grow = &mut grads[wi][r * n..(r + 1) * n];
                            for c in 0..n {
                                grow[c] += gr * xd[c];
                            }
                        }
                        grads[bi][r] += gr;
                    }
                }
                Op::MatVec { m, v } => {
                    let (mi, vi) = (m.0, v.0);
                    let c = nodes[vi].value.len();
                    let r = g.len();
                    for row in 0..r {
                        let gr = g[row];
                        if gr == 0.0 {
                            continue;
                        }
                        {
                            let vd = nodes[vi].value.data();
                            let gm = &mut grads[mi][row * c..(row + 1) * c];
                            for k in 0..c {
                                gm[k] += gr * vd[k];
                            }
                        }
                        {
                            let md = &nodes[mi].value.data()[row * c..(row + 1) * c];
                            let gv = &mut grads[vi];
                            for k in 0..c {
                                gv[k] += md[k] * gr;
                            }
                        }
                    }
                }
                Op::StackRows { parts } => {
                    let c = g.len() / parts.len();
                    for (j, p) in parts.iter().enumerate() {
                        let src = &g[j * c..(j + 1) * c];
                        let dst = &mut grads[p.0];
                        for k in 0..c {
                            dst[k] += src[k];
                        }
                    }
                }
                Op::WeightedRows { w, m } => {
                    let (wi, mi) = (w.0, m.0);
                    let r = nodes[wi].value.len();
                    let c = g.len();
                    for j in 0..r {
                        let wj = nodes[wi].value.data()[j];
                        let mut acc = 0.0;
                        {
                            let mrow = &nodes[mi].value.data()[j * c..(j + 1) * c];
                            let grow = &mut grads[mi][j * c..(j + 1) * c];
                            for k in 0..c {
                                acc += g[k] * mrow[k];
                                grow[k] += wj * g[k];
                            }
                        }
                        grads[wi][j] += acc;
                    }
                }
                Op::Concat { a, b } => {
                    let (ai, bi) = (a.0, b.0);
                    let na = nodes[ai].value.len();
                    for k in 0..na {
                        grads[ai][k] += g[k];
                    }
                    for k in na..g.len() {
                        grads[bi][k - na] += g[k];
                    }
                }
                Op::Add { a, b } => {
                    let (ai, bi) = (a.0, b.0);
                    for (k, gv) in g.iter().enumerate() {
                        grads[ai][k] += gv;
                    }
                    for (k, gv) in g.iter().enumerate() {
                        grads[bi][k] += gv;
                    }
                }
                Op::Sub { a, b } => {
                    let (ai, bi) = (a.0, b.0);
                    for (k, gv) in g.iter().enumerate() {
                        grads[ai][k] += gv;
                    }
                    for (k, gv) in g.iter().enumerate() {
                        grads[bi][k] -= gv;
                    }
                }
                Op::MulElem { a, b } => {
                    let (ai, bi) = (a.0, b.0);
                    for (k, gv) in g.iter().enumerate() {
                        grads[ai][k] += gv * nodes[bi].value.data()[k];
                    }
                    for (k, gv) in g.iter().enumerate() {
                        grads[bi][k] += gv * nodes[ai].value.data()[k];
                    }
                }
                Op::Scale { x, k } => {
                    let (xi, kk) = (x.0, *k);
                    let gx = &mut grads[xi];
                    for (j, gv) in g.iter().enumerate() {
                        gx[j] += gv * kk;
                    }
                }
                Op::AddN { parts } => {
                    for p in parts {
                        let dst = &mut grads[p.0];
                        for (k, gv) in g.iter().enumerate() {
                            dst[k] += gv;
                        }
                    }
                }
                Op::Relu { x } => {
                    let xi = x.0;
                    for (k, gv) in g.iter().enumerate() {
                        if nodes[xi].value.data()[k] > 0.0 {
                            grads[xi][k] += gv;
                        }
                    }
                }
                Op::Sigmoid { x } => {
                    let xi = x.0;
                    let yd = nodes[i].value.data();
                    let gx = &mut grads[xi];
                    for (k, gv) in g.iter().enumerate() {
                        gx[k] += gv * yd[k] * (1.0 - yd[k]);
                    }
                }
                Op::Tanh { x } => {
                    let xi = x.0;
                    let yd = nodes[i].value.data();
                    let gx = &mut grads[xi];
                    for (k, gv) in g.iter().enumerate() {
                        gx[k] += gv * (1.0 - yd[k] * yd[k]);
                    }
                }
                Op::Softmax { x } => {
                    let xi = x.0;
                    let yd = nodes[i].value.data();
                    let mut inner = 0.0;
                    for (k, gv) in g.iter().enumerate() {
                        inner += gv * yd[k];
                    }
                    let gx = &mut grads[xi];
                    for (k, gv) in g.iter().enumerate() {
                        gx[k] += yd[k] * (gv - inner);
                    }
                }
                Op::Log { x } => {
                    let xi = x.0;
                    let xd = nodes[xi].value.data();
                    let gx = &mut grads[xi];
                    for (k, gv) in g.iter().enumerate() {
                        gx[k] += gv / xd[k];
                    }
                }
                Op::ClampMin { x, lo } => {
                    let (xi, lo) = (x.0, *lo);
                    for (k, gv) in g.iter().enumerate() {
                        if nodes[xi].value.data()[k] > lo {
                            grads[xi][k] += gv;
                        }
                    }
                }
                Op::Abs { x } => {
                    let xi = x.0;
                    for (k, gv) in g.iter().enumerate() {
                        let xv = nodes[xi].value.data()[k];
                        if xv != 0.0 {
                            grads[xi][k] += gv * xv.signum();
                        }
                    }
                }
                Op::Sum { x } => {
                    let xi = x.0;
                    let gv = g[0];
                    for slot in grads[xi].iter_mut() {
                        *slot += gv;
                    }
                }
                Op::Dot { a, b } => {
                    let (ai, bi) = (a.0, b.0);
                    let gv = g[0];
                    let n = nodes[ai].value.len();
                    for k in 0..n {
                        grads[ai][k] += gv * nodes[bi].value.data()[k];
                    }
                    for k in 0..n {
                        grads[bi][k] += gv * nodes[ai].value.data()[k];
                    }
                }
                Op::Extract { x, idx } => {
                    grads[x.0][*idx] += g[0];
                }
                Op::MulBroadcast { x, s } => {
                    let (xi, si) = (x.0, s.0);
                    let k = nodes[si].value.data()[0];
                    let mut s_acc = 0.0;
                    for (j, gv) in g.iter().enumerate() {
                        grads[xi][j] += gv * k;
                        s_acc += gv * nodes[xi].value.data()[j];
                    }
                    grads[si][0] += s_acc;
                }
            }
            grads[i] = g;
        }
        Ok(())
    }

    /// Add the gradients of bound parameters into the store.
    pub fn accumulate_grads(&self, store: &mut ParamStore) -> Result<()> {
        for (name, id) in &self.bindings {
            store.add_grad(name, &self.grads[id.0])?;
        }
        Ok(())
    }
}
