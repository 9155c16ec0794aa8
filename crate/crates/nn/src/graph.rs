//! Reverse-mode tape over dense row-major tensors.
//!
//! Convolution activations use the layout `[C, M, L]` (channel, sample, time)
//! so a convolution over a whole batch is a single GEMM. Everything else is
//! row-major `[rows, cols]`.

use crate::real::{gemm, Real};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("event {0} has no unmasked station")]
    AllMasked(usize),
    #[error("backward seed does not match output shape")]
    BadSeed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor size mismatch");
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    /// `(rows, cols)` of a rank-2 tensor.
    fn rc(&self) -> (usize, usize) {
        assert_eq!(self.shape.len(), 2, "expected a matrix, got shape {:?}", self.shape);
        (self.shape[0], self.shape[1])
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<T>) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index(name).map(|i| &self.tensors[i])
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
        }
    }

    pub fn zeros_like(&self) -> Vec<Tensor<T>> {
        self.tensors.iter().map(|t| Tensor::zeros(t.shape.clone())).collect()
    }
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

pub type NodeId = usize;

#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub m: usize,
    pub lin: usize,
    pub lout: usize,
}

impl ConvGeom {
    /// Output positions `[t0, t1)` whose tap `kk` lands inside the input.
    fn valid_range(&self, kk: usize) -> (usize, usize) {
        let t0 = if kk >= self.pad {
            0
        } else {
            (self.pad - kk).div_ceil(self.stride)
        };
        // Largest t with t·stride + kk − pad ≤ lin − 1.
        let t1 = if self.lin + self.pad > kk {
            ((self.lin - 1 + self.pad - kk) / self.stride + 1).min(self.lout)
        } else {
            0
        };
        (t0.min(t1), t1)
    }
}

#[derive(Debug)]
enum Op<T> {
    /// `true` when gradients with respect to this input are wanted.
    Input(bool),
    Param(usize),
    Conv1d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        g: ConvGeom,
        cols: Vec<T>,
    },
    Relu(NodeId),
    Tanh(NodeId),
    Add(NodeId, NodeId),
    TimeMean(NodeId),
    Linear {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    Concat(Vec<NodeId>),
    SliceRows {
        x: NodeId,
        start: usize,
    },
    Scatter {
        x: NodeId,
        rows: Vec<usize>,
    },
    LayerNorm {
        x: NodeId,
        g: NodeId,
        b: NodeId,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Attention {
        qkv: NodeId,
        events: usize,
        n: usize,
        heads: usize,
        mask: Vec<bool>,
        probs: Vec<T>,
    },
    RowMask {
        x: NodeId,
        keep: Vec<bool>,
    },
    Scale {
        x: NodeId,
        factors: Vec<T>,
    },
    SoftmaxPool {
        h: NodeId,
        s: NodeId,
        events: usize,
        n: usize,
        mask: Vec<bool>,
        weights: Vec<T>,
    },
    MaskedMean {
        h: NodeId,
        events: usize,
        n: usize,
        mask: Vec<bool>,
    },
    PartialTanh {
        x: NodeId,
        k: usize,
    },
    GroupRms {
        x: NodeId,
        groups: Vec<(usize, usize)>,
        inv: Vec<T>,
    },
}

fn op_inputs<T>(op: &Op<T>) -> Vec<NodeId> {
    match op {
        Op::Input(_) | Op::Param(_) => vec![],
        Op::Conv1d { x, w, b, .. } => vec![*x, *w, *b],
        Op::Relu(x) | Op::Tanh(x) | Op::TimeMean(x) => vec![*x],
        Op::Add(a, b) => vec![*a, *b],
        Op::Linear { x, w, b } => [Some(*x), Some(*w), *b].into_iter().flatten().collect(),
        Op::Concat(parts) => parts.clone(),
        Op::SliceRows { x, .. }
        | Op::Scatter { x, .. }
        | Op::RowMask { x, .. }
        | Op::Scale { x, .. }
        | Op::PartialTanh { x, .. }
        | Op::GroupRms { x, .. } => vec![*x],
        Op::LayerNorm { x, g, b, .. } => vec![*x, *g, *b],
        Op::Attention { qkv, .. } => vec![*qkv],
        Op::SoftmaxPool { h, s, .. } => vec![*h, *s],
        Op::MaskedMean { h, .. } => vec![*h],
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

const LN_EPS: f64 = 1e-5;
const RMS_EPS: f64 = 1e-8;

pub struct Graph<'p, T: Real> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_nodes: Vec<Option<NodeId>>,
}

/// Result of a backward pass.
pub struct Grads<T> {
    pub nodes: Vec<Option<Tensor<T>>>,
    pub params: Vec<Tensor<T>>,
}

impl<T: Real> Grads<T> {
    pub fn node(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.nodes[id].as_ref()
    }
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.tensors.len()],
        }
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        match self.nodes[id].op {
            Op::Param(p) => &self.params.tensors[p],
            _ => &self.nodes[id].value,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn input(&mut self, t: Tensor<T>) -> NodeId {
        self.push(t, Op::Input(true))
    }

    /// An input whose gradient is never needed; backward skips work that
    /// only feeds it.
    pub fn constant(&mut self, t: Tensor<T>) -> NodeId {
        self.push(t, Op::Input(false))
    }

    pub fn param(&mut self, index: usize) -> NodeId {
        if let Some(id) = self.param_nodes[index] {
            return id;
        }
        let id = self.push(Tensor::zeros(vec![0]), Op::Param(index));
        self.param_nodes[index] = Some(id);
        id
    }

    pub fn param_named(&mut self, name: &str) -> NodeId {
        let i = self
            .params
            .index(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.param(i)
    }

    /// 1-D convolution on `[Cin, M, L]` with weights `[Cout, Cin, K]`.
    pub fn conv1d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: usize) -> NodeId {
        let xs = self.value(x).shape.clone();
        let ws = self.value(w).shape.clone();
        assert_eq!(xs.len(), 3);
        assert_eq!(ws[1], xs[0], "conv input channels");
        let (cin, m, lin) = (xs[0], xs[1], xs[2]);
        let (cout, k) = (ws[0], ws[2]);
        let lout = (lin + 2 * pad - k) / stride + 1;
        let g = ConvGeom {
            cin,
            cout,
            k,
            stride,
            pad,
            m,
            lin,
            lout,
        };
        let ml = m * lout;
        let mut cols = vec![T::zero(); cin * k * ml];
        {
            let xv = &self.value(x).data;
            for c in 0..cin {
                for kk in 0..k {
                    let row = &mut cols[(c * k + kk) * ml..(c * k + kk + 1) * ml];
                    let (t0, t1) = g.valid_range(kk);
                    for s in 0..m {
                        let src = &xv[(c * m + s) * lin..(c * m + s + 1) * lin];
                        let dst = &mut row[s * lout + t0..s * lout + t1];
                        let first = t0 * stride + kk - pad;
                        if stride == 1 {
                            dst.copy_from_slice(&src[first..first + dst.len()]);
                        } else {
                            for (d, v) in dst.iter_mut().zip(src[first..].iter().step_by(stride)) {
                                *d = *v;
                            }
                        }
                    }
                }
            }
        }
        let mut out = vec![T::zero(); cout * ml];
        gemm(
            false,
            false,
            cout,
            ml,
            cin * k,
            &self.value(w).data,
            &cols,
            &mut out,
            false,
        );
        let bv = &self.value(b).data;
        for (co, row) in out.chunks_mut(ml).enumerate() {
            let bias = bv[co];
            row.iter_mut().for_each(|v| *v += bias);
        }
        self.push(Tensor::new(vec![cout, m, lout], out), Op::Conv1d { x, w, b, g, cols })
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let out = Tensor::new(v.shape.clone(), v.data.iter().map(|a| a.max(T::zero())).collect());
        self.push(out, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let out = Tensor::new(v.shape.clone(), v.data.iter().map(|a| a.tanh()).collect());
        self.push(out, Op::Tanh(x))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape, vb.shape, "add shapes");
        let out = Tensor::new(
            va.shape.clone(),
            va.data.iter().zip(&vb.data).map(|(x, y)| *x + *y).collect(),
        );
        self.push(out, Op::Add(a, b))
    }

    /// `[C, M, L]` → `[M, C]` mean over time.
    pub fn time_mean(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let (c, m, l) = (v.shape[0], v.shape[1], v.shape[2]);
        let inv = T::one() / T::of(l as f64);
        let mut out = vec![T::zero(); m * c];
        for ci in 0..c {
            for s in 0..m {
                let seg = &v.data[(ci * m + s) * l..(ci * m + s + 1) * l];
                out[s * c + ci] = seg.iter().copied().sum::<T>() * inv;
            }
        }
        self.push(Tensor::new(vec![m, c], out), Op::TimeMean(x))
    }

    /// `x[R, In] · Wᵀ + b` with `W[Out, In]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> NodeId {
        let (r, din) = self.value(x).rc();
        let (dout, win) = self.value(w).rc();
        assert_eq!(din, win, "linear input width");
        let mut out = vec![T::zero(); r * dout];
        gemm(
            false,
            true,
            r,
            dout,
            din,
            &self.value(x).data,
            &self.value(w).data,
            &mut out,
            false,
        );
        if let Some(b) = b {
            let bv = &self.value(b).data;
            for row in out.chunks_mut(dout) {
                for (o, bb) in row.iter_mut().zip(bv) {
                    *o += *bb;
                }
            }
        }
        self.push(Tensor::new(vec![r, dout], out), Op::Linear { x, w, b })
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let r = self.value(parts[0]).rc().0;
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).rc().1).collect();
        let total: usize = widths.iter().sum();
        let mut out = vec![T::zero(); r * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let v = self.value(p);
            assert_eq!(v.shape[0], r, "concat rows");
            for i in 0..r {
                out[i * total + off..i * total + off + w].copy_from_slice(&v.data[i * w..(i + 1) * w]);
            }
            off += w;
        }
        self.push(Tensor::new(vec![r, total], out), Op::Concat(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let (_, c) = self.value(x).rc();
        let data = self.value(x).data[start * c..(start + len) * c].to_vec();
        self.push(Tensor::new(vec![len, c], data), Op::SliceRows { x, start })
    }

    /// Places row `i` of `x` at row `rows[i]` of a zero `[total, D]` matrix.
    pub fn scatter_rows(&mut self, x: NodeId, rows: Vec<usize>, total: usize) -> NodeId {
        let (r, d) = self.value(x).rc();
        assert_eq!(r, rows.len());
        let mut out = vec![T::zero(); total * d];
        let v = &self.value(x).data;
        for (i, &dst) in rows.iter().enumerate() {
            out[dst * d..(dst + 1) * d].copy_from_slice(&v[i * d..(i + 1) * d]);
        }
        self.push(Tensor::new(vec![total, d], out), Op::Scatter { x, rows })
    }

    pub fn layer_norm(&mut self, x: NodeId, g: NodeId, b: NodeId) -> NodeId {
        let (r, d) = self.value(x).rc();
        let eps = T::of(LN_EPS);
        let inv_d = T::one() / T::of(d as f64);
        let mut xhat = vec![T::zero(); r * d];
        let mut rstd = vec![T::zero(); r];
        let mut out = vec![T::zero(); r * d];
        let (xv, gv, bv) = (&self.value(x).data, &self.value(g).data, &self.value(b).data);
        for i in 0..r {
            let row = &xv[i * d..(i + 1) * d];
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() * inv_d;
            let rs = T::one() / (var + eps).sqrt();
            rstd[i] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[i * d + j] = h;
                out[i * d + j] = h * gv[j] + bv[j];
            }
        }
        self.push(Tensor::new(vec![r, d], out), Op::LayerNorm { x, g, b, xhat, rstd })
    }

    /// Multi-head scaled dot-product self-attention on packed `[E·N, 3D]`
    /// projections; masked keys get zero probability.
    pub fn attention(
        &mut self,
        qkv: NodeId,
        events: usize,
        n: usize,
        heads: usize,
        mask: Vec<bool>,
    ) -> Result<NodeId, GraphError> {
        let (r, d3) = self.value(qkv).rc();
        if r != events * n || d3 % (3 * heads) != 0 || mask.len() != r {
            return Err(GraphError::Shape(format!("attention input {r}x{d3}")));
        }
        let d = d3 / 3;
        let dh = d / heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let v = &self.value(qkv).data;
        let mut probs = vec![T::zero(); events * heads * n * n];
        let mut out = vec![T::zero(); r * d];
        let mut scores = vec![T::zero(); n];
        for e in 0..events {
            let valid: Vec<usize> = (0..n).filter(|&j| mask[e * n + j]).collect();
            if valid.is_empty() {
                return Err(GraphError::AllMasked(e));
            }
            for h in 0..heads {
                let pbase = (e * heads + h) * n * n;
                for i in 0..n {
                    let q = &v[(e * n + i) * d3 + h * dh..][..dh];
                    let mut mx = T::neg_infinity();
                    for &j in &valid {
                        let kk = &v[(e * n + j) * d3 + d + h * dh..][..dh];
                        let s = q.iter().zip(kk).map(|(a, b)| *a * *b).sum::<T>() * scale;
                        scores[j] = s;
                        mx = mx.max(s);
                    }
                    let mut z = T::zero();
                    for &j in &valid {
                        let p = (scores[j] - mx).exp();
                        probs[pbase + i * n + j] = p;
                        z += p;
                    }
                    let o = &mut out[(e * n + i) * d + h * dh..][..dh];
                    for &j in &valid {
                        let p = probs[pbase + i * n + j] / z;
                        probs[pbase + i * n + j] = p;
                        let vv = &v[(e * n + j) * d3 + 2 * d + h * dh..][..dh];
                        for (oo, x) in o.iter_mut().zip(vv) {
                            *oo += p * *x;
                        }
                    }
                }
            }
        }
        Ok(self.push(
            Tensor::new(vec![r, d], out),
            Op::Attention {
                qkv,
                events,
                n,
                heads,
                mask,
                probs,
            },
        ))
    }

    /// Attention probabilities `[E, H, N, N]` of an attention node.
    pub fn attention_probs(&self, id: NodeId) -> Option<&[T]> {
        match &self.nodes[id].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Zeroes rows where `keep` is false.
    pub fn row_mask(&mut self, x: NodeId, keep: Vec<bool>) -> NodeId {
        let (r, d) = self.value(x).rc();
        assert_eq!(keep.len(), r);
        let mut out = self.value(x).data.clone();
        for (i, k) in keep.iter().enumerate() {
            if !k {
                out[i * d..(i + 1) * d].iter_mut().for_each(|v| *v = T::zero());
            }
        }
        self.push(Tensor::new(vec![r, d], out), Op::RowMask { x, keep })
    }

    /// Elementwise product with fixed factors (dropout masks).
    pub fn scale(&mut self, x: NodeId, factors: Vec<T>) -> NodeId {
        let v = self.value(x);
        assert_eq!(v.len(), factors.len());
        let out = Tensor::new(
            v.shape.clone(),
            v.data.iter().zip(&factors).map(|(a, f)| *a * *f).collect(),
        );
        self.push(out, Op::Scale { x, factors })
    }

    /// `z_e = Σ_i a_i h_i` with `a = softmax(s)` over unmasked stations of
    /// each event; masked weights are exactly zero.
    pub fn softmax_pool(
        &mut self,
        h: NodeId,
        s: NodeId,
        events: usize,
        n: usize,
        mask: Vec<bool>,
    ) -> Result<NodeId, GraphError> {
        let (r, d) = self.value(h).rc();
        if r != events * n || self.value(s).len() != r {
            return Err(GraphError::Shape("softmax pool".into()));
        }
        let (hv, sv) = (&self.value(h).data, &self.value(s).data);
        let mut weights = vec![T::zero(); r];
        let mut out = vec![T::zero(); events * d];
        for e in 0..events {
            let valid: Vec<usize> = (0..n).map(|j| e * n + j).filter(|&i| mask[i]).collect();
            if valid.is_empty() {
                return Err(GraphError::AllMasked(e));
            }
            let mx = valid.iter().fold(T::neg_infinity(), |a, &i| a.max(sv[i]));
            let z: T = valid.iter().map(|&i| (sv[i] - mx).exp()).sum();
            for &i in &valid {
                let a = (sv[i] - mx).exp() / z;
                weights[i] = a;
                for (o, x) in out[e * d..(e + 1) * d].iter_mut().zip(&hv[i * d..(i + 1) * d]) {
                    *o += a * *x;
                }
            }
        }
        Ok(self.push(
            Tensor::new(vec![events, d], out),
            Op::SoftmaxPool {
                h,
                s,
                events,
                n,
                mask,
                weights,
            },
        ))
    }

    pub fn pool_weights(&self, id: NodeId) -> Option<&[T]> {
        match &self.nodes[id].op {
            Op::SoftmaxPool { weights, .. } => Some(weights),
            _ => None,
        }
    }

    pub fn masked_mean(&mut self, h: NodeId, events: usize, n: usize, mask: Vec<bool>) -> Result<NodeId, GraphError> {
        let (r, d) = self.value(h).rc();
        if r != events * n {
            return Err(GraphError::Shape("masked mean".into()));
        }
        let hv = &self.value(h).data;
        let mut out = vec![T::zero(); events * d];
        for e in 0..events {
            let valid: Vec<usize> = (0..n).map(|j| e * n + j).filter(|&i| mask[i]).collect();
            if valid.is_empty() {
                return Err(GraphError::AllMasked(e));
            }
            let inv = T::one() / T::of(valid.len() as f64);
            for &i in &valid {
                for (o, x) in out[e * d..(e + 1) * d].iter_mut().zip(&hv[i * d..(i + 1) * d]) {
                    *o += inv * *x;
                }
            }
        }
        Ok(self.push(Tensor::new(vec![events, d], out), Op::MaskedMean { h, events, n, mask }))
    }

    /// `tanh` on the first `k` columns, identity on the rest.
    pub fn partial_tanh(&mut self, x: NodeId, k: usize) -> NodeId {
        let (r, c) = self.value(x).rc();
        let mut out = self.value(x).data.clone();
        for i in 0..r {
            for j in 0..k.min(c) {
                out[i * c + j] = out[i * c + j].tanh();
            }
        }
        self.push(Tensor::new(vec![r, c], out), Op::PartialTanh { x, k })
    }

    /// Per-sample RMS normalization of channel groups `[lo, hi)` of `[C, M, L]`.
    pub fn group_rms(&mut self, x: NodeId, groups: Vec<(usize, usize)>) -> NodeId {
        let v = self.value(x);
        let (_, m, l) = (v.shape[0], v.shape[1], v.shape[2]);
        let mut inv = vec![T::zero(); groups.len() * m];
        let mut out = v.data.clone();
        for (gi, &(lo, hi)) in groups.iter().enumerate() {
            let count = T::of(((hi - lo) * l) as f64);
            for s in 0..m {
                let mut ss = T::zero();
                for c in lo..hi {
                    ss += v.data[(c * m + s) * l..(c * m + s + 1) * l]
                        .iter()
                        .map(|a| *a * *a)
                        .sum::<T>();
                }
                let r = T::one() / (ss / count + T::of(RMS_EPS)).sqrt();
                inv[gi * m + s] = r;
                for c in lo..hi {
                    out[(c * m + s) * l..(c * m + s + 1) * l]
                        .iter_mut()
                        .for_each(|a| *a *= r);
                }
            }
        }
        let shape = v.shape.clone();
        self.push(Tensor::new(shape, out), Op::GroupRms { x, groups, inv })
    }

    /// Nodes through which a gradient can reach a parameter or tracked input.
    fn needs_grad(&self, output: NodeId) -> Vec<bool> {
        let mut needs = vec![false; output + 1];
        for id in 0..=output {
            needs[id] = match &self.nodes[id].op {
                Op::Input(tracked) => *tracked,
                Op::Param(_) => true,
                op => op_inputs(op).iter().any(|&i| needs[i]),
            };
        }
        needs
    }

    /// Reverse pass from `output` seeded with `seed` (same shape as output).
    pub fn backward(&self, output: NodeId, seed: &[T]) -> Result<Grads<T>, GraphError> {
        if self.value(output).len() != seed.len() {
            return Err(GraphError::BadSeed);
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output] = Some(Tensor::new(self.value(output).shape.clone(), seed.to_vec()));
        let needs = self.needs_grad(output);
        for id in (0..=output).rev() {
            let Some(gy) = grads[id].take() else { continue };
            self.backprop(id, &gy, &mut grads, &needs);
            grads[id] = Some(gy);
        }
        let params = self
            .params
            .tensors
            .iter()
            .enumerate()
            .map(|(i, t)| match self.param_nodes[i].and_then(|n| grads[n].clone()) {
                Some(g) => g,
                None => Tensor::zeros(t.shape.clone()),
            })
            .collect();
        Ok(Grads { nodes: grads, params })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Tensor<T>>], id: NodeId) -> &'g mut Tensor<T> {
        let shape = &self.value(id).shape;
        grads[id].get_or_insert_with(|| Tensor::zeros(shape.clone()))
    }

    fn backprop(&self, id: NodeId, gy: &Tensor<T>, grads: &mut [Option<Tensor<T>>], needs: &[bool]) {
        let y = &self.nodes[id].value;
        match &self.nodes[id].op {
            Op::Input(_) | Op::Param(_) => {}
            Op::Conv1d { x, w, b, g, cols } => {
                let ml = g.m * g.lout;
                let ck = g.cin * g.k;
                {
                    let gb = self.acc(grads, *b);
                    for (co, row) in gy.data.chunks(ml).enumerate() {
                        gb.data[co] += row.iter().copied().sum::<T>();
                    }
                }
                gemm(
                    false,
                    true,
                    g.cout,
                    ck,
                    ml,
                    &gy.data,
                    cols,
                    &mut self.acc(grads, *w).data,
                    true,
                );
                if !needs[*x] {
                    return;
                }
                let mut dcols = vec![T::zero(); ck * ml];
                gemm(
                    true,
                    false,
                    ck,
                    ml,
                    g.cout,
                    &self.value(*w).data,
                    &gy.data,
                    &mut dcols,
                    false,
                );
                let gx = self.acc(grads, *x);
                for c in 0..g.cin {
                    for kk in 0..g.k {
                        let row = &dcols[(c * g.k + kk) * ml..(c * g.k + kk + 1) * ml];
                        let (t0, t1) = g.valid_range(kk);
                        for s in 0..g.m {
                            let dst = &mut gx.data[(c * g.m + s) * g.lin..(c * g.m + s + 1) * g.lin];
                            let src = &row[s * g.lout + t0..s * g.lout + t1];
                            let first = t0 * g.stride + kk - g.pad;
                            for (d, v) in dst[first..].iter_mut().step_by(g.stride).zip(src) {
                                *d += *v;
                            }
                        }
                    }
                }
            }
            Op::Relu(x) => {
                let gx = self.acc(grads, *x);
                for ((d, yv), gv) in gx.data.iter_mut().zip(&y.data).zip(&gy.data) {
                    if *yv > T::zero() {
                        *d += *gv;
                    }
                }
            }
            Op::Tanh(x) => {
                let gx = self.acc(grads, *x);
                for ((d, yv), gv) in gx.data.iter_mut().zip(&y.data).zip(&gy.data) {
                    *d += *gv * (T::one() - *yv * *yv);
                }
            }
            Op::Add(a, b) => {
                for t in [*a, *b] {
                    let g = self.acc(grads, t);
                    g.data.iter_mut().zip(&gy.data).for_each(|(d, v)| *d += *v);
                }
            }
            Op::TimeMean(x) => {
                let shape = &self.value(*x).shape;
                let (c, m, l) = (shape[0], shape[1], shape[2]);
                let inv = T::one() / T::of(l as f64);
                let gx = self.acc(grads, *x);
                for ci in 0..c {
                    for s in 0..m {
                        let g = gy.data[s * c + ci] * inv;
                        gx.data[(ci * m + s) * l..(ci * m + s + 1) * l]
                            .iter_mut()
                            .for_each(|d| *d += g);
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let (r, din) = self.value(*x).rc();
                let dout = gy.shape[1];
                if let Some(b) = b {
                    let gb = self.acc(grads, *b);
                    for row in gy.data.chunks(dout) {
                        gb.data.iter_mut().zip(row).for_each(|(d, v)| *d += *v);
                    }
                }
                gemm(
                    true,
                    false,
                    dout,
                    din,
                    r,
                    &gy.data,
                    &self.value(*x).data,
                    &mut self.acc(grads, *w).data,
                    true,
                );
                gemm(
                    false,
                    false,
                    r,
                    din,
                    dout,
                    &gy.data,
                    &self.value(*w).data,
                    &mut self.acc(grads, *x).data,
                    true,
                );
            }
            Op::Concat(parts) => {
                let (r, total) = gy.rc();
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).shape[1];
                    let gp = self.acc(grads, p);
                    for i in 0..r {
                        for j in 0..w {
                            gp.data[i * w + j] += gy.data[i * total + off + j];
                        }
                    }
                    off += w;
                }
            }
            Op::SliceRows { x, start } => {
                let c = gy.shape[1];
                let gx = self.acc(grads, *x);
                gx.data[start * c..start * c + gy.len()]
                    .iter_mut()
                    .zip(&gy.data)
                    .for_each(|(d, v)| *d += *v);
            }
            Op::Scatter { x, rows } => {
                let d = gy.shape[1];
                let gx = self.acc(grads, *x);
                for (i, &src) in rows.iter().enumerate() {
                    gx.data[i * d..(i + 1) * d]
                        .iter_mut()
                        .zip(&gy.data[src * d..(src + 1) * d])
                        .for_each(|(a, v)| *a += *v);
                }
            }
            Op::LayerNorm { x, g, b, xhat, rstd } => {
                let (r, d) = gy.rc();
                let gv = self.value(*g).data.clone();
                {
                    let gg = self.acc(grads, *g);
                    for i in 0..r {
                        for j in 0..d {
                            gg.data[j] += gy.data[i * d + j] * xhat[i * d + j];
                        }
                    }
                }
                {
                    let gb = self.acc(grads, *b);
                    for i in 0..r {
                        for j in 0..d {
                            gb.data[j] += gy.data[i * d + j];
                        }
                    }
                }
                let inv_d = T::one() / T::of(d as f64);
                let gx = self.acc(grads, *x);
                for i in 0..r {
                    let mut s1 = T::zero();
                    let mut s2 = T::zero();
                    for j in 0..d {
                        let dxh = gy.data[i * d + j] * gv[j];
                        s1 += dxh;
                        s2 += dxh * xhat[i * d + j];
                    }
                    for j in 0..d {
                        let dxh = gy.data[i * d + j] * gv[j];
                        gx.data[i * d + j] += rstd[i] * (dxh - inv_d * s1 - xhat[i * d + j] * inv_d * s2);
                    }
                }
            }
            Op::Attention {
                qkv,
                events,
                n,
                heads,
                mask,
                probs,
            } => {
                let (n, heads) = (*n, *heads);
                let d3 = self.value(*qkv).shape[1];
                let d = d3 / 3;
                let dh = d / heads;
                let scale = T::one() / T::of(dh as f64).sqrt();
                let v = self.value(*qkv).data.clone();
                let gq = self.acc(grads, *qkv);
                let mut dp = vec![T::zero(); n];
                for e in 0..*events {
                    let valid: Vec<usize> = (0..n).filter(|&j| mask[e * n + j]).collect();
                    for h in 0..heads {
                        let pbase = (e * heads + h) * n * n;
                        for i in 0..n {
                            let go = &gy.data[(e * n + i) * d + h * dh..][..dh];
                            let mut dot = T::zero();
                            for &j in &valid {
                                let p = probs[pbase + i * n + j];
                                let vv = &v[(e * n + j) * d3 + 2 * d + h * dh..][..dh];
                                let gv = &mut gq.data[(e * n + j) * d3 + 2 * d + h * dh..][..dh];
                                let mut s = T::zero();
                                for t in 0..dh {
                                    gv[t] += p * go[t];
                                    s += go[t] * vv[t];
                                }
                                dp[j] = s;
                                dot += p * s;
                            }
                            for &j in &valid {
                                let p = probs[pbase + i * n + j];
                                let ds = p * (dp[j] - dot) * scale;
                                if ds == T::zero() {
                                    continue;
                                }
                                for t in 0..dh {
                                    let qi = v[(e * n + i) * d3 + h * dh + t];
                                    let kj = v[(e * n + j) * d3 + d + h * dh + t];
                                    gq.data[(e * n + i) * d3 + h * dh + t] += ds * kj;
                                    gq.data[(e * n + j) * d3 + d + h * dh + t] += ds * qi;
                                }
                            }
                        }
                    }
                }
            }
            Op::RowMask { x, keep } => {
                let d = gy.shape[1];
                let gx = self.acc(grads, *x);
                for (i, k) in keep.iter().enumerate() {
                    if *k {
                        gx.data[i * d..(i + 1) * d]
                            .iter_mut()
                            .zip(&gy.data[i * d..(i + 1) * d])
                            .for_each(|(a, v)| *a += *v);
                    }
                }
            }
            Op::Scale { x, factors } => {
                let gx = self.acc(grads, *x);
                for ((a, v), f) in gx.data.iter_mut().zip(&gy.data).zip(factors) {
                    *a += *v * *f;
                }
            }
            Op::SoftmaxPool {
                h,
                s,
                events,
                n,
                mask,
                weights,
            } => {
                let d = gy.shape[1];
                let hv = self.value(*h).data.clone();
                let mut gs_local = vec![T::zero(); events * n];
                {
                    let gh = self.acc(grads, *h);
                    for e in 0..*events {
                        let gz = &gy.data[e * d..(e + 1) * d];
                        let valid: Vec<usize> = (0..*n).map(|j| e * n + j).filter(|&i| mask[i]).collect();
                        let mut da = vec![T::zero(); valid.len()];
                        let mut dot = T::zero();
                        for (k, &i) in valid.iter().enumerate() {
                            let a = weights[i];
                            let hrow = &hv[i * d..(i + 1) * d];
                            let mut s = T::zero();
                            for t in 0..d {
                                gh.data[i * d + t] += a * gz[t];
                                s += gz[t] * hrow[t];
                            }
                            da[k] = s;
                            dot += a * s;
                        }
                        for (k, &i) in valid.iter().enumerate() {
                            gs_local[i] = weights[i] * (da[k] - dot);
                        }
                    }
                }
                let gs = self.acc(grads, *s);
                gs.data.iter_mut().zip(&gs_local).for_each(|(a, v)| *a += *v);
            }
            Op::MaskedMean { h, events, n, mask } => {
                let d = gy.shape[1];
                let gh = self.acc(grads, *h);
                for e in 0..*events {
                    let valid: Vec<usize> = (0..*n).map(|j| e * n + j).filter(|&i| mask[i]).collect();
                    let inv = T::one() / T::of(valid.len() as f64);
                    for &i in &valid {
                        for t in 0..d {
                            gh.data[i * d + t] += inv * gy.data[e * d + t];
                        }
                    }
                }
            }
            Op::PartialTanh { x, k } => {
                let c = gy.shape[1];
                let gx = self.acc(grads, *x);
                for (idx, (a, v)) in gx.data.iter_mut().zip(&gy.data).enumerate() {
                    if idx % c < *k {
                        let t = y.data[idx];
                        *a += *v * (T::one() - t * t);
                    } else {
                        *a += *v;
                    }
                }
            }
            Op::GroupRms { x, groups, inv } => {
                if !needs[*x] {
                    return;
                }
                let shape = &self.value(*x).shape;
                let (m, l) = (shape[1], shape[2]);
                let xv = self.value(*x).data.clone();
                let gx = self.acc(grads, *x);
                for (gi, &(lo, hi)) in groups.iter().enumerate() {
                    let count = T::of(((hi - lo) * l) as f64);
                    for s in 0..m {
                        let r = inv[gi * m + s];
                        // y = x·r, r = (mean(x²)+ε)^(-1/2): dx = r·gy − r³·x·Σ(gy·x)/count
                        let mut dot = T::zero();
                        for c in lo..hi {
                            let base = (c * m + s) * l;
                            for t in 0..l {
                                dot += gy.data[base + t] * xv[base + t];
                            }
                        }
                        let coef = r * r * r * dot / count;
                        for c in lo..hi {
                            let base = (c * m + s) * l;
                            for t in 0..l {
                                gx.data[base + t] += r * gy.data[base + t] - coef * xv[base + t];
                            }
                        }
                    }
                }
                // Channels outside every group pass through unchanged.
                let c_total = shape[0];
                for c in 0..c_total {
                    if groups.iter().all(|&(lo, hi)| c < lo || c >= hi) {
                        let base = c * m * l;
                        for t in 0..m * l {
                            gx.data[base + t] += gy.data[base + t];
                        }
                    }
                }
            }
        }
    }
}
