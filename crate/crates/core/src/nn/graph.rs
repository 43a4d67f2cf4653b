use std::collections::HashMap;

use super::kernels::{self, ConvGeom};
use super::{gemm, Float, MatView, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Upper bound on the number of values held by one im2col buffer.
const IM2COL_BUDGET: usize = 1 << 22;

/// Index of a node inside its [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Value<T> {
    Owned(Tensor<T>),
    Param(ParamId),
}

enum Op<T> {
    Leaf,
    Linear { x: NodeId, w: NodeId, b: Option<NodeId> },
    BatchMatMul { a: NodeId, b: NodeId, trans_b: bool },
    Conv2d { x: NodeId, w: NodeId, b: Option<NodeId>, geom: ConvGeom, chunk: usize },
    ConvTranspose2x2 { x: NodeId, w: NodeId, b: Option<NodeId> },
    MaxPool2 { x: NodeId, argmax: Vec<u32> },
    Add { a: NodeId, b: NodeId },
    Scale { x: NodeId, s: T },
    MulConst { x: NodeId, c: Vec<T> },
    Relu(NodeId),
    Gelu(NodeId),
    Tanh(NodeId),
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, mean: Vec<T>, rstd: Vec<T> },
    Softmax(NodeId),
    Reshape(NodeId),
    Permute { x: NodeId, perm: Vec<usize> },
    Concat { xs: Vec<NodeId>, axis: usize },
    Narrow { x: NodeId, axis: usize, start: usize },
    Mean { x: NodeId, axis: usize },
    Expand(NodeId),
    Mse { pred: NodeId, target: NodeId },
    SumAll(NodeId),
    DotConst { x: NodeId, c: Vec<T> },
}

struct Node<T> {
    value: Value<T>,
    op: Op<T>,
    grad: bool,
}

/// Gradients produced by [`Graph::backward`].
pub struct Grads<T> {
    by_node: Vec<Option<Tensor<T>>>,
    params: HashMap<ParamId, NodeId>,
}

impl<T: Float> Grads<T> {
    pub fn wrt(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.by_node.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient of a parameter, `None` if it did not take part in the loss.
    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id).and_then(|&n| self.wrt(n))
    }
}

/// Dynamic computation graph recording operations for reverse-mode
/// differentiation.
pub struct Graph<'p, T: Float> {
    params: Option<&'p ParamStore<T>>,
    nodes: Vec<Node<T>>,
    param_nodes: HashMap<ParamId, NodeId>,
    grad_enabled: bool,
}

fn mismatch(expected: &[usize], actual: &[usize]) -> Error {
    Error::ShapeMismatch {
        expected: expected.to_vec(),
        actual: actual.to_vec(),
    }
}

fn accumulate<T: Float>(grads: &mut [Option<Tensor<T>>], id: NodeId, g: Tensor<T>) {
    match &mut grads[id.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// `(outer, len, inner)` sizes around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<'p, T: Float> Graph<'p, T> {
    /// Graph that records what is needed for [`Graph::backward`].
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params: Some(params),
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            grad_enabled: true,
        }
    }

    /// Forward-only graph; no intermediate buffers are kept.
    pub fn inference(params: &'p ParamStore<T>) -> Self {
        Self {
            grad_enabled: false,
            ..Self::new(params)
        }
    }

    /// Graph without a parameter store.
    pub fn detached() -> Self {
        Self {
            params: None,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            grad_enabled: true,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        match &self.nodes[id.0].value {
            Value::Owned(t) => t,
            Value::Param(p) => self.params.expect("parameter node without store").get(*p),
        }
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.value(id).shape()
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id.0].grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[NodeId]) -> NodeId {
        let grad = self.grad_enabled && parents.iter().any(|&p| self.requires(p));
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant input.
    pub fn input(&mut self, t: Tensor<T>) -> NodeId {
        self.nodes.push(Node {
            value: Value::Owned(t),
            op: Op::Leaf,
            grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Input whose gradient is wanted.
    pub fn leaf(&mut self, t: Tensor<T>) -> NodeId {
        let grad = self.grad_enabled;
        self.nodes.push(Node {
            value: Value::Owned(t),
            op: Op::Leaf,
            grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Node for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_nodes.get(&id) {
            return n;
        }
        assert!(self.params.is_some(), "graph has no parameter store");
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
            grad: self.grad_enabled,
        });
        let n = NodeId(self.nodes.len() - 1);
        self.param_nodes.insert(id, n);
        n
    }

    /// `x[.., in] * w[in, out] + b[out]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || xs.last() != Some(&ws[0]) {
            return Err(mismatch(&ws, &xs));
        }
        let (inn, out) = (ws[0], ws[1]);
        if let Some(b) = b {
            if self.shape(b) != [out] {
                return Err(mismatch(&[out], self.shape(b)));
            }
        }
        let rows = self.value(x).numel() / inn.max(1);
        let mut y = vec![T::zero(); rows * out];
        let mut beta = T::zero();
        if let Some(b) = b {
            let bv = self.value(b).data();
            for r in y.chunks_exact_mut(out) {
                r.copy_from_slice(bv);
            }
            beta = T::one();
        }
        gemm(
            T::one(),
            MatView::row_major(self.value(x).data(), rows, inn),
            MatView::row_major(self.value(w).data(), inn, out),
            beta,
            &mut y,
            out,
            1,
        );
        let mut shape = xs;
        *shape.last_mut().expect("rank >= 1") = out;
        let t = Tensor::new(shape, y)?;
        let parents: Vec<NodeId> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(t, Op::Linear { x, w, b }, &parents))
    }

    /// Batched product of `a[B, m, k]` with `b[B, k, n]` (or `b[B, n, k]` transposed).
    pub fn batch_matmul(&mut self, a: NodeId, b: NodeId, trans_b: bool) -> Result<NodeId> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(mismatch(&sa, &sb));
        }
        let (bs, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return Err(mismatch(&sa, &sb));
        }
        let mut y = vec![T::zero(); bs * m * n];
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        for i in 0..bs {
            let am = MatView::row_major(&av[i * m * k..(i + 1) * m * k], m, k);
            let bm = if trans_b {
                MatView::row_major(&bv[i * n * k..(i + 1) * n * k], n, k).t()
            } else {
                MatView::row_major(&bv[i * k * n..(i + 1) * k * n], k, n)
            };
            gemm(T::one(), am, bm, T::zero(), &mut y[i * m * n..(i + 1) * m * n], n, 1);
        }
        let t = Tensor::new(vec![bs, m, n], y)?;
        Ok(self.push(t, Op::BatchMatMul { a, b, trans_b }, &[a, b]))
    }

    /// 2-D convolution of `x[N, C, H, W]` with `w[O, C, kh, kw]`.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
            return Err(mismatch(&ws, &xs));
        }
        let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let o = ws[0];
        let geom = ConvGeom::new(c, h, wd, ws[2], ws[3], stride, pad)
            .ok_or_else(|| Error::validation("convolution kernel larger than padded input"))?;
        if let Some(b) = b {
            if self.shape(b) != [o] {
                return Err(mismatch(&[o], self.shape(b)));
            }
        }
        let parents: Vec<NodeId> = [Some(x), Some(w), b].into_iter().flatten().collect();

        let (p, ckk, chw) = (geom.out_pixels(), geom.ckk(), c * h * wd);
        let chunk = geom.chunk(n, IM2COL_BUDGET);
        let mut y = vec![T::zero(); n * o * p];
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = b.map(|b| self.value(b).data());
        let mut n0 = 0;
        while n0 < n {
            let nb = chunk.min(n - n0);
            let width = nb * p;
            let mut cols = vec![T::zero(); ckk * width];
            kernels::im2col(&xv[n0 * chw..(n0 + nb) * chw], nb, &geom, &mut cols);
            let mut tmp = vec![T::zero(); o * width];
            gemm(
                T::one(),
                MatView::row_major(wv, o, ckk),
                MatView::row_major(&cols, ckk, width),
                T::zero(),
                &mut tmp,
                width,
                1,
            );
            for oc in 0..o {
                let bias = bv.map_or(T::zero(), |b| b[oc]);
                for i in 0..nb {
                    let src = &tmp[oc * width + i * p..oc * width + (i + 1) * p];
                    let dst = &mut y[((n0 + i) * o + oc) * p..((n0 + i) * o + oc + 1) * p];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d = s + bias;
                    }
                }
            }
            n0 += nb;
        }
        let t = Tensor::new(vec![n, o, geom.ho, geom.wo], y)?;
        Ok(self.push(
            t,
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                chunk,
            },
            &parents,
        ))
    }

    /// Stride-2 transposed convolution with a 2x2 kernel `w[C, O, 2, 2]`.
    pub fn conv_transpose2x2(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[0] != xs[1] || ws[2] != 2 || ws[3] != 2 {
            return Err(mismatch(&ws, &xs));
        }
        let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let o = ws[1];
        if let Some(b) = b {
            if self.shape(b) != [o] {
                return Err(mismatch(&[o], self.shape(b)));
            }
        }
        let (hw, o4) = (h * wd, o * 4);
        let (h2, w2) = (2 * h, 2 * wd);
        let mut y = vec![T::zero(); n * o * h2 * w2];
        let mut tmp = vec![T::zero(); hw * o4];
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = b.map(|b| self.value(b).data());
        for img in 0..n {
            let xn = &xv[img * c * hw..(img + 1) * c * hw];
            gemm(
                T::one(),
                MatView::row_major(xn, c, hw).t(),
                MatView::row_major(wv, c, o4),
                T::zero(),
                &mut tmp,
                o4,
                1,
            );
            let yn = &mut y[img * o * h2 * w2..(img + 1) * o * h2 * w2];
            for i in 0..h {
                for j in 0..wd {
                    let row = &tmp[(i * wd + j) * o4..(i * wd + j + 1) * o4];
                    for oc in 0..o {
                        let bias = bv.map_or(T::zero(), |b| b[oc]);
                        for a in 0..2 {
                            for bb in 0..2 {
                                yn[(oc * h2 + 2 * i + a) * w2 + 2 * j + bb] =
                                    row[oc * 4 + a * 2 + bb] + bias;
                            }
                        }
                    }
                }
            }
        }
        let t = Tensor::new(vec![n, o, h2, w2], y)?;
        let parents: Vec<NodeId> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(t, Op::ConvTranspose2x2 { x, w, b }, &parents))
    }

    /// 2x2 max pooling with stride 2 over `x[N, C, H, W]` (H, W even).
    pub fn max_pool2(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 || !xs[2].is_multiple_of(2) || !xs[3].is_multiple_of(2) {
            return Err(Error::validation(format!("max_pool2 needs even spatial dims, got {xs:?}")));
        }
        let (nc, h, w) = (xs[0] * xs[1], xs[2], xs[3]);
        let (ho, wo) = (h / 2, w / 2);
        let xv = self.value(x).data();
        let mut y = Vec::with_capacity(nc * ho * wo);
        let mut argmax = Vec::with_capacity(nc * ho * wo);
        for plane in 0..nc {
            let base = plane * h * w;
            for i in 0..ho {
                for j in 0..wo {
                    let mut best = base + 2 * i * w + 2 * j;
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let k = base + (2 * i + di) * w + 2 * j + dj;
                        if xv[k] > xv[best] {
                            best = k;
                        }
                    }
                    y.push(xv[best]);
                    argmax.push(best as u32);
                }
            }
        }
        let t = Tensor::new(vec![xs[0], xs[1], ho, wo], y)?;
        Ok(self.push(t, Op::MaxPool2 { x, argmax }, &[x]))
    }

    /// Elementwise sum; `b` may have the shape of a trailing part of `a`, in
    /// which case it is broadcast over the leading dimensions.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(mismatch(sa, sb));
        }
        let bv = self.value(b).data();
        let mut y = self.value(a).clone();
        for chunk in y.data_mut().chunks_exact_mut(bv.len().max(1)) {
            for (v, &w) in chunk.iter_mut().zip(bv) {
                *v += w;
            }
        }
        Ok(self.push(y, Op::Add { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, x: NodeId, s: T) -> NodeId {
        let y = self.value(x).map(|v| v * s);
        self.push(y, Op::Scale { x, s }, &[x])
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, x: NodeId, c: Vec<T>) -> Result<NodeId> {
        let xv = self.value(x);
        if c.len() != xv.numel() {
            return Err(mismatch(xv.shape(), &[c.len()]));
        }
        let data = xv.data().iter().zip(&c).map(|(&a, &b)| a * b).collect();
        let y = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(y, Op::MulConst { x, c }, &[x]))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let y = self.value(x).map(|v| v.max(T::zero()));
        self.push(y, Op::Relu(x), &[x])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let y = self.value(x).map(kernels::gelu);
        self.push(y, Op::Gelu(x), &[x])
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let y = self.value(x).map(|v| v.tanh());
        self.push(y, Op::Tanh(x), &[x])
    }

    /// Normalizes over the last dimension, then applies `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let d = *xs.last().ok_or_else(|| Error::validation("layer_norm on a scalar"))?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(mismatch(&[d], self.shape(gamma)));
        }
        let xv = self.value(x).data();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let rows = xv.len() / d;
        let dn = T::lit(d as f64);
        let eps = T::lit(eps);
        let mut y = Vec::with_capacity(xv.len());
        let mut means = Vec::with_capacity(rows);
        let mut rstds = Vec::with_capacity(rows);
        for row in xv.chunks_exact(d) {
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let rstd = (var + eps).sqrt().recip();
            for k in 0..d {
                y.push((row[k] - mean) * rstd * gv[k] + bv[k]);
            }
            means.push(mean);
            rstds.push(rstd);
        }
        let t = Tensor::new(xs, y)?;
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean: means,
                rstd: rstds,
            },
            &[x, gamma, beta],
        ))
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let d = *xv.shape().last().expect("rank >= 1");
        let mut y = xv.clone();
        for row in y.data_mut().chunks_exact_mut(d.max(1)) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v = *v / s;
            }
        }
        self.push(y, Op::Softmax(x), &[x])
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let y = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push(y, Op::Reshape(x), &[x]))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: NodeId, perm: &[usize]) -> Result<NodeId> {
        let xv = self.value(x);
        let mut seen = vec![false; perm.len()];
        if perm.len() != xv.shape().len() || perm.iter().any(|&p| p >= perm.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::validation(format!("invalid permutation {perm:?}")));
        }
        let (shape, data) = kernels::permute(xv.data(), xv.shape(), perm);
        let y = Tensor::new(shape, data)?;
        Ok(self.push(
            y,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
            &[x],
        ))
    }

    pub fn concat(&mut self, xs: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = self
            .shape(*xs.first().ok_or_else(|| Error::validation("concat of nothing"))?)
            .to_vec();
        if axis >= first.len() {
            return Err(Error::validation("concat axis out of range"));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            if s.len() != first.len()
                || s.iter().zip(&first).enumerate().any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(mismatch(&first, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut y = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let len = self.shape(x)[axis] * inner;
                y.extend_from_slice(&self.value(x).data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let t = Tensor::new(shape, y)?;
        Ok(self.push(
            t,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            xs,
        ))
    }

    /// Slice `start..start + len` along `axis`.
    pub fn narrow(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if axis >= xs.len() || start + len > xs[axis] {
            return Err(Error::validation(format!(
                "narrow {start}+{len} on axis {axis} of {xs:?}"
            )));
        }
        let (outer, full, inner) = split_axis(&xs, axis);
        let xv = self.value(x).data();
        let mut y = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            y.extend_from_slice(&xv[base..base + len * inner]);
        }
        let mut shape = xs;
        shape[axis] = len;
        let t = Tensor::new(shape, y)?;
        Ok(self.push(t, Op::Narrow { x, axis, start }, &[x]))
    }

    /// Mean over `axis`, which is removed from the shape.
    pub fn mean_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if axis >= xs.len() || xs[axis] == 0 {
            return Err(Error::validation("mean over an empty or missing axis"));
        }
        let (outer, len, inner) = split_axis(&xs, axis);
        let xv = self.value(x).data();
        let scale = T::lit(len as f64).recip();
        let mut y = vec![T::zero(); outer * inner];
        for o in 0..outer {
            let dst = &mut y[o * inner..(o + 1) * inner];
            for l in 0..len {
                let src = &xv[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
            for d in dst.iter_mut() {
                *d *= scale;
            }
        }
        let mut shape = xs;
        shape.remove(axis);
        let t = Tensor::new(shape, y)?;
        Ok(self.push(t, Op::Mean { x, axis }, &[x]))
    }

    /// Repeats `x` along a new leading axis of size `n`.
    pub fn expand(&mut self, x: NodeId, n: usize) -> NodeId {
        let xv = self.value(x);
        let mut shape = vec![n];
        shape.extend_from_slice(xv.shape());
        let mut data = Vec::with_capacity(n * xv.numel());
        for _ in 0..n {
            data.extend_from_slice(xv.data());
        }
        let t = Tensor::new(shape, data).expect("consistent size");
        self.push(t, Op::Expand(x), &[x])
    }

    /// Mean squared error between equally sized tensors.
    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.numel() != t.numel() || p.numel() == 0 {
            return Err(mismatch(p.shape(), t.shape()));
        }
        let s: T = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        let loss = Tensor::scalar(s / T::lit(p.numel() as f64));
        Ok(self.push(loss, Op::Mse { pred, target }, &[pred, target]))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::SumAll(x), &[x])
    }

    /// `sum(x * c)` for a constant `c`.
    pub fn dot_const(&mut self, x: NodeId, c: Vec<T>) -> Result<NodeId> {
        let xv = self.value(x);
        if c.len() != xv.numel() {
            return Err(mismatch(xv.shape(), &[c.len()]));
        }
        let s = xv.data().iter().zip(&c).map(|(&a, &b)| a * b).sum();
        Ok(self.push(Tensor::scalar(s), Op::DotConst { x, c }, &[x]))
    }

    /// Reverse pass from a single-element node.
    pub fn backward(&self, loss: NodeId) -> Result<Grads<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::validation("backward needs a scalar loss"));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape().to_vec(), T::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].grad {
                grads[i] = None;
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(dy);
            } else {
                self.backprop(NodeId(i), &dy, &mut grads);
            }
        }
        Ok(Grads {
            by_node: grads,
            params: self.param_nodes.clone(),
        })
    }

    fn backprop(&self, id: NodeId, dy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let y = self.value(id);
        let dyv = dy.data();
        match &self.nodes[id.0].op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (x, w) = (*x, *w);
                let xv = self.value(x);
                let ws = self.shape(w);
                let (inn, out) = (ws[0], ws[1]);
                let rows = xv.numel() / inn.max(1);
                let dym = MatView::row_major(dyv, rows, out);
                if self.requires(x) {
                    let mut dx = Tensor::zeros(xv.shape().to_vec());
                    gemm(
                        T::one(),
                        dym,
                        MatView::row_major(self.value(w).data(), inn, out).t(),
                        T::zero(),
                        dx.data_mut(),
                        inn,
                        1,
                    );
                    accumulate(grads, x, dx);
                }
                if self.requires(w) {
                    let mut dw = Tensor::zeros(vec![inn, out]);
                    gemm(
                        T::one(),
                        MatView::row_major(xv.data(), rows, inn).t(),
                        dym,
                        T::zero(),
                        dw.data_mut(),
                        out,
                        1,
                    );
                    accumulate(grads, w, dw);
                }
                if let Some(b) = *b {
                    if self.requires(b) {
                        let mut db = Tensor::zeros(vec![out]);
                        for r in dyv.chunks_exact(out) {
                            for (d, &g) in db.data_mut().iter_mut().zip(r) {
                                *d += g;
                            }
                        }
                        accumulate(grads, b, db);
                    }
                }
            }
            Op::BatchMatMul { a, b, trans_b } => {
                let (a, b, trans_b) = (*a, *b, *trans_b);
                let sa = self.shape(a).to_vec();
                let sb = self.shape(b).to_vec();
                let (bs, m, k) = (sa[0], sa[1], sa[2]);
                let n = y.shape()[2];
                let (av, bv) = (self.value(a).data(), self.value(b).data());
                let bmat = |i: usize| {
                    if trans_b {
                        MatView::row_major(&bv[i * n * k..(i + 1) * n * k], n, k).t()
                    } else {
                        MatView::row_major(&bv[i * k * n..(i + 1) * k * n], k, n)
                    }
                };
                if self.requires(a) {
                    let mut da = Tensor::zeros(sa.clone());
                    for i in 0..bs {
                        gemm(
                            T::one(),
                            MatView::row_major(&dyv[i * m * n..(i + 1) * m * n], m, n),
                            bmat(i).t(),
                            T::zero(),
                            &mut da.data_mut()[i * m * k..(i + 1) * m * k],
                            k,
                            1,
                        );
                    }
                    accumulate(grads, a, da);
                }
                if self.requires(b) {
                    let mut db = Tensor::zeros(sb);
                    for i in 0..bs {
                        let am = MatView::row_major(&av[i * m * k..(i + 1) * m * k], m, k);
                        let dym = MatView::row_major(&dyv[i * m * n..(i + 1) * m * n], m, n);
                        let dst = &mut db.data_mut()[i * k * n..(i + 1) * k * n];
                        if trans_b {
                            gemm(T::one(), dym.t(), am, T::zero(), dst, k, 1);
                        } else {
                            gemm(T::one(), am.t(), dym, T::zero(), dst, n, 1);
                        }
                    }
                    accumulate(grads, b, db);
                }
            }
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                chunk,
            } => {
                let (x, w) = (*x, *w);
                let n = self.shape(x)[0];
                let o = self.shape(w)[0];
                let (p, ckk, chw) = (geom.out_pixels(), geom.ckk(), geom.c * geom.in_pixels());
                let wv = self.value(w).data();
                let mut dw = self.requires(w).then(|| Tensor::zeros(self.shape(w).to_vec()));
                let mut dx = self.requires(x).then(|| Tensor::zeros(self.shape(x).to_vec()));
                let xv = self.value(x).data();
                let mut cbuf = Vec::new();
                let mut n0 = 0;
                while n0 < n {
                    let nb = (*chunk).min(n - n0);
                    let width = nb * p;
                    let mut dyc = vec![T::zero(); o * width];
                    for oc in 0..o {
                        for i in 0..nb {
                            dyc[oc * width + i * p..oc * width + (i + 1) * p]
                                .copy_from_slice(&dyv[((n0 + i) * o + oc) * p..((n0 + i) * o + oc + 1) * p]);
                        }
                    }
                    let dym = MatView::row_major(&dyc, o, width);
                    if let Some(dw) = dw.as_mut() {
                        // Columns are rebuilt rather than kept from the forward pass.
                        cbuf.clear();
                        cbuf.resize(ckk * width, T::zero());
                        kernels::im2col(&xv[n0 * chw..(n0 + nb) * chw], nb, geom, &mut cbuf);
                        gemm(
                            T::one(),
                            dym,
                            MatView::row_major(&cbuf, ckk, width).t(),
                            T::one(),
                            dw.data_mut(),
                            ckk,
                            1,
                        );
                    }
                    if let Some(dx) = dx.as_mut() {
                        let mut dcols = vec![T::zero(); ckk * width];
                        gemm(
                            T::one(),
                            MatView::row_major(wv, o, ckk).t(),
                            dym,
                            T::zero(),
                            &mut dcols,
                            width,
                            1,
                        );
                        kernels::col2im(&dcols, nb, geom, &mut dx.data_mut()[n0 * chw..(n0 + nb) * chw]);
                    }
                    n0 += nb;
                }
                if let Some(dw) = dw {
                    accumulate(grads, w, dw);
                }
                if let Some(dx) = dx {
                    accumulate(grads, x, dx);
                }
                if let Some(b) = *b {
                    if self.requires(b) {
                        accumulate(grads, b, channel_sums(dyv, n, o, p));
                    }
                }
            }
            Op::ConvTranspose2x2 { x, w, b } => {
                let (x, w) = (*x, *w);
                let xs = self.shape(x).to_vec();
                let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
                let o = self.shape(w)[1];
                let (hw, o4, h2, w2) = (h * wd, o * 4, 2 * h, 2 * wd);
                let xv = self.value(x).data();
                let wv = self.value(w).data();
                let mut dw = self.requires(w).then(|| Tensor::zeros(self.shape(w).to_vec()));
                let mut dx = self.requires(x).then(|| Tensor::zeros(xs.clone()));
                let mut dtmp = vec![T::zero(); hw * o4];
                for img in 0..n {
                    let dyn_ = &dyv[img * o * h2 * w2..(img + 1) * o * h2 * w2];
                    for i in 0..h {
                        for j in 0..wd {
                            let row = &mut dtmp[(i * wd + j) * o4..(i * wd + j + 1) * o4];
                            for oc in 0..o {
                                for a in 0..2 {
                                    for bb in 0..2 {
                                        row[oc * 4 + a * 2 + bb] =
                                            dyn_[(oc * h2 + 2 * i + a) * w2 + 2 * j + bb];
                                    }
                                }
                            }
                        }
                    }
                    let dm = MatView::row_major(&dtmp, hw, o4);
                    if let Some(dx) = dx.as_mut() {
                        let dst = &mut dx.data_mut()[img * c * hw..(img + 1) * c * hw];
                        gemm(T::one(), dm, MatView::row_major(wv, c, o4).t(), T::zero(), dst, 1, hw);
                    }
                    if let Some(dw) = dw.as_mut() {
                        let xn = &xv[img * c * hw..(img + 1) * c * hw];
                        gemm(T::one(), MatView::row_major(xn, c, hw), dm, T::one(), dw.data_mut(), o4, 1);
                    }
                }
                if let Some(dw) = dw {
                    accumulate(grads, w, dw);
                }
                if let Some(dx) = dx {
                    accumulate(grads, x, dx);
                }
                if let Some(b) = *b {
                    if self.requires(b) {
                        accumulate(grads, b, channel_sums(dyv, n, o, h2 * w2));
                    }
                }
            }
            Op::MaxPool2 { x, argmax } => {
                if self.requires(*x) {
                    let mut dx = Tensor::zeros(self.shape(*x).to_vec());
                    let d = dx.data_mut();
                    for (&k, &g) in argmax.iter().zip(dyv) {
                        d[k as usize] += g;
                    }
                    accumulate(grads, *x, dx);
                }
            }
            Op::Add { a, b } => {
                if self.requires(*a) {
                    accumulate(grads, *a, dy.clone());
                }
                if self.requires(*b) {
                    let mut db = Tensor::zeros(self.shape(*b).to_vec());
                    let len = db.numel().max(1);
                    for chunk in dyv.chunks_exact(len) {
                        for (d, &g) in db.data_mut().iter_mut().zip(chunk) {
                            *d += g;
                        }
                    }
                    accumulate(grads, *b, db);
                }
            }
            Op::Scale { x, s } => {
                if self.requires(*x) {
                    accumulate(grads, *x, dy.map(|g| g * *s));
                }
            }
            Op::MulConst { x, c } => {
                if self.requires(*x) {
                    let data = dyv.iter().zip(c).map(|(&g, &m)| g * m).collect();
                    accumulate(grads, *x, Tensor::new(dy.shape().to_vec(), data).expect("same size"));
                }
            }
            Op::Relu(x) => {
                if self.requires(*x) {
                    let data = dyv
                        .iter()
                        .zip(y.data())
                        .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                        .collect();
                    accumulate(grads, *x, Tensor::new(dy.shape().to_vec(), data).expect("same size"));
                }
            }
            Op::Gelu(x) => {
                if self.requires(*x) {
                    let data = dyv
                        .iter()
                        .zip(self.value(*x).data())
                        .map(|(&g, &v)| g * kernels::gelu_grad(v))
                        .collect();
                    accumulate(grads, *x, Tensor::new(dy.shape().to_vec(), data).expect("same size"));
                }
            }
            Op::Tanh(x) => {
                if self.requires(*x) {
                    let data = dyv
                        .iter()
                        .zip(y.data())
                        .map(|(&g, &v)| g * (T::one() - v * v))
                        .collect();
                    accumulate(grads, *x, Tensor::new(dy.shape().to_vec(), data).expect("same size"));
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                rstd,
            } => {
                let (x, gamma, beta) = (*x, *gamma, *beta);
                let xv = self.value(x).data();
                let gv = self.value(gamma).data();
                let d = gv.len();
                let dn = T::lit(d as f64);
                let mut dx = self.requires(x).then(|| Tensor::zeros(self.shape(x).to_vec()));
                let mut dg = vec![T::zero(); d];
                let mut db = vec![T::zero(); d];
                let mut xhat = vec![T::zero(); d];
                let mut dxhat = vec![T::zero(); d];
                for (r, (row, grow)) in xv.chunks_exact(d).zip(dyv.chunks_exact(d)).enumerate() {
                    let (mu, rs) = (mean[r], rstd[r]);
                    let mut s1 = T::zero();
                    let mut s2 = T::zero();
                    for k in 0..d {
                        xhat[k] = (row[k] - mu) * rs;
                        dxhat[k] = grow[k] * gv[k];
                        s1 += dxhat[k];
                        s2 += dxhat[k] * xhat[k];
                        dg[k] += grow[k] * xhat[k];
                        db[k] += grow[k];
                    }
                    if let Some(dx) = dx.as_mut() {
                        let (m1, m2) = (s1 / dn, s2 / dn);
                        let out = &mut dx.data_mut()[r * d..(r + 1) * d];
                        for k in 0..d {
                            out[k] = rs * (dxhat[k] - m1 - xhat[k] * m2);
                        }
                    }
                }
                if let Some(dx) = dx {
                    accumulate(grads, x, dx);
                }
                if self.requires(gamma) {
                    accumulate(grads, gamma, Tensor::new(vec![d], dg).expect("d"));
                }
                if self.requires(beta) {
                    accumulate(grads, beta, Tensor::new(vec![d], db).expect("d"));
                }
            }
            Op::Softmax(x) => {
                if self.requires(*x) {
                    let d = *y.shape().last().expect("rank >= 1");
                    let mut dx = Vec::with_capacity(dyv.len());
                    for (yr, gr) in y.data().chunks_exact(d).zip(dyv.chunks_exact(d)) {
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        dx.extend(yr.iter().zip(gr).map(|(&a, &b)| a * (b - dot)));
                    }
                    accumulate(grads, *x, Tensor::new(dy.shape().to_vec(), dx).expect("same size"));
                }
            }
            Op::Reshape(x) => {
                if self.requires(*x) {
                    let g = dy.clone().reshape(self.shape(*x).to_vec()).expect("same size");
                    accumulate(grads, *x, g);
                }
            }
            Op::Permute { x, perm } => {
                if self.requires(*x) {
                    let (shape, data) = kernels::permute(dyv, dy.shape(), &kernels::inverse_perm(perm));
                    accumulate(grads, *x, Tensor::new(shape, data).expect("same size"));
                }
            }
            Op::Concat { xs, axis } => {
                let (outer, _, inner) = split_axis(y.shape(), *axis);
                let total = y.shape()[*axis];
                let mut offset = 0;
                for &x in xs {
                    let len = self.shape(x)[*axis];
                    if self.requires(x) {
                        let mut data = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            data.extend_from_slice(&dyv[base..base + len * inner]);
                        }
                        accumulate(grads, x, Tensor::new(self.shape(x).to_vec(), data).expect("same size"));
                    }
                    offset += len;
                }
            }
            Op::Narrow { x, axis, start } => {
                if self.requires(*x) {
                    let xs = self.shape(*x);
                    let (outer, full, inner) = split_axis(xs, *axis);
                    let len = y.shape()[*axis];
                    let mut dx = Tensor::zeros(xs.to_vec());
                    for o in 0..outer {
                        let base = (o * full + start) * inner;
                        dx.data_mut()[base..base + len * inner]
                            .copy_from_slice(&dyv[o * len * inner..(o + 1) * len * inner]);
                    }
                    accumulate(grads, *x, dx);
                }
            }
            Op::Mean { x, axis } => {
                if self.requires(*x) {
                    let xs = self.shape(*x);
                    let (outer, len, inner) = split_axis(xs, *axis);
                    let scale = T::lit(len as f64).recip();
                    let mut dx = Tensor::zeros(xs.to_vec());
                    for o in 0..outer {
                        let g = &dyv[o * inner..(o + 1) * inner];
                        for l in 0..len {
                            let dst = &mut dx.data_mut()[(o * len + l) * inner..(o * len + l + 1) * inner];
                            for (d, &v) in dst.iter_mut().zip(g) {
                                *d = v * scale;
                            }
                        }
                    }
                    accumulate(grads, *x, dx);
                }
            }
            Op::Expand(x) => {
                if self.requires(*x) {
                    let mut dx = Tensor::zeros(self.shape(*x).to_vec());
                    let len = dx.numel().max(1);
                    for chunk in dyv.chunks_exact(len) {
                        for (d, &g) in dx.data_mut().iter_mut().zip(chunk) {
                            *d += g;
                        }
                    }
                    accumulate(grads, *x, dx);
                }
            }
            Op::Mse { pred, target } => {
                let (p, t) = (self.value(*pred), self.value(*target));
                let k = T::lit(2.0 / p.numel() as f64) * dyv[0];
                let diff: Vec<T> = p.data().iter().zip(t.data()).map(|(&a, &b)| k * (a - b)).collect();
                if self.requires(*target) {
                    let neg = diff.iter().map(|&v| -v).collect();
                    accumulate(grads, *target, Tensor::new(t.shape().to_vec(), neg).expect("same size"));
                }
                if self.requires(*pred) {
                    accumulate(grads, *pred, Tensor::new(p.shape().to_vec(), diff).expect("same size"));
                }
            }
            Op::SumAll(x) => {
                if self.requires(*x) {
                    accumulate(grads, *x, Tensor::full(self.shape(*x).to_vec(), dyv[0]));
                }
            }
            Op::DotConst { x, c } => {
                if self.requires(*x) {
                    let data = c.iter().map(|&v| v * dyv[0]).collect();
                    accumulate(grads, *x, Tensor::new(self.shape(*x).to_vec(), data).expect("same size"));
                }
            }
        }
    }
}

fn channel_sums<T: Float>(dy: &[T], n: usize, o: usize, p: usize) -> Tensor<T> {
    let mut db = vec![T::zero(); o];
    for img in 0..n {
        for (oc, d) in db.iter_mut().enumerate() {
            *d += dy[(img * o + oc) * p..(img * o + oc + 1) * p].iter().copied().sum::<T>();
        }
    }
    Tensor::new(vec![o], db).expect("o")
}
