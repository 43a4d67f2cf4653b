use rand::Rng;

use super::layers::Linear;
use crate::error::{Error, Result};
use crate::nn::{Float, Graph, NodeId, ParamStore, Tensor};

/// Output of an attention layer together with its softmax weights.
#[derive(Debug, Clone, Copy)]
pub struct Attention {
    pub output: NodeId,
    /// `[batch * heads, queries, keys]`, rows summing to one.
    pub weights: NodeId,
}

/// `softmax(q k^T / sqrt(d)) v` for `q[B, Lq, d]`, `k[B, Lk, d]`, `v[B, Lk, dv]`.
pub fn scaled_dot_attention<T: Float>(g: &mut Graph<'_, T>, q: NodeId, k: NodeId, v: NodeId) -> Result<Attention> {
    let d = *g.shape(q).last().ok_or_else(|| Error::validation("rank-0 query"))?;
    if g.shape(k).last() != Some(&d) {
        return Err(Error::ShapeMismatch {
            expected: g.shape(q).to_vec(),
            actual: g.shape(k).to_vec(),
        });
    }
    let scores = g.batch_matmul(q, k, true)?;
    let scores = g.scale(scores, T::lit(1.0 / (d as f64).sqrt()));
    let weights = g.softmax(scores);
    let output = g.batch_matmul(weights, v, false)?;
    Ok(Attention { output, weights })
}

/// Single-head attention on plain `L x d` matrices.
pub fn self_attention<T: Float>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
    let as3 = |t: &Tensor<T>| -> Result<Tensor<T>> {
        match *t.shape() {
            [r, c] => t.clone().reshape(vec![1, r, c]),
            _ => Err(Error::validation(format!("expected a matrix, got shape {:?}", t.shape()))),
        }
    };
    let mut g = Graph::detached();
    let (qi, ki, vi) = (g.input(as3(q)?), g.input(as3(k)?), g.input(as3(v)?));
    let a = scaled_dot_attention(&mut g, qi, ki, vi)?;
    let out = g.value(a.output);
    out.clone().reshape(out.shape()[1..].to_vec())
}

/// Multi-head self-attention with a fused input projection.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub dim: usize,
    pub qkv: Linear,
    pub out: Linear,
}

impl MultiHeadAttention {
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        dim: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::validation(format!(
                "token dimension {dim} is not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            heads,
            dim,
            qkv: Linear::new(store, rng, &format!("{name}.qkv"), dim, 3 * dim),
            out: Linear::new(store, rng, &format!("{name}.out"), dim, dim),
        })
    }

    /// `x[B, N, dim] -> [B, N, dim]`.
    pub fn forward<T: Float>(&self, g: &mut Graph<'_, T>, x: NodeId) -> Result<Attention> {
        let (b, n) = match *g.shape(x) {
            [b, n, d] if d == self.dim => (b, n),
            _ => {
                return Err(Error::ShapeMismatch {
                    expected: vec![0, 0, self.dim],
                    actual: g.shape(x).to_vec(),
                })
            }
        };
        let (h, dk) = (self.heads, self.dim / self.heads);
        let qkv = self.qkv.forward(g, x)?;
        let split = |g: &mut Graph<'_, T>, part: usize| -> Result<NodeId> {
            let t = g.narrow(qkv, 2, part * self.dim, self.dim)?;
            let t = g.reshape(t, &[b, n, h, dk])?;
            let t = g.permute(t, &[0, 2, 1, 3])?;
            g.reshape(t, &[b * h, n, dk])
        };
        let q = split(g, 0)?;
        let k = split(g, 1)?;
        let v = split(g, 2)?;
        let a = scaled_dot_attention(g, q, k, v)?;
        let y = g.reshape(a.output, &[b, h, n, dk])?;
        let y = g.permute(y, &[0, 2, 1, 3])?;
        let y = g.reshape(y, &[b, n, self.dim])?;
        Ok(Attention {
            output: self.out.forward(g, y)?,
            weights: a.weights,
        })
    }
}
