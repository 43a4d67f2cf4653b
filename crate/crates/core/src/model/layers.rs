use rand::{Rng, RngCore};

use super::attention::{Attention, MultiHeadAttention};
use crate::error::Result;
use crate::nn::{kaiming_uniform, uniform, Float, Graph, NodeId, ParamId, ParamStore, Tensor};

/// Dense layer, weight stored `[in, out]`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        inputs: usize,
        outputs: usize,
    ) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        Self {
            w: store.add(format!("{name}.weight"), uniform(rng, &[inputs, outputs], bound)),
            b: store.add(format!("{name}.bias"), Tensor::zeros(vec![outputs])),
        }
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<'_, T>, x: NodeId) -> Result<NodeId> {
        let (w, b) = (g.param(self.w), g.param(self.b));
        g.linear(x, w, Some(b))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        inputs: usize,
        outputs: usize,
        kernel: usize,
        stride: usize,
        gain: f64,
    ) -> Self {
        let mut w: Tensor<T> = kaiming_uniform(rng, &[outputs, inputs, kernel, kernel], inputs * kernel * kernel);
        if gain != 1.0 {
            w = w.map(|v| v * T::lit(gain));
        }
        Self {
            w: store.add(format!("{name}.weight"), w),
            b: store.add(format!("{name}.bias"), Tensor::zeros(vec![outputs])),
            stride,
            pad: kernel / 2,
        }
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<'_, T>, x: NodeId) -> Result<NodeId> {
        let (w, b) = (g.param(self.w), g.param(self.b));
        g.conv2d(x, w, Some(b), self.stride, self.pad)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(vec![dim], T::one())),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(vec![dim])),
        }
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<'_, T>, x: NodeId) -> Result<NodeId> {
        let (gm, bt) = (g.param(self.gamma), g.param(self.beta));
        g.layer_norm(x, gm, bt, 1e-5)
    }
}

/// Inverted dropout; a no-op without a random source.
pub struct Dropout<'r> {
    pub p: f64,
    pub rng: Option<&'r mut dyn RngCore>,
}

impl<'r> Dropout<'r> {
    pub fn eval() -> Self {
        Self { p: 0.0, rng: None }
    }

    pub fn train(p: f64, rng: &'r mut dyn RngCore) -> Self {
        Self { p, rng: Some(rng) }
    }

    pub fn apply<T: Float>(&mut self, g: &mut Graph<'_, T>, x: NodeId) -> Result<NodeId> {
        let p = self.p;
        let Some(rng) = self.rng.as_deref_mut() else {
            return Ok(x);
        };
        if p <= 0.0 {
            return Ok(x);
        }
        let keep = T::lit(1.0 / (1.0 - p));
        let mask = (0..g.value(x).numel())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        g.mul_const(x, mask)
    }
}

/// Pre-normalization encoder layer.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

impl TransformerBlock {
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        dim: usize,
        heads: usize,
        ff: usize,
    ) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), dim),
            attn: MultiHeadAttention::new(store, rng, &format!("{name}.attn"), dim, heads)?,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), dim),
            ff1: Linear::new(store, rng, &format!("{name}.ff1"), dim, ff),
            ff2: Linear::new(store, rng, &format!("{name}.ff2"), ff, dim),
        })
    }

    pub fn forward<T: Float>(
        &self,
        g: &mut Graph<'_, T>,
        x: NodeId,
        drop: &mut Dropout<'_>,
    ) -> Result<(NodeId, NodeId)> {
        let h = self.ln1.forward(g, x)?;
        let Attention { output, weights } = self.attn.forward(g, h)?;
        let a = drop.apply(g, output)?;
        let x = g.add(x, a)?;
        let h = self.ln2.forward(g, x)?;
        let h = self.ff1.forward(g, h)?;
        let h = g.gelu(h);
        let h = self.ff2.forward(g, h)?;
        let h = drop.apply(g, h)?;
        Ok((g.add(x, h)?, weights))
    }
}

/// Stack of encoder layers with a final normalization.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub blocks: Vec<TransformerBlock>,
    pub norm: LayerNorm,
}

impl Encoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        dim: usize,
        heads: usize,
        ff: usize,
        layers: usize,
    ) -> Result<Self> {
        let blocks = (0..layers)
            .map(|i| TransformerBlock::new(store, rng, &format!("{name}.layer{i}"), dim, heads, ff))
            .collect::<Result<_>>()?;
        Ok(Self {
            blocks,
            norm: LayerNorm::new(store, &format!("{name}.norm"), dim),
        })
    }

    /// Returns the normalized tokens and every layer's attention weights.
    pub fn forward<T: Float>(
        &self,
        g: &mut Graph<'_, T>,
        mut x: NodeId,
        drop: &mut Dropout<'_>,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        let mut weights = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, w) = block.forward(g, x, drop)?;
            x = y;
            weights.push(w);
        }
        Ok((self.norm.forward(g, x)?, weights))
    }
}

/// Basic residual block: two 3x3 convolutions and an identity or 1x1 skip.
#[derive(Debug, Clone)]
pub struct ResBlock {
    pub conv1: Conv,
    pub conv2: Conv,
    pub skip: Option<Conv>,
}

impl ResBlock {
    pub fn forward<T: Float>(&self, g: &mut Graph<'_, T>, x: NodeId) -> Result<NodeId> {
        let h = self.conv1.forward(g, x)?;
        let h = g.relu(h);
        let h = self.conv2.forward(g, h)?;
        let s = match &self.skip {
            Some(c) => c.forward(g, x)?,
            None => x,
        };
        let y = g.add(h, s)?;
        Ok(g.relu(y))
    }
}

/// Frame encoder: strided stem, residual stages that halve the resolution,
/// global average pooling and a linear projection.
#[derive(Debug, Clone)]
pub struct ResNet {
    pub stem: Conv,
    pub blocks: Vec<ResBlock>,
    pub proj: Linear,
    pub channels: usize,
}

impl ResNet {
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        channels: &[usize],
        blocks_per_stage: usize,
        out_dim: usize,
    ) -> Self {
        let stem = Conv::new(store, rng, "resnet.stem", 1, channels[0], 3, 2, 1.0);
        let mut blocks = Vec::new();
        let mut cin = channels[0];
        for (s, &c) in channels.iter().enumerate() {
            for b in 0..blocks_per_stage {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                let name = format!("resnet.stage{s}.block{b}");
                let skip = (stride != 1 || cin != c)
                    .then(|| Conv::new(store, rng, &format!("{name}.skip"), cin, c, 1, stride, 1.0));
                blocks.push(ResBlock {
                    conv1: Conv::new(store, rng, &format!("{name}.conv1"), cin, c, 3, stride, 1.0),
                    // Small residual branches at initialization keep the
                    // unnormalized stack well conditioned.
                    conv2: Conv::new(store, rng, &format!("{name}.conv2"), c, c, 3, 1, 0.1),
                    skip,
                });
                cin = c;
            }
        }
        Self {
            stem,
            blocks,
            proj: Linear::new(store, rng, "resnet.proj", cin, out_dim),
            channels: cin,
        }
    }

    /// `x[N, 1, H, W] -> [N, out_dim]`.
    pub fn forward<T: Float>(&self, g: &mut Graph<'_, T>, x: NodeId) -> Result<NodeId> {
        let h = self.stem.forward(g, x)?;
        let mut h = g.relu(h);
        for b in &self.blocks {
            h = b.forward(g, h)?;
        }
        let s = g.shape(h).to_vec();
        let h = g.reshape(h, &[s[0], s[1], s[2] * s[3]])?;
        let pooled = g.mean_axis(h, 2)?;
        self.proj.forward(g, pooled)
    }
}

/// Fully connected head from a token to a `size x size` image in `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct SdfDecoder {
    pub fc1: Linear,
    pub fc2: Linear,
    pub size: usize,
}

impl SdfDecoder {
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        dim: usize,
        hidden: usize,
        size: usize,
    ) -> Self {
        Self {
            fc1: Linear::new(store, rng, "decoder.fc1", dim, hidden),
            fc2: Linear::new(store, rng, "decoder.fc2", hidden, size * size),
            size,
        }
    }

    /// `x[B, dim] -> [B, size, size]`.
    pub fn forward<T: Float>(&self, g: &mut Graph<'_, T>, x: NodeId) -> Result<NodeId> {
        let b = g.shape(x)[0];
        let h = self.fc1.forward(g, x)?;
        let h = g.gelu(h);
        let h = self.fc2.forward(g, h)?;
        let h = g.tanh(h);
        g.reshape(h, &[b, self.size, self.size])
    }
}
