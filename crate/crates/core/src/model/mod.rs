//! Cross-section regressors: the temporal transformer and the two
//! single-image baselines (U-Net and ViT). All map a `[B, L, S, S]` stack of
//! normalized frames to `[B, S, S]` signed-distance images in `[-1, 1]`;
//! the baselines first average the stack over time.

mod attention;
mod checkpoint;
mod layers;

pub use attention::{scaled_dot_attention, self_attention, Attention, MultiHeadAttention};
pub use checkpoint::{Checkpoint, TrainingMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use layers::{Conv, Dropout, Encoder, LayerNorm, Linear, ResNet, SdfDecoder, TransformerBlock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{kaiming_uniform, normal, Float, Graph, NodeId, ParamId, ParamStore, Tensor};

/// Sinusoidal code of a sequence position: `sin` on even entries, `cos` on odd.
pub fn positional_encoding(index: usize, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|j| {
            let i2 = (j - j % 2) as f64;
            let angle = index as f64 / 10000f64.powf(i2 / dim as f64);
            if j % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemporalConfig {
    pub image_size: usize,
    /// Width of every token, frame embedding plus positional code.
    pub token_dim: usize,
    pub pos_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub feed_forward_dim: usize,
    pub dropout: f64,
    pub resnet_channels: Vec<usize>,
    pub blocks_per_stage: usize,
    pub decoder_hidden: usize,
    pub readout_init_std: f64,
}

impl Default for TemporalConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            token_dim: 256,
            pos_dim: 32,
            heads: 4,
            layers: 4,
            feed_forward_dim: 1024,
            dropout: 0.1,
            resnet_channels: vec![16, 32, 64, 128],
            blocks_per_stage: 2,
            decoder_hidden: 1024,
            readout_init_std: 0.02,
        }
    }
}

impl TemporalConfig {
    pub fn embed_dim(&self) -> usize {
        self.token_dim - self.pos_dim
    }

    fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.token_dim.is_multiple_of(self.heads) {
            return Err(Error::validation(format!(
                "token_dim {} is not divisible by {} heads",
                self.token_dim, self.heads
            )));
        }
        if !self.pos_dim.is_multiple_of(2) || self.pos_dim >= self.token_dim {
            return Err(Error::validation("pos_dim must be even and below token_dim"));
        }
        check_common(self.image_size, self.dropout)?;
        if self.resnet_channels.is_empty() || self.resnet_channels.contains(&0) || self.blocks_per_stage == 0 {
            return Err(Error::validation("resnet needs at least one non-empty stage"));
        }
        if self.feed_forward_dim == 0 || self.decoder_hidden == 0 {
            return Err(Error::validation("hidden sizes must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UNetConfig {
    pub image_size: usize,
    pub channels: Vec<usize>,
    pub kernel: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            channels: vec![64, 128, 256, 512, 1024],
            kernel: 5,
        }
    }
}

impl UNetConfig {
    fn validate(&self) -> Result<()> {
        check_common(self.image_size, 0.0)?;
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::validation("u-net needs at least one level"));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::validation("u-net kernel must be odd"));
        }
        let f = 1usize << (self.channels.len() - 1);
        if !self.image_size.is_multiple_of(f) {
            return Err(Error::validation(format!(
                "image size {} is not divisible by {f}",
                self.image_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VitConfig {
    pub image_size: usize,
    pub patch: usize,
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub feed_forward_dim: usize,
    pub dropout: f64,
    pub decoder_hidden: usize,
}

impl Default for VitConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            patch: 16,
            dim: 768,
            heads: 12,
            layers: 12,
            feed_forward_dim: 3072,
            dropout: 0.1,
            decoder_hidden: 1024,
        }
    }
}

impl VitConfig {
    pub fn patches(&self) -> usize {
        let n = self.image_size / self.patch.max(1);
        n * n
    }

    fn validate(&self) -> Result<()> {
        check_common(self.image_size, self.dropout)?;
        if self.patch == 0 || !self.image_size.is_multiple_of(self.patch) {
            return Err(Error::validation("image size must be a multiple of the patch size"));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::validation(format!(
                "dim {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        Ok(())
    }
}

fn check_common(image_size: usize, dropout: f64) -> Result<()> {
    if image_size < 2 {
        return Err(Error::validation("image size must be at least 2"));
    }
    if !(0.0..1.0).contains(&dropout) {
        return Err(Error::validation("dropout must lie in [0, 1)"));
    }
    Ok(())
}

/// Architecture and its hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "architecture", rename_all = "snake_case")]
pub enum ModelConfig {
    Temporal(TemporalConfig),
    Unet(UNetConfig),
    Vit(VitConfig),
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Temporal(TemporalConfig::default())
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Temporal(c) => c.validate(),
            ModelConfig::Unet(c) => c.validate(),
            ModelConfig::Vit(c) => c.validate(),
        }
    }

    pub fn image_size(&self) -> usize {
        match self {
            ModelConfig::Temporal(c) => c.image_size,
            ModelConfig::Unet(c) => c.image_size,
            ModelConfig::Vit(c) => c.image_size,
        }
    }

    pub fn dropout(&self) -> f64 {
        match self {
            ModelConfig::Temporal(c) => c.dropout,
            ModelConfig::Unet(_) => 0.0,
            ModelConfig::Vit(c) => c.dropout,
        }
    }

    /// Whether the model sees the frames one by one (as opposed to their mean).
    pub fn is_temporal(&self) -> bool {
        matches!(self, ModelConfig::Temporal(_))
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelConfig::Temporal(_) => "temporal",
            ModelConfig::Unet(_) => "unet",
            ModelConfig::Vit(_) => "vit",
        }
    }
}

/// Result of a forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// `[B, S, S]` prediction.
    pub output: NodeId,
    /// Readout (or class) token fed to the decoder, `[B, dim]`; `None` for the U-Net.
    pub token: Option<NodeId>,
    /// Softmax weights of every attention layer.
    pub attention: Vec<NodeId>,
}

#[derive(Debug, Clone)]
struct Temporal {
    resnet: ResNet,
    readout: ParamId,
    encoder: Encoder,
    decoder: SdfDecoder,
}

#[derive(Debug, Clone, Copy)]
struct UpConv {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
struct UNet {
    down: Vec<(Conv, Conv)>,
    up: Vec<(UpConv, Conv, Conv)>,
    head: Conv,
}

#[derive(Debug, Clone)]
struct Vit {
    patch: Conv,
    class_token: ParamId,
    pos: ParamId,
    encoder: Encoder,
    decoder: SdfDecoder,
}

#[derive(Debug, Clone)]
enum Arch {
    Temporal(Temporal),
    Unet(UNet),
    Vit(Vit),
}

/// A network together with its parameters.
#[derive(Debug, Clone)]
pub struct SdfNet<T: Float> {
    config: ModelConfig,
    params: ParamStore<T>,
    arch: Arch,
}

fn build_arch<T: Float, R: Rng + ?Sized>(
    config: &ModelConfig,
    store: &mut ParamStore<T>,
    rng: &mut R,
) -> Result<Arch> {
    Ok(match config {
        ModelConfig::Temporal(c) => {
            let resnet = ResNet::new(store, rng, &c.resnet_channels, c.blocks_per_stage, c.embed_dim());
            let readout = store.add("readout", normal(rng, &[c.token_dim], c.readout_init_std));
            let encoder = Encoder::new(store, rng, "encoder", c.token_dim, c.heads, c.feed_forward_dim, c.layers)?;
            let decoder = SdfDecoder::new(store, rng, c.token_dim, c.decoder_hidden, c.image_size);
            Arch::Temporal(Temporal {
                resnet,
                readout,
                encoder,
                decoder,
            })
        }
        ModelConfig::Unet(c) => {
            let k = c.kernel;
            let mut down = Vec::new();
            let mut cin = 1;
            for (i, &ch) in c.channels.iter().enumerate() {
                down.push((
                    Conv::new(store, rng, &format!("down{i}.conv1"), cin, ch, k, 1, 1.0),
                    Conv::new(store, rng, &format!("down{i}.conv2"), ch, ch, k, 1, 1.0),
                ));
                cin = ch;
            }
            let mut up = Vec::new();
            for i in (0..c.channels.len() - 1).rev() {
                let (hi, lo) = (c.channels[i + 1], c.channels[i]);
                let w = store.add(format!("up{i}.upconv.weight"), kaiming_uniform(rng, &[hi, lo, 2, 2], hi));
                let b = store.add(format!("up{i}.upconv.bias"), Tensor::zeros(vec![lo]));
                up.push((
                    UpConv { w, b },
                    Conv::new(store, rng, &format!("up{i}.conv1"), 2 * lo, lo, k, 1, 1.0),
                    Conv::new(store, rng, &format!("up{i}.conv2"), lo, lo, k, 1, 1.0),
                ));
            }
            let head = Conv::new(store, rng, "head", c.channels[0], 1, 1, 1, 1.0);
            Arch::Unet(UNet { down, up, head })
        }
        ModelConfig::Vit(c) => {
            let mut patch = Conv::new(store, rng, "patch_embed", 1, c.dim, c.patch, c.patch, 1.0);
            patch.pad = 0;
            let class_token = store.add("class_token", normal(rng, &[c.dim], 0.02));
            let pos = store.add("pos_embed", normal(rng, &[c.patches() + 1, c.dim], 0.02));
            let encoder = Encoder::new(store, rng, "encoder", c.dim, c.heads, c.feed_forward_dim, c.layers)?;
            let decoder = SdfDecoder::new(store, rng, c.dim, c.decoder_hidden, c.image_size);
            Arch::Vit(Vit {
                patch,
                class_token,
                pos,
                encoder,
                decoder,
            })
        }
    })
}

impl<T: Float> SdfNet<T> {
    /// Randomly initialized network.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let arch = build_arch(&config, &mut params, &mut rng)?;
        Ok(Self { config, params, arch })
    }

    /// Network with the given parameters, which must match the layout
    /// implied by `config`.
    pub fn with_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        let mut net = Self::new(config, 0)?;
        net.params.load_from(&params)?;
        Ok(net)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_elements()
    }

    pub fn cast<U: Float>(&self) -> SdfNet<U> {
        SdfNet {
            config: self.config.clone(),
            params: self.params.cast(),
            arch: self.arch.clone(),
        }
    }

    fn check_input(&self, shape: &[usize]) -> Result<(usize, usize)> {
        let s = self.config.image_size();
        match *shape {
            [b, l, h, w] if b > 0 && l > 0 && h == s && w == s => Ok((b, l)),
            [_, 0, _, _] => Err(Error::EmptySequence),
            _ => Err(Error::ShapeMismatch {
                expected: vec![0, 0, s, s],
                actual: shape.to_vec(),
            }),
        }
    }

    /// Builds the forward pass for `input[B, L, S, S]` on a graph over this
    /// network's parameters.
    pub fn forward(&self, g: &mut Graph<'_, T>, input: NodeId, drop: &mut Dropout<'_>) -> Result<Forward> {
        let (b, l) = self.check_input(g.shape(input))?;
        let s = self.config.image_size();
        match (&self.arch, &self.config) {
            (Arch::Temporal(m), ModelConfig::Temporal(c)) => {
                let frames = g.reshape(input, &[b * l, 1, s, s])?;
                let emb = m.resnet.forward(g, frames)?;
                let emb = g.reshape(emb, &[b, l, c.embed_dim()])?;
                let mut pe = Vec::with_capacity(b * l * c.pos_dim);
                for _ in 0..b {
                    for i in 0..l {
                        pe.extend(positional_encoding(i, c.pos_dim).into_iter().map(T::lit));
                    }
                }
                let pe = g.input(Tensor::new(vec![b, l, c.pos_dim], pe)?);
                let tokens = g.concat(&[emb, pe], 2)?;
                let (encoded, attention) = self.encode_tokens(g, tokens, drop)?;
                let token = g.narrow(encoded, 1, l, 1)?;
                let token = g.reshape(token, &[b, c.token_dim])?;
                let output = m.decoder.forward(g, token)?;
                Ok(Forward {
                    output,
                    token: Some(token),
                    attention,
                })
            }
            (Arch::Unet(m), _) => {
                let x = g.mean_axis(input, 1)?;
                let mut h = g.reshape(x, &[b, 1, s, s])?;
                let mut skips = Vec::new();
                for (i, (c1, c2)) in m.down.iter().enumerate() {
                    if i > 0 {
                        h = g.max_pool2(h)?;
                    }
                    h = c1.forward(g, h)?;
                    h = g.relu(h);
                    h = c2.forward(g, h)?;
                    h = g.relu(h);
                    skips.push(h);
                }
                skips.pop();
                for (upc, c1, c2) in &m.up {
                    let (w, bias) = (g.param(upc.w), g.param(upc.b));
                    let u = g.conv_transpose2x2(h, w, Some(bias))?;
                    let skip = skips.pop().expect("one skip per level");
                    h = g.concat(&[u, skip], 1)?;
                    h = c1.forward(g, h)?;
                    h = g.relu(h);
                    h = c2.forward(g, h)?;
                    h = g.relu(h);
                }
                let y = m.head.forward(g, h)?;
                let y = g.tanh(y);
                Ok(Forward {
                    output: g.reshape(y, &[b, s, s])?,
                    token: None,
                    attention: Vec::new(),
                })
            }
            (Arch::Vit(m), ModelConfig::Vit(c)) => {
                let x = g.mean_axis(input, 1)?;
                let x = g.reshape(x, &[b, 1, s, s])?;
                let p = m.patch.forward(g, x)?;
                let np = c.patches();
                let p = g.reshape(p, &[b, c.dim, np])?;
                let p = g.permute(p, &[0, 2, 1])?;
                let cls = g.param(m.class_token);
                let cls = g.expand(cls, b);
                let cls = g.reshape(cls, &[b, 1, c.dim])?;
                let tokens = g.concat(&[cls, p], 1)?;
                let pos = g.param(m.pos);
                let tokens = g.add(tokens, pos)?;
                let tokens = drop.apply(g, tokens)?;
                let (encoded, attention) = m.encoder.forward(g, tokens, drop)?;
                let token = g.narrow(encoded, 1, 0, 1)?;
                let token = g.reshape(token, &[b, c.dim])?;
                let output = m.decoder.forward(g, token)?;
                Ok(Forward {
                    output,
                    token: Some(token),
                    attention,
                })
            }
            _ => unreachable!("architecture built from its own config"),
        }
    }

    /// Appends the readout token to `tokens[B, L, token_dim]` and runs the
    /// temporal encoder, returning `[B, L + 1, token_dim]` and the attention
    /// weights of each layer.
    pub fn encode_tokens(
        &self,
        g: &mut Graph<'_, T>,
        tokens: NodeId,
        drop: &mut Dropout<'_>,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        let (Arch::Temporal(m), ModelConfig::Temporal(c)) = (&self.arch, &self.config) else {
            return Err(Error::validation("token encoding needs the temporal model"));
        };
        let d = c.token_dim;
        let b = match *g.shape(tokens) {
            [b, _, dd] if dd == d => b,
            _ => {
                return Err(Error::ShapeMismatch {
                    expected: vec![0, 0, d],
                    actual: g.shape(tokens).to_vec(),
                })
            }
        };
        let r = g.param(m.readout);
        let r = g.expand(r, b);
        let r = g.reshape(r, &[b, 1, d])?;
        let x = g.concat(&[tokens, r], 1)?;
        let x = drop.apply(g, x)?;
        m.encoder.forward(g, x, drop)
    }

    /// Frame encoder of the temporal model: `frames[N, 1, S, S] -> [N, embed_dim]`.
    pub fn embed_frames(&self, g: &mut Graph<'_, T>, frames: NodeId) -> Result<NodeId> {
        match &self.arch {
            Arch::Temporal(m) => m.resnet.forward(g, frames),
            _ => Err(Error::validation("frame embedding needs the temporal model")),
        }
    }

    /// Evaluation-mode prediction, `[B, L, S, S] -> [B, S, S]`.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::inference(&self.params);
        let x = g.input(input.clone());
        let f = self.forward(&mut g, x, &mut Dropout::eval())?;
        Ok(g.value(f.output).clone())
    }

    /// Evaluation-mode prediction and decoder token.
    pub fn predict_with_token(&self, input: &Tensor<T>) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
        let mut g = Graph::inference(&self.params);
        let x = g.input(input.clone());
        let f = self.forward(&mut g, x, &mut Dropout::eval())?;
        Ok((g.value(f.output).clone(), f.token.map(|t| g.value(t).clone())))
    }
}
