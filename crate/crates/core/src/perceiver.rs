//! Latent-bottleneck encoder/decoder: the input array is cross-attended into
//! a fixed set of `N` latents, refined by self-attention, and decoded by
//! cross-attending per-pixel output queries against the latents.
//!
//! Encoder cost is `O(N * M)` in the number of input positions `M`; nothing
//! in the encoder forms an `M x M` array.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::layers::{FeedForward, LayerNorm, Linear};
use crate::params::{Bindings, ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PosEncodingKind {
    /// Fixed sine/cosine features on `[-1, 1]` grid coordinates.
    FourierFixed2D { num_bands: usize, max_freq: f64 },
    /// A learned `[H * W, dim]` table.
    Learned { dim: usize },
}

impl PosEncodingKind {
    pub fn channels(&self) -> usize {
        match *self {
            PosEncodingKind::FourierFixed2D { num_bands, .. } => 2 * (2 * num_bands + 1),
            PosEncodingKind::Learned { dim } => dim,
        }
    }
}

/// What the decoder uses as its per-pixel output queries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuerySource {
    /// Positional encoding only.
    Position,
    /// The full per-pixel input row (preprocessed features and positional encoding).
    InputFeatures,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerceiverConfig {
    pub num_latents: usize,
    pub latent_dim: usize,
    pub num_heads: usize,
    pub num_blocks: usize,
    pub input_channels: usize,
    pub output_classes: usize,
    pub pos_encoding: PosEncodingKind,
    pub query_source: QuerySource,
    /// Hidden width of every feed-forward, as a multiple of `latent_dim`.
    pub ffn_ratio: usize,
}

impl Default for PerceiverConfig {
    fn default() -> Self {
        PerceiverConfig {
            num_latents: 256,
            latent_dim: 128,
            num_heads: 4,
            num_blocks: 4,
            input_channels: 5 + 66,
            output_classes: 6,
            pos_encoding: PosEncodingKind::FourierFixed2D { num_bands: 16, max_freq: 32.0 },
            query_source: QuerySource::Position,
            ffn_ratio: 2,
        }
    }
}

impl PerceiverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_latents < 1 {
            return bad("num_latents must be >= 1");
        }
        if self.num_heads == 0 || self.latent_dim % self.num_heads != 0 {
            return bad("latent_dim must be divisible by num_heads");
        }
        if self.output_classes < 2 {
            return bad("output_classes must be >= 2");
        }
        if self.input_channels == 0 || self.ffn_ratio == 0 {
            return bad("input_channels and ffn_ratio must be positive");
        }
        if let PosEncodingKind::FourierFixed2D { num_bands, max_freq } = self.pos_encoding {
            if num_bands == 0 || !(max_freq >= 2.0) {
                return bad("fourier encoding needs num_bands >= 1 and max_freq >= 2");
            }
        }
        Ok(())
    }

    fn query_channels(&self) -> usize {
        match self.query_source {
            QuerySource::Position => self.pos_encoding.channels(),
            QuerySource::InputFeatures => self.input_channels,
        }
    }
}

/// Grid coordinates scaled to `[-1, 1]`; a single row/column sits at 0.
fn grid_coords(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect()
}

/// Fixed Fourier features for an `h x w` grid, `[h * w, 2 * (2 * num_bands + 1)]`.
///
/// Per axis the features are `sin(pi f x)` for each band, `cos(pi f x)` for
/// each band, then `x` itself, with `f` linearly spaced over `[1, max_freq / 2]`.
/// The row-axis block comes first.
pub fn fourier_pos_2d<T: Scalar>(h: usize, w: usize, num_bands: usize, max_freq: f64) -> Result<Tensor<T>> {
    if h == 0 || w == 0 || num_bands == 0 {
        return Err(Error::invalid("fourier_pos_2d needs h, w, num_bands >= 1"));
    }
    let freqs: Vec<f64> = if num_bands == 1 {
        vec![1.0]
    } else {
        (0..num_bands)
            .map(|i| 1.0 + (max_freq / 2.0 - 1.0) * i as f64 / (num_bands - 1) as f64)
            .collect()
    };
    let p = 2 * (2 * num_bands + 1);
    let (ys, xs) = (grid_coords(h), grid_coords(w));
    let mut data = Vec::with_capacity(h * w * p);
    let axis_features = |data: &mut Vec<T>, c: f64| {
        data.extend(freqs.iter().map(|f| T::from_f64((PI * f * c).sin())));
        data.extend(freqs.iter().map(|f| T::from_f64((PI * f * c).cos())));
        data.push(T::from_f64(c));
    };
    for &y in &ys {
        for &x in &xs {
            axis_features(&mut data, y);
            axis_features(&mut data, x);
        }
    }
    Tensor::from_vec(&[h * w, p], data)
}

/// Multi-head scaled dot-product attention with input/output projections.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

/// Attention output plus the `[heads, Q, M]` weight array it was built from.
pub struct Attended {
    pub output: NodeId,
    pub weights: NodeId,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        q_dim: usize,
        kv_dim: usize,
        dim: usize,
        out_dim: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!("attention width {dim} not divisible by {heads} heads")));
        }
        Ok(MultiHeadAttention {
            query: Linear::new(store, &format!("{name}.q"), q_dim, dim)?,
            key: Linear::new(store, &format!("{name}.k"), kv_dim, dim)?,
            value: Linear::new(store, &format!("{name}.v"), kv_dim, dim)?,
            output: Linear::new(store, &format!("{name}.o"), dim, out_dim)?,
            heads,
        })
    }

    /// `queries: [Q, q_dim]`, `kv: [M, kv_dim]` -> `[Q, out_dim]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bindings, queries: NodeId, kv: NodeId) -> Result<Attended> {
        let dim = self.query.out_dim;
        let dh = dim / self.heads;
        let q_len = g.shape(queries)[0];
        let m = g.shape(kv)[0];
        let split = |g: &mut Graph<T>, x: NodeId, len: usize| -> Result<NodeId> {
            let x = g.reshape(x, &[len, self.heads, dh])?;
            g.permute(x, &[1, 0, 2])
        };
        let q = self.query.forward(g, p, queries)?;
        let q = split(g, q, q_len)?;
        let k = self.key.forward(g, p, kv)?;
        let k = split(g, k, m)?;
        let v = self.value.forward(g, p, kv)?;
        let v = split(g, v, m)?;
        let scores = g.matmul_nt(q, k)?;
        let scores = g.scale(scores, 1.0 / (dh as f64).sqrt())?;
        let weights = g.softmax(scores, 2)?;
        let mixed = g.matmul(weights, v)?;
        let mixed = g.permute(mixed, &[1, 0, 2])?;
        let mixed = g.reshape(mixed, &[q_len, dim])?;
        let output = self.output.forward(g, p, mixed)?;
        Ok(Attended { output, weights })
    }
}

/// Pre-norm cross-attention: `q + attn(LN(q), LN(kv))`, or without the
/// query residual when `residual` is false.
#[derive(Clone, Debug)]
pub struct CrossAttention {
    pub norm_q: LayerNorm,
    pub norm_kv: LayerNorm,
    pub attention: MultiHeadAttention,
    pub residual: bool,
}

impl CrossAttention {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        q_dim: usize,
        kv_dim: usize,
        dim: usize,
        heads: usize,
        residual: bool,
    ) -> Result<Self> {
        Ok(CrossAttention {
            norm_q: LayerNorm::new(store, &format!("{name}.ln_q"), q_dim)?,
            norm_kv: LayerNorm::new(store, &format!("{name}.ln_kv"), kv_dim)?,
            attention: MultiHeadAttention::new(store, &format!("{name}.attn"), q_dim, kv_dim, dim, q_dim, heads)?,
            residual,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bindings, queries: NodeId, kv: NodeId) -> Result<Attended> {
        let qn = self.norm_q.forward(g, p, queries)?;
        let kvn = self.norm_kv.forward(g, p, kv)?;
        let att = self.attention.forward(g, p, qn, kvn)?;
        let output = if self.residual { g.add(queries, att.output)? } else { att.output };
        Ok(Attended { output, weights: att.weights })
    }
}

/// Pre-norm transformer block over the latent array.
#[derive(Clone, Debug)]
pub struct SelfAttentionBlock {
    pub norm_attn: LayerNorm,
    pub attention: MultiHeadAttention,
    pub norm_ffn: LayerNorm,
    pub ffn: FeedForward,
}

impl SelfAttentionBlock {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize, heads: usize, hidden: usize) -> Result<Self> {
        Ok(SelfAttentionBlock {
            norm_attn: LayerNorm::new(store, &format!("{name}.ln_attn"), dim)?,
            attention: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, dim, dim, dim, heads)?,
            norm_ffn: LayerNorm::new(store, &format!("{name}.ln_ffn"), dim)?,
            ffn: FeedForward::new(store, &format!("{name}.ffn"), dim, hidden)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bindings, x: NodeId) -> Result<NodeId> {
        let h = self.norm_attn.forward(g, p, x)?;
        let a = self.attention.forward(g, p, h, h)?;
        let x = g.add(x, a.output)?;
        let h = self.norm_ffn.forward(g, p, x)?;
        let f = self.ffn.forward(g, p, h)?;
        g.add(x, f)
    }
}

/// Output-query decoder: projects per-pixel queries, cross-attends them to the
/// latents, applies a residual feed-forward and a linear class head.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub query_proj: Linear,
    pub cross: CrossAttention,
    pub norm_ffn: LayerNorm,
    pub ffn: FeedForward,
    pub head: Linear,
}

impl Decoder {
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bindings, queries: NodeId, latent: NodeId) -> Result<NodeId> {
        let q = self.query_proj.forward(g, p, queries)?;
        let x = self.cross.forward(g, p, q, latent)?.output;
        let h = self.norm_ffn.forward(g, p, x)?;
        let f = self.ffn.forward(g, p, h)?;
        let x = g.add(x, f)?;
        self.head.forward(g, p, x)
    }
}

#[derive(Clone, Debug)]
pub struct Perceiver {
    pub config: PerceiverConfig,
    /// Learned initial latent state `[N, D]`.
    pub latents: ParamId,
    pub encoder: CrossAttention,
    pub encoder_norm: LayerNorm,
    pub encoder_ffn: FeedForward,
    pub blocks: Vec<SelfAttentionBlock>,
    pub decoder: Decoder,
}

impl Perceiver {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, config: &PerceiverConfig) -> Result<Self> {
        config.validate()?;
        let d = config.latent_dim;
        let hidden = d * config.ffn_ratio;
        let latents = store.normal("perceiver.latents", &[config.num_latents, d], 0.5)?;
        let encoder = CrossAttention::new(store, "perceiver.encode", d, config.input_channels, d, config.num_heads, true)?;
        let encoder_norm = LayerNorm::new(store, "perceiver.encode.ln_ffn", d)?;
        let encoder_ffn = FeedForward::new(store, "perceiver.encode.ffn", d, hidden)?;
        let blocks = (0..config.num_blocks)
            .map(|i| SelfAttentionBlock::new(store, &format!("perceiver.block{i}"), d, config.num_heads, hidden))
            .collect::<Result<_>>()?;
        let decoder = Decoder {
            query_proj: Linear::new(store, "perceiver.decode.query", config.query_channels(), d)?,
            cross: CrossAttention::new(store, "perceiver.decode", d, d, d, config.num_heads, false)?,
            norm_ffn: LayerNorm::new(store, "perceiver.decode.ln_ffn", d)?,
            ffn: FeedForward::new(store, "perceiver.decode.ffn", d, hidden)?,
            head: Linear::new(store, "perceiver.decode.head", d, config.output_classes)?,
        };
        Ok(Perceiver { config: config.clone(), latents, encoder, encoder_norm, encoder_ffn, blocks, decoder })
    }

    /// Parameters whose size scales with the input feature width `C`: the
    /// encoder's key/value side and, with feature queries, the query projection.
    pub fn input_width_params(&self) -> Vec<ParamId> {
        let e = &self.encoder;
        let mut v = vec![e.norm_kv.gamma, e.norm_kv.beta, e.attention.key.weight, e.attention.value.weight];
        if self.config.query_source == QuerySource::InputFeatures {
            v.push(self.decoder.query_proj.weight);
        }
        v
    }

    /// Cross-attends `features: [M, C]` into the latent array; returns `[N, D]`.
    pub fn encode<T: Scalar>(&self, g: &mut Graph<T>, p: &Bindings, features: NodeId) -> Result<NodeId> {
        let c = g.shape(features);
        if c.len() != 2 || c[1] != self.config.input_channels {
            return Err(Error::shape(format!(
                "perceiver expects [M, {}] features, got {c:?}",
                self.config.input_channels
            )));
        }
        let x = self.encoder.forward(g, p, p.node(self.latents), features)?.output;
        let h = self.encoder_norm.forward(g, p, x)?;
        let f = self.encoder_ffn.forward(g, p, h)?;
        g.add(x, f)
    }

    pub fn process<T: Scalar>(&self, g: &mut Graph<T>, p: &Bindings, latent: NodeId) -> Result<NodeId> {
        self.blocks.iter().try_fold(latent, |x, b| b.forward(g, p, x))
    }

    /// `queries: [M_out, q]` against `latent: [N, D]` -> `[M_out, K]` logits.
    pub fn decode<T: Scalar>(&self, g: &mut Graph<T>, p: &Bindings, queries: NodeId, latent: NodeId) -> Result<NodeId> {
        let expected = self.config.query_channels();
        if g.shape(queries).len() != 2 || g.shape(queries)[1] != expected {
            return Err(Error::shape(format!(
                "decoder expects [M_out, {expected}] queries, got {:?}",
                g.shape(queries)
            )));
        }
        self.decoder.forward(g, p, queries, latent)
    }

    /// Full pipeline. `features: [M, C]` already carries positional channels;
    /// `positions: [M, P]` are the per-pixel encodings used for position queries.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bindings, features: NodeId, positions: NodeId) -> Result<NodeId> {
        let m = g.shape(features)[0];
        if g.shape(positions)[0] != m {
            return Err(Error::shape("output query count must equal input pixel count"));
        }
        let latent = self.encode(g, p, features)?;
        let latent = self.process(g, p, latent)?;
        let queries = match self.config.query_source {
            QuerySource::Position => positions,
            QuerySource::InputFeatures => features,
        };
        self.decode(g, p, queries, latent)
    }
}
