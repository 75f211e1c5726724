//! Input preprocessors: each maps a stacked `[5, H, W]` tile to per-pixel
//! features `[C', H, W]` before the positional encoding is appended.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::layers::{Conv2dLayer, Conv3dLayer, Conv3dTransposeLayer, ConvTranspose2dLayer};
use crate::params::{Bindings, ParamStore};
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PreprocessorKind {
    /// Raw channels, no parameters.
    Identity,
    /// One 3x3 conv + ReLU.
    SingleConv2D { filters: usize },
    /// Conv/pool encoder with doubling filters, transposed-conv decoder with skips.
    UNet2D { stages: usize, base_filters: usize },
    /// Two-stage UNet2D whose encoder convs are parallel 1x1 and 3x3 paths fused by sum.
    DualLocalBranch { base_filters: usize },
    /// Three-level 3D UNet over the modality axis as depth, depth-flatten + 1x1 head.
    UNet3D { base_filters: usize, head_channels: usize },
}

impl PreprocessorKind {
    /// Feature channels `C'` produced for an input with `in_channels` bands.
    pub fn output_channels(&self, in_channels: usize) -> usize {
        match *self {
            PreprocessorKind::Identity => in_channels,
            PreprocessorKind::SingleConv2D { filters } => filters,
            PreprocessorKind::UNet2D { base_filters, .. } | PreprocessorKind::DualLocalBranch { base_filters } => base_filters,
            PreprocessorKind::UNet3D { head_channels, .. } => head_channels,
        }
    }

    /// Height and width must be multiples of this.
    pub fn spatial_divisor(&self) -> usize {
        match *self {
            PreprocessorKind::Identity | PreprocessorKind::SingleConv2D { .. } => 1,
            PreprocessorKind::UNet2D { stages, .. } => 1 << (stages - 1),
            PreprocessorKind::DualLocalBranch { .. } => 2,
            PreprocessorKind::UNet3D { .. } => 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            PreprocessorKind::Identity => true,
            PreprocessorKind::SingleConv2D { filters } => filters > 0,
            PreprocessorKind::UNet2D { stages, base_filters } => (2..=3).contains(&stages) && base_filters > 0,
            PreprocessorKind::DualLocalBranch { base_filters } => base_filters > 0,
            PreprocessorKind::UNet3D { base_filters, head_channels } => base_filters > 0 && head_channels > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid preprocessor {self}")))
        }
    }
}

impl fmt::Display for PreprocessorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            PreprocessorKind::Identity => write!(f, "identity"),
            PreprocessorKind::SingleConv2D { filters } => write!(f, "conv2d:{filters}"),
            PreprocessorKind::UNet2D { stages, base_filters } => write!(f, "unet2d:{stages}:{base_filters}"),
            PreprocessorKind::DualLocalBranch { base_filters } => write!(f, "dual:{base_filters}"),
            PreprocessorKind::UNet3D { base_filters, head_channels } => write!(f, "unet3d:{base_filters}:{head_channels}"),
        }
    }
}

/// Parses `identity`, `conv2d[:F]`, `unet2d[:stages[:F]]`, `dual[:F]`, `unet3d[:F[:C']]`.
impl FromStr for PreprocessorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.trim().split(':');
        let name = parts.next().unwrap_or_default().to_ascii_lowercase();
        let nums: Vec<usize> = parts
            .map(|p| p.parse().map_err(|_| Error::Config(format!("bad number in preprocessor {s:?}"))))
            .collect::<Result<_>>()?;
        let arg = |i: usize, default: usize| nums.get(i).copied().unwrap_or(default);
        let kind = match name.as_str() {
            "identity" => PreprocessorKind::Identity,
            "conv2d" => PreprocessorKind::SingleConv2D { filters: arg(0, 32) },
            "unet2d" => PreprocessorKind::UNet2D { stages: arg(0, 2), base_filters: arg(1, 16) },
            "dual" => PreprocessorKind::DualLocalBranch { base_filters: arg(0, 16) },
            "unet3d" => PreprocessorKind::UNet3D { base_filters: arg(0, 16), head_channels: arg(1, 64) },
            _ => return Err(Error::Config(format!("unknown preprocessor {s:?}"))),
        };
        kind.validate()?;
        Ok(kind)
    }
}

/// One conv in a 2D encoder block: plain 3x3, or 1x1 and 3x3 in parallel summed.
#[derive(Clone, Debug)]
pub enum EncoderConv {
    Plain(Conv2dLayer),
    Dual { pointwise: Conv2dLayer, spatial: Conv2dLayer },
}

impl EncoderConv {
    fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, c_in: usize, c_out: usize, dual: bool) -> Result<Self> {
        Ok(if dual {
            EncoderConv::Dual {
                pointwise: Conv2dLayer::same(store, &format!("{name}.k1"), c_in, c_out, 1)?,
                spatial: Conv2dLayer::same(store, &format!("{name}.k3"), c_in, c_out, 3)?,
            }
        } else {
            EncoderConv::Plain(Conv2dLayer::same(store, name, c_in, c_out, 3)?)
        })
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bindings, x: NodeId) -> Result<NodeId> {
        let y = match self {
            EncoderConv::Plain(c) => c.forward(g, p, x)?,
            EncoderConv::Dual { pointwise, spatial } => {
                let a = pointwise.forward(g, p, x)?;
                let b = spatial.forward(g, p, x)?;
                g.add(a, b)?
            }
        };
        g.relu(y)
    }
}

#[derive(Clone, Debug)]
pub struct UNet2d {
    /// Two convs per level; level `l` has `F * 2^l` filters.
    pub encoder: Vec<[EncoderConv; 2]>,
    /// Decoder steps from the deepest level up: transposed conv, then a 3x3 conv after the skip concat.
    pub decoder: Vec<(ConvTranspose2dLayer, Conv2dLayer)>,
}

impl UNet2d {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, in_channels: usize, stages: usize, base: usize, dual: bool) -> Result<Self> {
        let ch: Vec<usize> = (0..stages).map(|l| base << l).collect();
        let mut encoder = Vec::with_capacity(stages);
        let mut c_in = in_channels;
        for (l, &c) in ch.iter().enumerate() {
            let name = format!("pre.enc{l}");
            encoder.push([
                EncoderConv::new(store, &format!("{name}.conv0"), c_in, c, dual)?,
                EncoderConv::new(store, &format!("{name}.conv1"), c, c, dual)?,
            ]);
            c_in = c;
        }
        let mut decoder = Vec::with_capacity(stages - 1);
        for l in (0..stages - 1).rev() {
            let name = format!("pre.dec{l}");
            decoder.push((
                ConvTranspose2dLayer::upsample2(store, &format!("{name}.up"), ch[l + 1], ch[l])?,
                Conv2dLayer::same(store, &format!("{name}.conv"), 2 * ch[l], ch[l], 3)?,
            ));
        }
        Ok(UNet2d { encoder, decoder })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bindings, x: NodeId) -> Result<NodeId> {
        let mut skips = Vec::with_capacity(self.encoder.len());
        let mut h = x;
        for (l, [c0, c1]) in self.encoder.iter().enumerate() {
            if l > 0 {
                h = g.maxpool2d(h, [2, 2], [2, 2])?;
            }
            h = c0.forward(g, p, h)?;
            h = c1.forward(g, p, h)?;
            skips.push(h);
        }
        skips.pop();
        for (up, conv) in &self.decoder {
            let u = up.forward(g, p, h)?;
            let skip = skips.pop().expect("one skip per decoder step");
            let cat = g.concat(&[u, skip], 0)?;
            let c = conv.forward(g, p, cat)?;
            h = g.relu(c)?;
        }
        Ok(h)
    }
}

/// Volumetric UNet: the five modality planes form the depth axis of a
/// single-channel volume `[1, 5, H, W]`. Pools and upsamplings act on height
/// and width only, so depth stays 5 throughout.
#[derive(Clone, Debug)]
pub struct UNet3d {
    pub encoder: Vec<[Conv3dLayer; 2]>,
    pub decoder: Vec<(Conv3dTransposeLayer, Conv3dLayer)>,
    /// 1x1 2D conv over the flattened `channels * depth` axis.
    pub head: Conv2dLayer,
    pub depth: usize,
    pub base_filters: usize,
}

impl UNet3d {
    pub const POOL: [usize; 3] = [1, 2, 2];

    pub fn new<T: Scalar>(store: &mut ParamStore<T>, depth: usize, base: usize, head_channels: usize) -> Result<Self> {
        let ch = [base, 2 * base, 4 * base];
        let mut encoder = Vec::with_capacity(3);
        let mut c_in = 1;
        for (l, &c) in ch.iter().enumerate() {
            encoder.push([
                Conv3dLayer::same(store, &format!("pre.enc{l}.conv0"), c_in, c, 3)?,
                Conv3dLayer::same(store, &format!("pre.enc{l}.conv1"), c, c, 3)?,
            ]);
            c_in = c;
        }
        let mut decoder = Vec::with_capacity(2);
        for l in [1usize, 0] {
            decoder.push((
                Conv3dTransposeLayer::upsample_spatial(store, &format!("pre.dec{l}.up"), ch[l + 1], ch[l])?,
                Conv3dLayer::same(store, &format!("pre.dec{l}.conv"), 2 * ch[l], ch[l], 3)?,
            ));
        }
        let head = Conv2dLayer::same(store, "pre.head", depth * base, head_channels, 1)?;
        Ok(UNet3d { encoder, decoder, head, depth, base_filters: base })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bindings, x: NodeId) -> Result<NodeId> {
        let s = g.shape(x).to_vec();
        let (h, w) = (s[1], s[2]);
        let mut v = g.reshape(x, &[1, s[0], h, w])?;
        let mut skips = Vec::with_capacity(3);
        for (l, [c0, c1]) in self.encoder.iter().enumerate() {
            if l > 0 {
                v = g.maxpool3d(v, Self::POOL, Self::POOL)?;
            }
            let a = c0.forward(g, p, v)?;
            let a = g.relu(a)?;
            let b = c1.forward(g, p, a)?;
            v = g.relu(b)?;
            skips.push(v);
        }
        skips.pop();
        for (up, conv) in &self.decoder {
            let u = up.forward(g, p, v)?;
            let skip = skips.pop().expect("one skip per decoder step");
            let cat = g.concat(&[u, skip], 0)?;
            let c = conv.forward(g, p, cat)?;
            v = g.relu(c)?;
        }
        // [F, D, H, W] -> [F * D, H, W]: channels and depth merge
        let flat = g.reshape(v, &[self.base_filters * self.depth, h, w])?;
        self.head.forward(g, p, flat)
    }
}

#[derive(Clone, Debug)]
pub enum Preprocessor {
    Identity,
    SingleConv(Conv2dLayer),
    UNet2D(UNet2d),
    UNet3D(UNet3d),
}

impl Preprocessor {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, kind: PreprocessorKind, in_channels: usize) -> Result<Self> {
        kind.validate()?;
        Ok(match kind {
            PreprocessorKind::Identity => Preprocessor::Identity,
            PreprocessorKind::SingleConv2D { filters } => {
                Preprocessor::SingleConv(Conv2dLayer::same(store, "pre.conv", in_channels, filters, 3)?)
            }
            PreprocessorKind::UNet2D { stages, base_filters } => {
                Preprocessor::UNet2D(UNet2d::new(store, in_channels, stages, base_filters, false)?)
            }
            PreprocessorKind::DualLocalBranch { base_filters } => {
                Preprocessor::UNet2D(UNet2d::new(store, in_channels, 2, base_filters, true)?)
            }
            PreprocessorKind::UNet3D { base_filters, head_channels } => {
                Preprocessor::UNet3D(UNet3d::new(store, in_channels, base_filters, head_channels)?)
            }
        })
    }

    /// `[C, H, W]` tile -> `[C', H, W]` features.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bindings, tile: NodeId) -> Result<NodeId> {
        match self {
            Preprocessor::Identity => Ok(tile),
            Preprocessor::SingleConv(c) => {
                let y = c.forward(g, p, tile)?;
                g.relu(y)
            }
            Preprocessor::UNet2D(u) => u.forward(g, p, tile),
            Preprocessor::UNet3D(u) => u.forward(g, p, tile),
        }
    }
}

/// `[C', H, W]` features and `[H * W, P]` encodings -> `[H * W, C' + P]` rows.
pub fn flatten_with_positions<T: Scalar>(g: &mut Graph<T>, features: NodeId, positions: NodeId) -> Result<NodeId> {
    let s = g.shape(features).to_vec();
    if s.len() != 3 {
        return Err(Error::shape(format!("expected [C, H, W] features, got {s:?}")));
    }
    let flat = g.reshape(features, &[s[0], s[1] * s[2]])?;
    let rows = g.permute(flat, &[1, 0])?;
    g.concat(&[rows, positions], 1)
}
