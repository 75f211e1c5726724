//! Parameterized building blocks shared by the perceiver and preprocessors.

use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::params::{Bindings, ParamId, ParamStore};
use crate::tensor::Scalar;

fn xavier(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn he(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

/// `y = x W + b` over the last axis; `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        let weight = store.uniform(&format!("{name}.w"), &[in_dim, out_dim], xavier(in_dim, out_dim))?;
        let bias = store.zeros(&format!("{name}.b"), &[out_dim])?;
        Ok(Linear { weight, bias, in_dim, out_dim })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bindings, x: NodeId) -> Result<NodeId> {
        let y = g.matmul(x, p.node(self.weight))?;
        g.add(y, p.node(self.bias))
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Result<Self> {
        let gamma = store.constant(&format!("{name}.gamma"), &[dim], 1.0)?;
        let beta = store.zeros(&format!("{name}.beta"), &[dim])?;
        Ok(LayerNorm { gamma, beta })
    }

    /// Normalizes the last axis.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bindings, x: NodeId) -> Result<NodeId> {
        let axis = g.shape(x).len() - 1;
        g.layer_norm(x, axis, p.node(self.gamma), p.node(self.beta), Self::EPS)
    }
}

/// Two-layer GELU feed-forward.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize, hidden: usize) -> Result<Self> {
        Ok(FeedForward {
            up: Linear::new(store, &format!("{name}.up"), dim, hidden)?,
            down: Linear::new(store, &format!("{name}.down"), hidden, dim)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bindings, x: NodeId) -> Result<NodeId> {
        let h = self.up.forward(g, p, x)?;
        let h = g.gelu(h)?;
        self.down.forward(g, p, h)
    }
}

/// 2D convolution layer; weights `[C_out, C_in, k_h, k_w]`, zero "same" padding for odd kernels.
#[derive(Clone, Debug)]
pub struct Conv2dLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 2],
    pub stride: [usize; 2],
    pub padding: [usize; 2],
}

impl Conv2dLayer {
    pub fn same<T: Scalar>(store: &mut ParamStore<T>, name: &str, c_in: usize, c_out: usize, k: usize) -> Result<Self> {
        let fan_in = c_in * k * k;
        let weight = store.uniform(&format!("{name}.w"), &[c_out, c_in, k, k], he(fan_in))?;
        let bias = store.zeros(&format!("{name}.b"), &[c_out])?;
        Ok(Conv2dLayer {
            weight,
            bias,
            in_channels: c_in,
            out_channels: c_out,
            kernel: [k, k],
            stride: [1, 1],
            padding: [k / 2, k / 2],
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bindings, x: NodeId) -> Result<NodeId> {
        g.conv2d(x, p.node(self.weight), Some(p.node(self.bias)), self.stride, self.padding)
    }
}

/// 3D convolution layer; weights `[C_out, C_in, k_d, k_h, k_w]`.
#[derive(Clone, Debug)]
pub struct Conv3dLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl Conv3dLayer {
    pub fn same<T: Scalar>(store: &mut ParamStore<T>, name: &str, c_in: usize, c_out: usize, k: usize) -> Result<Self> {
        let fan_in = c_in * k * k * k;
        let weight = store.uniform(&format!("{name}.w"), &[c_out, c_in, k, k, k], he(fan_in))?;
        let bias = store.zeros(&format!("{name}.b"), &[c_out])?;
        Ok(Conv3dLayer {
            weight,
            bias,
            in_channels: c_in,
            out_channels: c_out,
            kernel: [k; 3],
            stride: [1; 3],
            padding: [k / 2; 3],
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bindings, x: NodeId) -> Result<NodeId> {
        g.conv3d(x, p.node(self.weight), Some(p.node(self.bias)), self.stride, self.padding)
    }
}

/// Transposed 2D convolution; weights `[C_in, C_out, k_h, k_w]`.
#[derive(Clone, Debug)]
pub struct ConvTranspose2dLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: [usize; 2],
}

impl ConvTranspose2dLayer {
    /// Kernel = stride = 2: exact spatial doubling.
    pub fn upsample2<T: Scalar>(store: &mut ParamStore<T>, name: &str, c_in: usize, c_out: usize) -> Result<Self> {
        let weight = store.uniform(&format!("{name}.w"), &[c_in, c_out, 2, 2], he(c_in))?;
        let bias = store.zeros(&format!("{name}.b"), &[c_out])?;
        Ok(ConvTranspose2dLayer { weight, bias, stride: [2, 2] })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bindings, x: NodeId) -> Result<NodeId> {
        g.conv_transpose2d(x, p.node(self.weight), Some(p.node(self.bias)), self.stride, [0, 0])
    }
}

/// Transposed 3D convolution; weights `[C_in, C_out, k_d, k_h, k_w]`,
/// output extent `(in - 1) * s - 2p + k`.
#[derive(Clone, Debug)]
pub struct Conv3dTransposeLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl Conv3dTransposeLayer {
    /// Kernel = stride = (1, 2, 2): doubles height and width, keeps depth.
    pub fn upsample_spatial<T: Scalar>(store: &mut ParamStore<T>, name: &str, c_in: usize, c_out: usize) -> Result<Self> {
        let weight = store.uniform(&format!("{name}.w"), &[c_in, c_out, 1, 2, 2], he(c_in))?;
        let bias = store.zeros(&format!("{name}.b"), &[c_out])?;
        Ok(Conv3dTransposeLayer { weight, bias, stride: [1, 2, 2], padding: [0; 3] })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bindings, x: NodeId) -> Result<NodeId> {
        g.conv_transpose3d(x, p.node(self.weight), Some(p.node(self.bias)), self.stride, self.padding)
    }
}
