//! Named gradient checks for every differentiable op plus a miniature
//! end-to-end model, all in 64-bit with central differences.

use crate::error::{Error, Result};
use crate::gradcheck::{gradcheck_many, GradcheckReport};
use crate::graph::{Graph, NodeId};
use crate::model::{ModelConfig, Segmenter};
use crate::objectives::onehot;
use crate::ops::UnaryKind;
use crate::params::{Bindings, ParamStore};
use crate::perceiver::{PerceiverConfig, PosEncodingKind, QuerySource};
use crate::preprocess::PreprocessorKind;
use crate::tensor::{Init, Tensor};

pub const EPS: f64 = 1e-5;
pub const OP_TOLERANCE: f64 = 1e-4;
pub const END_TO_END_TOLERANCE: f64 = 1e-3;

pub const OPS: &[&str] = &[
    "add", "sub", "mul", "div", "relu", "gelu", "exp", "log", "scale", "matmul", "matmul_nt", "softmax",
    "layer_norm", "reshape", "permute", "concat", "slice", "sum", "mean", "conv2d", "conv3d", "conv_transpose2d",
    "conv_transpose3d", "maxpool2d", "maxpool3d", "dice_loss", "soft_ce_loss", "joint_loss",
];

fn normal(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::create(shape, Init::Normal { seed, mean: 0.0, std: 1.0 }).unwrap()
}

/// Values bounded away from zero, for kinks and logs.
fn away_from_zero(shape: &[usize], seed: u64, positive: bool) -> Tensor<f64> {
    normal(shape, seed).map(|v| {
        let m = 0.2 + v.abs();
        if positive || v >= 0.0 {
            m
        } else {
            -m
        }
    })
}

/// Contracts `out` against fixed random weights so every output coordinate
/// contributes a distinct amount.
fn project(g: &mut Graph<f64>, out: NodeId, seed: u64) -> Result<NodeId> {
    let r = g.constant(normal(g.shape(out), seed));
    let p = g.mul(out, r)?;
    g.sum(p)
}

type Objective = Box<dyn Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>>;

fn case(name: &str) -> Result<(Objective, Vec<Tensor<f64>>)> {
    let s = 100;
    let f: Objective;
    let inputs: Vec<Tensor<f64>>;
    macro_rules! obj {
        (|$g:ident, $x:ident| $body:expr) => {
            Box::new(move |$g: &mut Graph<f64>, $x: &[NodeId]| {
                let out = $body?;
                project($g, out, 999)
            })
        };
    }
    match name {
        "add" | "sub" | "mul" | "div" => {
            let n = name.to_string();
            inputs = vec![normal(&[3, 4], s), away_from_zero(&[4], s + 1, false)];
            f = obj!(|g, x| match n.as_str() {
                "add" => g.add(x[0], x[1]),
                "sub" => g.sub(x[0], x[1]),
                "mul" => g.mul(x[0], x[1]),
                _ => g.div(x[0], x[1]),
            });
        }
        "relu" => {
            inputs = vec![away_from_zero(&[3, 5], s, false)];
            f = obj!(|g, x| g.unary(x[0], UnaryKind::Relu));
        }
        "gelu" => {
            inputs = vec![normal(&[3, 5], s)];
            f = obj!(|g, x| g.gelu(x[0]));
        }
        "exp" => {
            inputs = vec![normal(&[3, 5], s)];
            f = obj!(|g, x| g.exp(x[0]));
        }
        "log" => {
            inputs = vec![away_from_zero(&[3, 5], s, true)];
            f = obj!(|g, x| g.log(x[0]));
        }
        "scale" => {
            inputs = vec![normal(&[4], s)];
            f = obj!(|g, x| g.scale(x[0], -1.7));
        }
        "matmul" => {
            inputs = vec![normal(&[2, 3, 4], s), normal(&[4, 5], s + 1)];
            f = obj!(|g, x| g.matmul(x[0], x[1]));
        }
        "matmul_nt" => {
            inputs = vec![normal(&[2, 3, 4], s), normal(&[2, 5, 4], s + 1)];
            f = obj!(|g, x| g.matmul_nt(x[0], x[1]));
        }
        "softmax" => {
            inputs = vec![normal(&[3, 4, 5], s)];
            f = obj!(|g, x| g.softmax(x[0], 1));
        }
        "layer_norm" => {
            inputs = vec![normal(&[3, 6], s), normal(&[6], s + 1), normal(&[6], s + 2)];
            f = obj!(|g, x| g.layer_norm(x[0], 1, x[1], x[2], 1e-5));
        }
        "reshape" => {
            inputs = vec![normal(&[2, 6], s)];
            f = obj!(|g, x| g.reshape(x[0], &[3, 4]));
        }
        "permute" => {
            inputs = vec![normal(&[2, 3, 4], s)];
            f = obj!(|g, x| g.permute(x[0], &[2, 0, 1]));
        }
        "concat" => {
            inputs = vec![normal(&[2, 3], s), normal(&[2, 2], s + 1)];
            f = obj!(|g, x| g.concat(&[x[0], x[1]], 1));
        }
        "slice" => {
            inputs = vec![normal(&[3, 5], s)];
            f = obj!(|g, x| g.slice(x[0], 1, 1, 3));
        }
        "sum" => {
            inputs = vec![normal(&[3, 5], s)];
            f = Box::new(|g: &mut Graph<f64>, x: &[NodeId]| {
                let sq = g.mul(x[0], x[0])?;
                g.sum(sq)
            });
        }
        "mean" => {
            inputs = vec![normal(&[3, 5], s)];
            f = Box::new(|g: &mut Graph<f64>, x: &[NodeId]| {
                let sq = g.mul(x[0], x[0])?;
                g.mean(sq)
            });
        }
        "conv2d" => {
            inputs = vec![normal(&[2, 5, 4], s), normal(&[3, 2, 3, 3], s + 1), normal(&[3], s + 2)];
            f = obj!(|g, x| g.conv2d(x[0], x[1], Some(x[2]), [1, 2], [1, 1]));
        }
        "conv3d" => {
            inputs = vec![normal(&[2, 3, 4, 4], s), normal(&[2, 2, 3, 3, 3], s + 1), normal(&[2], s + 2)];
            f = obj!(|g, x| g.conv3d(x[0], x[1], Some(x[2]), [1, 1, 1], [1, 1, 1]));
        }
        "conv_transpose2d" => {
            inputs = vec![normal(&[2, 3, 3], s), normal(&[2, 3, 2, 2], s + 1), normal(&[3], s + 2)];
            f = obj!(|g, x| g.conv_transpose2d(x[0], x[1], Some(x[2]), [2, 2], [0, 0]));
        }
        "conv_transpose3d" => {
            inputs = vec![normal(&[2, 2, 3, 3], s), normal(&[2, 2, 1, 2, 2], s + 1), normal(&[2], s + 2)];
            f = obj!(|g, x| g.conv_transpose3d(x[0], x[1], Some(x[2]), [1, 2, 2], [0, 0, 0]));
        }
        "maxpool2d" => {
            inputs = vec![normal(&[2, 4, 4], s)];
            f = obj!(|g, x| g.maxpool2d(x[0], [2, 2], [2, 2]));
        }
        "maxpool3d" => {
            inputs = vec![normal(&[2, 2, 4, 4], s)];
            f = obj!(|g, x| g.maxpool3d(x[0], [1, 2, 2], [1, 2, 2]));
        }
        "dice_loss" | "soft_ce_loss" | "joint_loss" => {
            let n = name.to_string();
            let target = onehot::<f64>(&[0, 2, 1, 2, 0, 1], 3)?;
            inputs = vec![normal(&[6, 3], s)];
            f = Box::new(move |g: &mut Graph<f64>, x: &[NodeId]| {
                let p = g.softmax(x[0], 1)?;
                let t = g.constant(target.clone());
                match n.as_str() {
                    "dice_loss" => g.dice_loss(p, t),
                    "soft_ce_loss" => g.soft_ce_loss(p, t),
                    _ => g.joint_loss(p, t),
                }
            });
        }
        _ => return Err(Error::invalid(format!("unknown gradcheck scope {name:?}"))),
    }
    Ok((f, inputs))
}

/// Gradient check of one named op.
pub fn check_op(name: &str) -> Result<GradcheckReport> {
    let (f, inputs) = case(name)?;
    gradcheck_many(f, &inputs, EPS)
}

/// The miniature model: 4x4 tile (`M = 16`), 4 latents of width 8, one block.
pub fn miniature_config() -> ModelConfig {
    ModelConfig {
        in_channels: 5,
        tile_size: 4,
        preprocessor: PreprocessorKind::UNet3D { base_filters: 2, head_channels: 3 },
        perceiver: PerceiverConfig {
            num_latents: 4,
            latent_dim: 8,
            num_heads: 2,
            num_blocks: 1,
            input_channels: 0,
            output_classes: 3,
            pos_encoding: PosEncodingKind::FourierFixed2D { num_bands: 2, max_freq: 4.0 },
            query_source: QuerySource::InputFeatures,
            ffn_ratio: 2,
        },
    }
}

/// Gradient check of the joint loss with respect to every parameter and the input tile.
pub fn check_end_to_end(config: &ModelConfig) -> Result<GradcheckReport> {
    let mut store = ParamStore::<f64>::new(11);
    let model = Segmenter::new(config, &mut store)?;
    let t = config.tile_size;
    let tile = normal(&[config.in_channels, t, t], 5);
    let k = config.perceiver.output_classes;
    let mask: Vec<u8> = (0..t * t).map(|i| (i * 7 % k) as u8).collect();
    let mut inputs: Vec<Tensor<f64>> = store.iter().map(|(_, t)| t.clone()).collect();
    inputs.push(tile);
    let f = move |g: &mut Graph<f64>, x: &[NodeId]| {
        let b = Bindings::from_nodes(x[..x.len() - 1].to_vec());
        model.loss(g, &b, x[x.len() - 1], &mask)
    };
    gradcheck_many(f, &inputs, EPS)
}
