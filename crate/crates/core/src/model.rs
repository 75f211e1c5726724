//! Preprocessor + positional encoding + perceiver, wired for one tile size.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::objectives::onehot;
use crate::params::{Bindings, ParamId, ParamStore};
use crate::perceiver::{fourier_pos_2d, PerceiverConfig, PosEncodingKind, Perceiver};
use crate::preprocess::{flatten_with_positions, Preprocessor, PreprocessorKind};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub tile_size: usize,
    pub preprocessor: PreprocessorKind,
    /// `input_channels` is derived from the preprocessor and encoding; any
    /// value set here is overwritten.
    pub perceiver: PerceiverConfig,
}

impl ModelConfig {
    pub fn perceiver_config(&self) -> PerceiverConfig {
        let mut c = self.perceiver.clone();
        c.input_channels = self.preprocessor.output_channels(self.in_channels) + c.pos_encoding.channels();
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.preprocessor.validate()?;
        self.perceiver_config().validate()?;
        if self.in_channels == 0 || self.tile_size == 0 {
            return Err(Error::Config("in_channels and tile_size must be positive".into()));
        }
        let div = self.preprocessor.spatial_divisor();
        if self.tile_size % div != 0 {
            return Err(Error::Config(format!(
                "tile size {} must be divisible by {div} for preprocessor {}",
                self.tile_size, self.preprocessor
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum Positions {
    Fixed(Tensor<f64>),
    Learned(ParamId),
}

#[derive(Clone, Debug)]
pub struct Segmenter {
    pub config: ModelConfig,
    pub preprocessor: Preprocessor,
    pub perceiver: Perceiver,
    positions: Positions,
}

impl Segmenter {
    /// Registers all parameters in `store`: preprocessor first, then the perceiver.
    pub fn new<T: Scalar>(config: &ModelConfig, store: &mut ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let preprocessor = Preprocessor::new(store, config.preprocessor, config.in_channels)?;
        let t = config.tile_size;
        let positions = match config.perceiver.pos_encoding {
            PosEncodingKind::FourierFixed2D { num_bands, max_freq } => {
                Positions::Fixed(fourier_pos_2d(t, t, num_bands, max_freq)?)
            }
            PosEncodingKind::Learned { dim } => Positions::Learned(store.normal("pos.learned", &[t * t, dim], 0.5)?),
        };
        let perceiver = Perceiver::new(store, &config.perceiver_config())?;
        Ok(Segmenter { config: config.clone(), preprocessor, perceiver, positions })
    }

    pub fn positions<T: Scalar>(&self, g: &mut Graph<T>, p: &Bindings) -> NodeId {
        match &self.positions {
            Positions::Fixed(t) => g.constant(t.cast()),
            Positions::Learned(id) => p.node(*id),
        }
    }

    fn check_tile<T: Scalar>(&self, g: &Graph<T>, tile: NodeId) -> Result<()> {
        let t = self.config.tile_size;
        let expected = [self.config.in_channels, t, t];
        if g.shape(tile) != expected {
            return Err(Error::shape(format!("expected tile {expected:?}, got {:?}", g.shape(tile))));
        }
        Ok(())
    }

    /// `[C, T, T]` tile -> `[T * T, C' + P]` perceiver input rows.
    pub fn features<T: Scalar>(&self, g: &mut Graph<T>, p: &Bindings, tile: NodeId, positions: NodeId) -> Result<NodeId> {
        self.check_tile(g, tile)?;
        let f = self.preprocessor.forward(g, p, tile)?;
        flatten_with_positions(g, f, positions)
    }

    /// Per-pixel class logits `[T * T, K]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bindings, tile: NodeId) -> Result<NodeId> {
        let pos = self.positions(g, p);
        let feats = self.features(g, p, tile, pos)?;
        self.perceiver.forward(g, p, feats, pos)
    }

    /// Joint Dice + soft CE loss of one tile against its label mask.
    pub fn loss<T: Scalar>(&self, g: &mut Graph<T>, p: &Bindings, tile: NodeId, mask: &[u8]) -> Result<NodeId> {
        let logits = self.forward(g, p, tile)?;
        let probs = g.softmax(logits, 1)?;
        let target = g.constant(onehot(mask, self.config.perceiver.output_classes)?);
        g.joint_loss(probs, target)
    }

    /// Per-pixel argmax labels for a tile.
    pub fn predict<T: Scalar>(&self, store: &ParamStore<T>, tile: &Tensor<T>) -> Result<Vec<u8>> {
        let mut g = Graph::new();
        let p = store.bind_frozen(&mut g);
        let x = g.constant(tile.clone());
        let logits = self.forward(&mut g, &p, x)?;
        Ok(argmax_rows(g.value(logits)))
    }

    /// Perceiver parameters that do not depend on the input feature width;
    /// equal across preprocessors for one perceiver configuration.
    pub fn perceiver_core_param_count<T: Scalar>(&self, store: &ParamStore<T>) -> usize {
        let all: usize = store.iter().filter(|(n, _)| n.starts_with("perceiver.")).map(|(_, t)| t.len()).sum();
        let width: usize = self.perceiver.input_width_params().iter().map(|&id| store.get(id).len()).sum();
        all - width
    }

    /// Number of parameters owned by the preprocessor.
    pub fn preprocessor_param_count<T: Scalar>(&self, store: &ParamStore<T>) -> usize {
        store.iter().filter(|(n, _)| n.starts_with("pre.")).map(|(_, t)| t.len()).sum()
    }
}

/// Index of the largest entry per row of a `[M, K]` tensor (first on ties).
pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<u8> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best as u8
        })
        .collect()
}
