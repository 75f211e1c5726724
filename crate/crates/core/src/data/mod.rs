//! Multimodal raster scenes: derived channels, modality stacking, tiling,
//! ID-based splits, the MMRT tile format and a synthetic scene generator.

mod bands;
mod mmrt;
mod raster_io;
mod split;
mod synth;
mod tiling;

pub use bands::{derive_ndvi, normalize_ndsm, scale_optical, stack_modalities, StackRecipe, NDVI_EPS};
pub use mmrt::{read_mmrt, write_mmrt, MmrtTile};
pub use raster_io::{mask_to_pgm, mask_to_ppm, read_pgm, PALETTE};
pub use split::{split_by_ids, SplitResult, SplitSpec};
pub use synth::{synth_dataset, SynthParams, CAR, CLASS_NAMES};
pub use tiling::{tile_scene, TileOrigin, TileSample};

use crate::error::{Error, Result};

/// One named `H x W` band plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Band {
    pub name: String,
    pub data: Vec<f32>,
}

/// Co-registered bands of one scene and its optional label mask.
#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalScene {
    pub scene_id: String,
    pub height: usize,
    pub width: usize,
    pub bands: Vec<Band>,
    pub mask: Option<Vec<u8>>,
}

impl MultimodalScene {
    pub fn new(scene_id: impl Into<String>, height: usize, width: usize) -> Self {
        MultimodalScene { scene_id: scene_id.into(), height, width, bands: Vec::new(), mask: None }
    }

    pub fn add_band(&mut self, name: &str, data: Vec<f32>) -> Result<()> {
        if data.len() != self.height * self.width {
            return Err(Error::shape(format!(
                "band {name} has {} values, scene is {}x{}",
                data.len(),
                self.height,
                self.width
            )));
        }
        if self.band(name).is_some() {
            return Err(Error::invalid(format!("band {name} already present")));
        }
        self.bands.push(Band { name: name.to_string(), data });
        Ok(())
    }

    pub fn set_mask(&mut self, mask: Vec<u8>, num_classes: usize) -> Result<()> {
        if mask.len() != self.height * self.width {
            return Err(Error::shape("mask size differs from scene size"));
        }
        if let Some(&bad) = mask.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::invalid(format!("mask label {bad} outside [0, {num_classes})")));
        }
        self.mask = Some(mask);
        Ok(())
    }

    pub fn band(&self, name: &str) -> Option<&[f32]> {
        self.bands.iter().find(|b| b.name.eq_ignore_ascii_case(name)).map(|b| b.data.as_slice())
    }
}
