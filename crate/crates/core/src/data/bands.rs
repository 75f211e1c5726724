use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::MultimodalScene;

/// Guards the NDVI denominator.
pub const NDVI_EPS: f32 = 1e-6;

/// `(IR - R) / (IR + R + eps)`, clamped to `[-1, 1]`.
pub fn derive_ndvi(ir: &[f32], r: &[f32]) -> Result<Vec<f32>> {
    if ir.len() != r.len() {
        return Err(Error::shape("NDVI bands differ in size"));
    }
    Ok(ir
        .iter()
        .zip(r)
        .map(|(&i, &rv)| ((i - rv) / (i + rv + NDVI_EPS)).clamp(-1.0, 1.0))
        .collect())
}

/// Per-scene min-max normalization to `[0, 1]`; a constant raster maps to zeros.
pub fn normalize_ndsm(dsm: &[f32]) -> Vec<f32> {
    let (lo, hi) = dsm.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if !(range > 0.0) {
        return vec![0.0; dsm.len()];
    }
    dsm.iter().map(|&v| ((v - lo) / range).clamp(0.0, 1.0)).collect()
}

/// Optical bands stored as 8-bit digital numbers are divided by 255; bands
/// already in `[0, 1]` pass through. Result is clamped to `[0, 1]`.
pub fn scale_optical(band: &[f32]) -> Vec<f32> {
    let max = band.iter().copied().fold(0f32, f32::max);
    let s = if max > 1.0 { 1.0 / 255.0 } else { 1.0 };
    band.iter().map(|&v| (v * s).clamp(0.0, 1.0)).collect()
}

/// Channel recipes for the stacked five-channel input.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StackRecipe {
    /// R, G, IR, nDSM, NDVI
    Vaihingen,
    /// R, G, B, IR, nDSM
    Potsdam,
    /// Five band names; `nDSM` and `NDVI` are derived when not stored.
    Custom(Vec<String>),
}

impl StackRecipe {
    pub fn channels(&self) -> Vec<String> {
        let names: &[&str] = match self {
            StackRecipe::Vaihingen => &["R", "G", "IR", "nDSM", "NDVI"],
            StackRecipe::Potsdam => &["R", "G", "B", "IR", "nDSM"],
            StackRecipe::Custom(v) => return v.clone(),
        };
        names.iter().map(|s| s.to_string()).collect()
    }
}

fn require<'a>(scene: &'a MultimodalScene, name: &str) -> Result<&'a [f32]> {
    scene
        .band(name)
        .ok_or_else(|| Error::invalid(format!("scene {} lacks band {name}", scene.scene_id)))
}

fn channel(scene: &MultimodalScene, name: &str) -> Result<Vec<f32>> {
    if let Some(b) = scene.band(name) {
        return Ok(match name.to_ascii_lowercase().as_str() {
            "ndsm" => b.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            "ndvi" => b.iter().map(|v| v.clamp(-1.0, 1.0)).collect(),
            "dsm" => normalize_ndsm(b),
            _ => scale_optical(b),
        });
    }
    match name.to_ascii_lowercase().as_str() {
        "ndsm" => Ok(normalize_ndsm(require(scene, "DSM")?)),
        "ndvi" => {
            let ir = scale_optical(require(scene, "IR")?);
            let r = scale_optical(require(scene, "R")?);
            derive_ndvi(&ir, &r)
        }
        _ => Err(Error::invalid(format!("scene {} lacks band {name}", scene.scene_id))),
    }
}

/// Stacks the recipe's five channels into `[5, H, W]`.
pub fn stack_modalities(scene: &MultimodalScene, recipe: &StackRecipe) -> Result<Tensor<f32>> {
    let names = recipe.channels();
    if names.len() != 5 {
        return Err(Error::invalid(format!("stack recipe needs 5 channels, got {}", names.len())));
    }
    let mut data = Vec::with_capacity(5 * scene.height * scene.width);
    for n in &names {
        data.extend(channel(scene, n)?);
    }
    Tensor::from_vec(&[5, scene.height, scene.width], data)
}
