//! WebAssembly bindings for the demo page in `www/`.
//!
//! Each `#[wasm_bindgen]` export is a thin wrapper over a plain function of
//! the same name in [`view`], which is what the native tests exercise.

use wasm_bindgen::prelude::*;

pub mod view;

fn js(e: volperc::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// RGBA pixels of one layer (`optical`, `ndsm`, `ndvi` or `mask`) of a synthetic scene.
#[wasm_bindgen]
pub fn scene_layer(seed: u32, size: u32, layer: &str) -> Result<Vec<u8>, JsError> {
    view::scene_layer(seed as u64, size as usize, layer).map_err(js)
}

/// Pixel fraction per class of the same scene.
#[wasm_bindgen]
pub fn scene_class_fractions(seed: u32, size: u32) -> Result<Vec<f64>, JsError> {
    view::scene_class_fractions(seed as u64, size as usize).map_err(js)
}

#[wasm_bindgen]
pub fn class_names() -> Vec<String> {
    volperc::data::CLASS_NAMES.iter().map(|s| s.to_string()).collect()
}

/// Palette colour of class `c` as `[r, g, b]`.
#[wasm_bindgen]
pub fn class_color(c: u32) -> Vec<u8> {
    volperc::data::PALETTE[c as usize % volperc::data::PALETTE.len()].to_vec()
}

/// Grey-scale RGBA image of one Fourier feature over a `size x size` grid.
#[wasm_bindgen]
pub fn positional_feature(size: u32, num_bands: u32, max_freq: f64, feature: u32) -> Result<Vec<u8>, JsError> {
    view::positional_feature(size as usize, num_bands as usize, max_freq, feature as usize).map_err(js)
}

#[wasm_bindgen]
pub fn positional_channels(num_bands: u32) -> u32 {
    view::positional_channels(num_bands as usize) as u32
}

#[wasm_bindgen]
pub fn positional_label(num_bands: u32, max_freq: f64, feature: u32) -> String {
    view::positional_label(num_bands as usize, max_freq, feature as usize)
}

/// `[dice, soft CE, joint]` for one pixel with probability `p_true` on its class.
#[wasm_bindgen]
pub fn losses_for(k: u32, p_true: f64) -> Result<Vec<f64>, JsError> {
    view::losses_for(k as usize, p_true).map_err(js)
}

/// Per-class F1 then IoU, followed by mean F1, mIoU and AA, for a row-major
/// `k x k` count matrix (rows are true classes).
#[wasm_bindgen]
pub fn metrics_for(k: u32, counts: Vec<u32>) -> Result<Vec<f64>, JsError> {
    view::metrics_for(k as usize, &counts).map_err(js)
}
