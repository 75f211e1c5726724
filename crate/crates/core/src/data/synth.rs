//! Desk-scale stand-in for an aerial scene with a height model.
//!
//! Roads, roofs and cars share one grey optical distribution, and every car
//! takes the roof height of a building in the same scene. A car pixel thus
//! differs from road only in the height channel and from roof only in the
//! size of its footprint; no single pixel identifies it. Vegetation is the one
//! class with its own optics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

use super::MultimodalScene;

pub const CLASS_NAMES: [&str; 4] = ["impervious", "building", "vegetation", "car"];
pub const CAR: usize = 3;
const BUILDING: u8 = 1;
const VEG: u8 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthParams {
    pub seed: u64,
    pub scenes: usize,
    pub size: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams { seed: 0, scenes: 8, size: 64 }
    }
}

/// Smooth random field: a few low-frequency plane waves.
fn smooth_field(rng: &mut ChaCha8Rng, size: usize, amp: f32) -> Vec<f32> {
    let waves: Vec<(f32, f32, f32)> = (0..4)
        .map(|_| {
            let theta = rng.gen_range(0.0..std::f32::consts::TAU);
            let k = rng.gen_range(1.0..3.0) * std::f32::consts::TAU / size as f32;
            (k * theta.cos(), k * theta.sin(), rng.gen_range(0.0..std::f32::consts::TAU))
        })
        .collect();
    let mut out = vec![0f32; size * size];
    for r in 0..size {
        for c in 0..size {
            let v: f32 = waves.iter().map(|(a, b, p)| (a * r as f32 + b * c as f32 + p).sin()).sum();
            out[r * size + c] = amp * v / 2.0;
        }
    }
    out
}

fn fill_rect(mask: &mut [u8], size: usize, r0: usize, c0: usize, h: usize, w: usize, label: u8) -> Vec<usize> {
    let mut idx = Vec::new();
    for r in r0..(r0 + h).min(size) {
        for c in c0..(c0 + w).min(size) {
            mask[r * size + c] = label;
            idx.push(r * size + c);
        }
    }
    idx
}

/// True when the `h x w` rectangle at `(r0, c0)` plus a one-pixel margin is all background.
fn clear(mask: &[u8], size: usize, r0: usize, c0: usize, h: usize, w: usize) -> bool {
    let (ra, ca) = (r0.saturating_sub(1), c0.saturating_sub(1));
    let (rb, cb) = ((r0 + h + 1).min(size), (c0 + w + 1).min(size));
    (ra..rb).all(|r| (ca..cb).all(|c| mask[r * size + c] == 0))
}

fn scene(rng: &mut ChaCha8Rng, id: String, size: usize) -> Result<MultimodalScene> {
    let n = size * size;
    let noise = Normal::new(0f32, 1.0).unwrap();
    let mut mask = vec![0u8; n];
    let mut height = vec![0f32; n];

    // Buildings: one or two overlapping rectangles each (L/T shapes).
    let nb = (n / 1000).max(2);
    let (lo, hi) = (size / 7, size / 3);
    let mut roofs = Vec::with_capacity(nb);
    for _ in 0..nb {
        let h_roof = rng.gen_range(3.0..9.0f32);
        roofs.push(h_roof);
        for part in 0..rng.gen_range(1..=2) {
            let (h, w) = (rng.gen_range(lo..=hi), rng.gen_range(lo..=hi));
            let (h, w) = if part == 1 { (h / 2 + 2, w) } else { (h, w) };
            let r0 = rng.gen_range(0..size - h.min(size - 1));
            let c0 = rng.gen_range(0..size - w.min(size - 1));
            for i in fill_rect(&mut mask, size, r0, c0, h, w, BUILDING) {
                height[i] = h_roof;
            }
        }
    }
    // Vegetation: ellipses with rough canopy heights.
    let nv = (n / 1400).max(2);
    for _ in 0..nv {
        let (ry, rx) = (rng.gen_range(size as f32 / 14.0..size as f32 / 7.0), rng.gen_range(size as f32 / 14.0..size as f32 / 7.0));
        let (cy, cx) = (rng.gen_range(0.0..size as f32), rng.gen_range(0.0..size as f32));
        let top = rng.gen_range(2.0..7.0f32);
        for r in 0..size {
            for c in 0..size {
                let (dy, dx) = ((r as f32 - cy) / ry, (c as f32 - cx) / rx);
                let d = dy * dy + dx * dx;
                if d <= 1.0 {
                    mask[r * size + c] = VEG;
                    height[r * size + c] = top * (1.0 - 0.5 * d);
                }
            }
        }
    }
    // Cars: small rectangles on open ground, keeping under ~2% of the area.
    let target = (n as f32 * 0.02) as usize;
    let mut car_px = 0;
    for _ in 0..200 {
        let (a, b) = (rng.gen_range(2..=3usize), rng.gen_range(4..=6usize));
        let (h, w) = if rng.gen_bool(0.5) { (a, b) } else { (b, a) };
        if car_px + h * w > target {
            break;
        }
        let (r0, c0) = (rng.gen_range(0..=size - h), rng.gen_range(0..=size - w));
        if !clear(&mask, size, r0, c0, h, w) {
            continue;
        }
        let top = roofs[rng.gen_range(0..roofs.len())];
        for i in fill_rect(&mut mask, size, r0, c0, h, w, CAR as u8) {
            height[i] = top;
        }
        car_px += h * w;
    }

    // Terrain tilt and sensor noise on the surface model.
    let (tr, tc) = (rng.gen_range(-1.0..1.0f32), rng.gen_range(-1.0..1.0f32));
    let base = rng.gen_range(200.0..300.0f32);
    let mut dsm = vec![0f32; n];
    for r in 0..size {
        for c in 0..size {
            let i = r * size + c;
            let terrain = tr * r as f32 / size as f32 + tc * c as f32 / size as f32;
            dsm[i] = base + terrain + height[i] + 0.08 * noise.sample(rng);
        }
    }

    // Optics: grey texture everywhere, vegetation replaces it.
    let shade = smooth_field(rng, size, 0.05);
    let mut red = vec![0f32; n];
    let mut green = vec![0f32; n];
    let mut ir = vec![0f32; n];
    for i in 0..n {
        let (r, g, nir) = if mask[i] == VEG { (0.18, 0.36, 0.68) } else { (0.45, 0.44, 0.40) };
        let s = shade[i];
        red[i] = (r + s + 0.03 * noise.sample(rng)).clamp(0.0, 1.0);
        green[i] = (g + s + 0.03 * noise.sample(rng)).clamp(0.0, 1.0);
        ir[i] = (nir + s + 0.03 * noise.sample(rng)).clamp(0.0, 1.0);
    }

    let mut sc = MultimodalScene::new(id, size, size);
    sc.add_band("R", red)?;
    sc.add_band("G", green)?;
    sc.add_band("IR", ir)?;
    sc.add_band("DSM", dsm)?;
    sc.set_mask(mask, CLASS_NAMES.len())?;
    Ok(sc)
}

/// Generates `params.scenes` square scenes with R, G, IR and DSM bands and a
/// four-class mask. Scene ids are `synth-<i>`.
pub fn synth_dataset(params: SynthParams) -> Result<Vec<MultimodalScene>> {
    if params.size < 32 {
        return Err(Error::invalid(format!("synthetic scenes need size >= 32, got {}", params.size)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    (0..params.scenes).map(|i| scene(&mut rng, format!("synth-{i}"), params.size)).collect()
}
