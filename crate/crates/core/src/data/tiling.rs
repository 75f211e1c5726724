use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord)]
pub struct TileOrigin {
    pub scene_id: String,
    pub row: usize,
    pub col: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TileSample {
    /// `[C, T, T]`
    pub features: Tensor<f32>,
    /// `T*T` labels; empty when the scene had no mask.
    pub mask: Vec<u8>,
    pub origin: TileOrigin,
    /// True when part of the tile lies outside the scene and was filled by reflection.
    pub padded: bool,
}

impl TileSample {
    pub fn tile_size(&self) -> usize {
        self.features.shape()[1]
    }
}

fn starts(extent: usize, tile: usize, stride: usize) -> Vec<usize> {
    let n = (extent - tile).div_ceil(stride) + 1;
    (0..n).map(|i| i * stride).collect()
}

/// Reflect index `i` into `[0, n)` without repeating the edge sample.
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// Cuts a stacked `[C, H, W]` raster into `T x T` tiles in row-major order.
/// The grid is extended until it covers the whole scene; tiles that overhang
/// the border are filled by reflection and flagged.
pub fn tile_scene(
    scene_id: &str,
    stack: &Tensor<f32>,
    mask: Option<&[u8]>,
    tile: usize,
    stride: usize,
) -> Result<Vec<TileSample>> {
    if stack.rank() != 3 {
        return Err(Error::shape("tile_scene expects [C, H, W]"));
    }
    let (c, h, w) = (stack.shape()[0], stack.shape()[1], stack.shape()[2]);
    if tile == 0 || stride == 0 {
        return Err(Error::invalid("tile size and stride must be positive"));
    }
    if tile > h || tile > w {
        return Err(Error::invalid(format!("tile {tile} larger than scene {h}x{w}")));
    }
    if let Some(m) = mask {
        if m.len() != h * w {
            return Err(Error::shape("mask size differs from stack"));
        }
    }
    let src = stack.data();
    let mut out = Vec::new();
    for &r0 in &starts(h, tile, stride) {
        for &c0 in &starts(w, tile, stride) {
            let padded = r0 + tile > h || c0 + tile > w;
            let rows: Vec<usize> = (r0..r0 + tile).map(|r| reflect(r, h)).collect();
            let cols: Vec<usize> = (c0..c0 + tile).map(|x| reflect(x, w)).collect();
            let mut feat = Vec::with_capacity(c * tile * tile);
            for ch in 0..c {
                let plane = &src[ch * h * w..(ch + 1) * h * w];
                for &r in &rows {
                    feat.extend(cols.iter().map(|&x| plane[r * w + x]));
                }
            }
            let tile_mask = match mask {
                Some(m) => rows.iter().flat_map(|&r| cols.iter().map(move |&x| m[r * w + x])).collect(),
                None => Vec::new(),
            };
            out.push(TileSample {
                features: Tensor::from_vec(&[c, tile, tile], feat)?,
                mask: tile_mask,
                origin: TileOrigin { scene_id: scene_id.to_string(), row: r0, col: c0 },
                padded,
            });
        }
    }
    Ok(out)
}
