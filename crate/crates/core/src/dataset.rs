//! Materializes the train/val/test tiles a [`TrainConfig`] describes.

use std::path::Path;

use crate::config::{DatasetSource, TrainConfig};
use crate::data::{
    read_mmrt, split_by_ids, stack_modalities, synth_dataset, tile_scene, write_mmrt, MmrtTile, MultimodalScene,
    SplitSpec, StackRecipe, SynthParams, TileOrigin, TileSample, CLASS_NAMES,
};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Default)]
pub struct Splits {
    pub train: Vec<TileSample>,
    pub val: Vec<TileSample>,
    pub test: Vec<TileSample>,
    pub class_names: Vec<String>,
}

impl Splits {
    pub fn get(&self, name: &str) -> Result<&[TileSample]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            _ => Err(Error::invalid(format!("unknown split {name:?}; expected train, val or test"))),
        }
    }
}

/// Stacks and tiles each scene; output is ordered by scene then grid position.
pub fn tile_scenes(scenes: &[MultimodalScene], recipe: &StackRecipe, tile: usize, stride: usize) -> Result<Vec<TileSample>> {
    let mut out = Vec::new();
    for s in scenes {
        let stack = stack_modalities(s, recipe)?;
        out.extend(tile_scene(&s.scene_id, &stack, s.mask.as_deref(), tile, stride)?);
    }
    Ok(out)
}

/// Synthetic scenes for a config, split by generation order.
pub fn synthetic_split(params: SynthParams, train: usize, val: usize) -> (SplitSpec, Vec<MultimodalScene>) {
    let scenes = synth_dataset(params).unwrap_or_default();
    let ids: Vec<String> = scenes.iter().map(|s| s.scene_id.clone()).collect();
    let spec = SplitSpec {
        train: ids[..train.min(ids.len())].to_vec(),
        val: ids[train.min(ids.len())..(train + val).min(ids.len())].to_vec(),
        test: ids[(train + val).min(ids.len())..].to_vec(),
    };
    (spec, scenes)
}

pub fn tile_file_name(origin: &TileOrigin) -> String {
    format!("{}__r{}_c{}.mmrt", origin.scene_id, origin.row, origin.col)
}

fn parse_tile_name(stem: &str) -> Option<TileOrigin> {
    let (scene, rest) = stem.rsplit_once("__")?;
    let (r, c) = rest.strip_prefix('r')?.split_once("_c")?;
    Some(TileOrigin { scene_id: scene.to_string(), row: r.parse().ok()?, col: c.parse().ok()? })
}

pub fn tile_to_mmrt(t: &TileSample, band_names: &[String], num_classes: usize) -> MmrtTile {
    let size = t.tile_size();
    MmrtTile {
        height: size,
        width: size,
        num_classes,
        band_names: band_names.to_vec(),
        bands: t.features.data().to_vec(),
        mask: (!t.mask.is_empty()).then(|| t.mask.clone()),
    }
}

pub fn mmrt_to_tile(m: MmrtTile, origin: TileOrigin) -> Result<TileSample> {
    Ok(TileSample {
        features: Tensor::from_vec(&[m.channels(), m.height, m.width], m.bands)?,
        mask: m.mask.unwrap_or_default(),
        origin,
        padded: false,
    })
}

/// Writes tiles as `<scene>__r<row>_c<col>.mmrt` into `dir`.
pub fn write_tiles(dir: &Path, tiles: &[TileSample], band_names: &[String], num_classes: usize) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for t in tiles {
        write_mmrt(dir.join(tile_file_name(&t.origin)), &tile_to_mmrt(t, band_names, num_classes))?;
    }
    Ok(())
}

/// Reads every `.mmrt` in `dir`, sorted by (scene, row, col).
pub fn read_tiles(dir: &Path) -> Result<Vec<TileSample>> {
    let mut tiles = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("mmrt") {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let origin = parse_tile_name(stem)
            .ok_or_else(|| Error::Format(format!("tile name {stem:?} is not <scene>__r<row>_c<col>")))?;
        tiles.push(mmrt_to_tile(read_mmrt(&path)?, origin)?);
    }
    tiles.sort_by(|a, b| a.origin.cmp(&b.origin));
    Ok(tiles)
}

/// Groups tiles into splits by their scene id.
pub fn split_tiles(tiles: Vec<TileSample>, spec: &SplitSpec) -> Result<(Vec<TileSample>, Vec<TileSample>, Vec<TileSample>)> {
    spec.validate()?;
    let (mut tr, mut va, mut te) = (Vec::new(), Vec::new(), Vec::new());
    for t in tiles {
        let id = t.origin.scene_id.as_str();
        if spec.train.iter().any(|s| s == id) {
            tr.push(t);
        } else if spec.val.iter().any(|s| s == id) {
            va.push(t);
        } else if spec.test.iter().any(|s| s == id) {
            te.push(t);
        }
    }
    Ok((tr, va, te))
}

pub fn load_dataset(cfg: &TrainConfig) -> Result<Splits> {
    match &cfg.dataset {
        DatasetSource::Synthetic { seed, size, train, val, test } => {
            let params = SynthParams { seed: *seed, scenes: train + val + test, size: *size };
            let (spec, scenes) = synthetic_split(params, *train, *val);
            let r = split_by_ids(scenes, &spec, |s| s.scene_id.as_str())?;
            let recipe = StackRecipe::Vaihingen;
            Ok(Splits {
                train: tile_scenes(&r.train, &recipe, cfg.tile_size, cfg.stride)?,
                val: tile_scenes(&r.val, &recipe, cfg.tile_size, cfg.stride)?,
                test: tile_scenes(&r.test, &recipe, cfg.tile_size, cfg.stride)?,
                class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
            })
        }
        DatasetSource::Mmrt { dir, split } => {
            let (train, val, test) = split_tiles(read_tiles(dir)?, split)?;
            Ok(Splits { train, val, test, class_names: Vec::new() })
        }
    }
}
