//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored; unknown keys are errors. The
//! config hash is the SHA-256 of [`TrainConfig::canonical`], which lists
//! every key in a fixed order with normalized values, so two files hash
//! equal exactly when they describe the same run.

use std::fmt::Write as _;
use std::path::PathBuf;

use sha2::{Digest, Sha256};

use crate::data::SplitSpec;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::optim::AdamConfig;
use crate::perceiver::{PerceiverConfig, PosEncodingKind, QuerySource};
use crate::preprocess::PreprocessorKind;
use crate::train::TrainOptions;

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    /// Generated scenes; the first `train` go to training, then `val`, then `test`.
    Synthetic { seed: u64, size: usize, train: usize, val: usize, test: usize },
    /// A directory of `.mmrt` tiles named `<scene>__r<row>_c<col>.mmrt`.
    Mmrt { dir: PathBuf, split: SplitSpec },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub preprocessor: PreprocessorKind,
    pub num_latents: usize,
    pub latent_dim: usize,
    pub num_heads: usize,
    pub num_blocks: usize,
    pub ffn_ratio: usize,
    pub pos_encoding: PosEncodingKind,
    pub query_source: QuerySource,
    pub classes: usize,
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub tile_size: usize,
    pub stride: usize,
    pub val_every: usize,
    pub dataset: DatasetSource,
}

impl Default for TrainConfig {
    /// Desk-scale defaults for the synthetic four-class data.
    fn default() -> Self {
        TrainConfig {
            preprocessor: PreprocessorKind::UNet3D { base_filters: 8, head_channels: 16 },
            num_latents: 64,
            latent_dim: 64,
            num_heads: 4,
            num_blocks: 2,
            ffn_ratio: 2,
            pos_encoding: PosEncodingKind::FourierFixed2D { num_bands: 16, max_freq: 64.0 },
            query_source: QuerySource::InputFeatures,
            classes: 4,
            lr: 1e-3,
            steps: 300,
            batch_size: 2,
            seed: 0,
            tile_size: 64,
            stride: 64,
            val_every: 0,
            dataset: DatasetSource::Synthetic { seed: 1, size: 64, train: 8, val: 0, test: 0 },
        }
    }
}

fn pos_str(p: &PosEncodingKind) -> String {
    match *p {
        PosEncodingKind::FourierFixed2D { num_bands, max_freq } => format!("fourier:{num_bands}:{max_freq}"),
        PosEncodingKind::Learned { dim } => format!("learned:{dim}"),
    }
}

fn parse_pos(v: &str) -> Result<PosEncodingKind> {
    let parts: Vec<&str> = v.split(':').collect();
    let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Config(format!("bad pos_encoding {v:?}")));
    match parts.as_slice() {
        ["fourier", nb, mf] => Ok(PosEncodingKind::FourierFixed2D { num_bands: num(nb)? as usize, max_freq: num(mf)? }),
        ["learned", d] => Ok(PosEncodingKind::Learned { dim: num(d)? as usize }),
        _ => Err(Error::Config(format!("bad pos_encoding {v:?}; expected fourier:<bands>:<max_freq> or learned:<dim>"))),
    }
}

fn query_str(q: QuerySource) -> &'static str {
    match q {
        QuerySource::Position => "position",
        QuerySource::InputFeatures => "features",
    }
}

fn parse_list(v: &str) -> Vec<String> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        let mut kind = None::<String>;
        let (mut syn_seed, mut syn_size, mut syn_train, mut syn_val, mut syn_test) = (1u64, 64usize, 8usize, 0usize, 0usize);
        let mut dir = None::<PathBuf>;
        let mut split_name = None::<String>;
        let mut custom = SplitSpec::default();
        let mut seen = std::collections::HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {k}", lineno + 1)));
            }
            let bad = || Error::Config(format!("line {}: bad value {v:?} for {k}", lineno + 1));
            macro_rules! num {
                () => {
                    v.parse().map_err(|_| bad())?
                };
            }
            match k {
                "preprocessor" => c.preprocessor = v.parse()?,
                "num_latents" => c.num_latents = num!(),
                "latent_dim" => c.latent_dim = num!(),
                "num_heads" => c.num_heads = num!(),
                "num_blocks" => c.num_blocks = num!(),
                "ffn_ratio" => c.ffn_ratio = num!(),
                "pos_encoding" => c.pos_encoding = parse_pos(v)?,
                "query_source" => {
                    c.query_source = match v {
                        "position" => QuerySource::Position,
                        "features" => QuerySource::InputFeatures,
                        _ => return Err(bad()),
                    }
                }
                "classes" => c.classes = num!(),
                "lr" => c.lr = num!(),
                "steps" => c.steps = num!(),
                "batch_size" => c.batch_size = num!(),
                "seed" => c.seed = num!(),
                "tile_size" => c.tile_size = num!(),
                "stride" => c.stride = num!(),
                "val_every" => c.val_every = num!(),
                "dataset" => kind = Some(v.to_string()),
                "synthetic.seed" => syn_seed = num!(),
                "synthetic.size" => syn_size = num!(),
                "synthetic.train" => syn_train = num!(),
                "synthetic.val" => syn_val = num!(),
                "synthetic.test" => syn_test = num!(),
                "mmrt.dir" => dir = Some(PathBuf::from(v)),
                "split" => split_name = Some(v.to_string()),
                "split.train" => custom.train = parse_list(v),
                "split.val" => custom.val = parse_list(v),
                "split.test" => custom.test = parse_list(v),
                _ => return Err(Error::Config(format!("line {}: unknown key {k}", lineno + 1))),
            }
        }
        c.dataset = match kind.as_deref().unwrap_or("synthetic") {
            "synthetic" => DatasetSource::Synthetic { seed: syn_seed, size: syn_size, train: syn_train, val: syn_val, test: syn_test },
            "mmrt" => {
                let dir = dir.ok_or_else(|| Error::Config("dataset = mmrt needs mmrt.dir".into()))?;
                let split = match split_name.as_deref().unwrap_or("custom") {
                    "vaihingen" => SplitSpec::vaihingen(),
                    "potsdam" => SplitSpec::potsdam(),
                    "custom" => custom,
                    s => return Err(Error::Config(format!("unknown split {s:?}"))),
                };
                DatasetSource::Mmrt { dir, split }
            }
            d => return Err(Error::Config(format!("unknown dataset {d:?}"))),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("steps", self.steps),
            ("batch_size", self.batch_size),
            ("tile_size", self.tile_size),
            ("stride", self.stride),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{k} must be positive")));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        match &self.dataset {
            DatasetSource::Synthetic { size, train, .. } => {
                if *train == 0 {
                    return Err(Error::Config("synthetic.train must be positive".into()));
                }
                if *size < 32 || self.tile_size > *size {
                    return Err(Error::Config(format!("synthetic.size {size} must be >= 32 and >= tile_size")));
                }
            }
            DatasetSource::Mmrt { split, .. } => split.validate()?,
        }
        self.model_config().validate()
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            in_channels: 5,
            tile_size: self.tile_size,
            preprocessor: self.preprocessor,
            perceiver: PerceiverConfig {
                num_latents: self.num_latents,
                latent_dim: self.latent_dim,
                num_heads: self.num_heads,
                num_blocks: self.num_blocks,
                input_channels: 0,
                output_classes: self.classes,
                pos_encoding: self.pos_encoding,
                query_source: self.query_source,
                ffn_ratio: self.ffn_ratio,
            },
        }
    }

    pub fn train_options(&self, class_names: Vec<String>) -> TrainOptions {
        TrainOptions {
            steps: self.steps,
            batch_size: self.batch_size,
            seed: self.seed,
            adam: AdamConfig { lr: self.lr, ..AdamConfig::default() },
            val_every: self.val_every,
            class_names,
        }
    }

    /// Every key, fixed order, one `key=value` per line.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("preprocessor", self.preprocessor.to_string());
        kv("num_latents", self.num_latents.to_string());
        kv("latent_dim", self.latent_dim.to_string());
        kv("num_heads", self.num_heads.to_string());
        kv("num_blocks", self.num_blocks.to_string());
        kv("ffn_ratio", self.ffn_ratio.to_string());
        kv("pos_encoding", pos_str(&self.pos_encoding));
        kv("query_source", query_str(self.query_source).into());
        kv("classes", self.classes.to_string());
        kv("lr", format!("{:e}", self.lr));
        kv("steps", self.steps.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("seed", self.seed.to_string());
        kv("tile_size", self.tile_size.to_string());
        kv("stride", self.stride.to_string());
        kv("val_every", self.val_every.to_string());
        match &self.dataset {
            DatasetSource::Synthetic { seed, size, train, val, test } => {
                kv("dataset", "synthetic".into());
                kv("synthetic.seed", seed.to_string());
                kv("synthetic.size", size.to_string());
                kv("synthetic.train", train.to_string());
                kv("synthetic.val", val.to_string());
                kv("synthetic.test", test.to_string());
            }
            DatasetSource::Mmrt { dir, split } => {
                kv("dataset", "mmrt".into());
                kv("mmrt.dir", dir.display().to_string());
                kv("split", "custom".into());
                kv("split.train", split.train.join(","));
                kv("split.val", split.val.join(","));
                kv("split.test", split.test.join(","));
            }
        }
        s
    }

    /// Hex SHA-256 of [`Self::canonical`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_reparses_to_same_config() {
        let c = TrainConfig::parse("preprocessor = unet2d:2:8\nlr = 0.002 # faster\n\nseed=3\n").unwrap();
        assert_eq!(c.preprocessor, PreprocessorKind::UNet2D { stages: 2, base_filters: 8 });
        let again = TrainConfig::parse(&c.canonical()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.hash(), c.hash());
    }

    #[test]
    fn hash_tracks_content_not_formatting() {
        let a = TrainConfig::parse("seed = 1\nlr = 1e-3").unwrap();
        let b = TrainConfig::parse("# comment\nlr=0.001\n  seed=1  ").unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = TrainConfig::parse("seed = 2\nlr = 1e-3").unwrap();
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn rejects_bad_input() {
        for bad in ["steps = 0", "nonsense = 1", "seed = x", "seed = 1\nseed = 2", "tile_size = 62", "dataset = mmrt", "lr"] {
            assert!(TrainConfig::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn mmrt_presets() {
        let c = TrainConfig::parse("dataset = mmrt\nmmrt.dir = /tmp/x\nsplit = vaihingen").unwrap();
        match &c.dataset {
            DatasetSource::Mmrt { split, .. } => assert_eq!(split.train.len(), 15),
            _ => panic!(),
        }
        assert_eq!(TrainConfig::parse(&c.canonical()).unwrap(), c);
    }
}
