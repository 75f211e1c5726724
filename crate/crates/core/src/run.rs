//! Run directories: `config.txt` (canonical), `model.ckpt`, `losses.csv`,
//! `run.txt` and one `metrics_<split>.csv` per evaluated split.

use std::path::Path;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::Segmenter;
use crate::params::ParamStore;
use crate::train::RunRecord;

pub const CONFIG_FILE: &str = "config.txt";
pub const CHECKPOINT_FILE: &str = "model.ckpt";

pub fn save_run(dir: &Path, cfg: &TrainConfig, params: &ParamStore<f32>, record: &RunRecord) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(CONFIG_FILE), cfg.canonical())?;
    params.save(dir.join(CHECKPOINT_FILE))?;
    std::fs::write(dir.join("losses.csv"), record.losses_csv())?;
    let final_loss = record.losses.last().map(|l| format!("{l:e}")).unwrap_or_default();
    std::fs::write(
        dir.join("run.txt"),
        format!(
            "config_hash={}\nsteps={}\nfinal_loss={final_loss}\nwall_seconds={:.3}\n",
            record.config_hash,
            record.losses.len(),
            record.seconds
        ),
    )?;
    for (split, report) in &record.reports {
        std::fs::write(dir.join(format!("metrics_{split}.csv")), report.to_csv())?;
    }
    Ok(())
}

/// Rebuilds the model described by `config.txt` and loads `model.ckpt` into it.
pub fn load_run(dir: &Path) -> Result<(TrainConfig, Segmenter, ParamStore<f32>)> {
    let cfg = TrainConfig::load(dir.join(CONFIG_FILE))?;
    let ckpt = ParamStore::<f32>::load(dir.join(CHECKPOINT_FILE))?;
    let (model, params) = model_from_checkpoint(&cfg, &ckpt)?;
    Ok((cfg, model, params))
}

pub fn model_from_checkpoint(cfg: &TrainConfig, ckpt: &ParamStore<f32>) -> Result<(Segmenter, ParamStore<f32>)> {
    let mut params = ParamStore::<f32>::new(cfg.seed);
    let model = Segmenter::new(&cfg.model_config(), &mut params)?;
    params.load_from(ckpt).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("checkpoint does not fit config: {m}")),
        e => e,
    })?;
    Ok((model, params))
}
