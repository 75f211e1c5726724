//! Plain-Rust backends of the wasm exports.

use volperc::data::{stack_modalities, synth_dataset, StackRecipe, SynthParams, CLASS_NAMES, PALETTE};
use volperc::metrics::{average_accuracy, f1_per_class, iou_per_class, mean_f1, miou, ConfusionMatrix};
use volperc::objectives::{dice_loss, joint_loss, soft_ce_loss, PredictionBatch};
use volperc::perceiver::fourier_pos_2d;
use volperc::{Error, Result, Tensor};

fn scene(seed: u64, size: usize) -> Result<volperc::data::MultimodalScene> {
    let mut v = synth_dataset(SynthParams { seed, scenes: 1, size })?;
    Ok(v.remove(0))
}

fn grey(v: f32) -> [u8; 4] {
    let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    [g, g, g, 255]
}

pub fn scene_layer(seed: u64, size: usize, layer: &str) -> Result<Vec<u8>> {
    if size > 512 {
        return Err(Error::invalid("scene size above 512"));
    }
    let s = scene(seed, size)?;
    let stack = stack_modalities(&s, &StackRecipe::Vaihingen)?;
    let n = size * size;
    let plane = |c: usize| &stack.data()[c * n..(c + 1) * n];
    let mut out = Vec::with_capacity(4 * n);
    match layer {
        // IR-R-G false colour, the usual rendering of this band set
        "optical" => {
            let (r, g, ir) = (plane(0), plane(1), plane(2));
            for i in 0..n {
                out.extend([ir[i], r[i], g[i]].map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
                out.push(255);
            }
        }
        "ndsm" => plane(3).iter().for_each(|&v| out.extend(grey(v))),
        "ndvi" => plane(4).iter().for_each(|&v| out.extend(grey((v + 1.0) / 2.0))),
        "mask" => {
            let mask = s.mask.as_deref().unwrap_or_default();
            for &l in mask {
                out.extend(PALETTE[l as usize]);
                out.push(255);
            }
        }
        other => return Err(Error::invalid(format!("unknown layer {other:?}"))),
    }
    Ok(out)
}

pub fn scene_class_fractions(seed: u64, size: usize) -> Result<Vec<f64>> {
    let s = scene(seed, size)?;
    let mask = s.mask.as_deref().unwrap_or_default();
    volperc::metrics::class_proportions([mask], CLASS_NAMES.len())
}

pub fn positional_channels(num_bands: usize) -> usize {
    2 * (2 * num_bands + 1)
}

/// Which axis, function and frequency feature `f` encodes.
pub fn positional_label(num_bands: usize, max_freq: f64, f: usize) -> String {
    let per_axis = 2 * num_bands + 1;
    if num_bands == 0 || f >= 2 * per_axis {
        return String::new();
    }
    let axis = if f < per_axis { "row" } else { "column" };
    let j = f % per_axis;
    let freq = |b: usize| {
        if num_bands == 1 {
            1.0
        } else {
            1.0 + (max_freq / 2.0 - 1.0) * b as f64 / (num_bands - 1) as f64
        }
    };
    if j < num_bands {
        format!("{axis} sin, {:.2} cycles", freq(j))
    } else if j < 2 * num_bands {
        format!("{axis} cos, {:.2} cycles", freq(j - num_bands))
    } else {
        format!("{axis} coordinate")
    }
}

pub fn positional_feature(size: usize, num_bands: usize, max_freq: f64, feature: usize) -> Result<Vec<u8>> {
    if size > 512 || num_bands > 64 {
        return Err(Error::invalid("grid or band count too large"));
    }
    let pe = fourier_pos_2d::<f32>(size, size, num_bands, max_freq)?;
    let p = pe.shape()[1];
    if feature >= p {
        return Err(Error::invalid(format!("feature {feature} outside [0, {p})")));
    }
    Ok(pe.data().chunks(p).flat_map(|row| grey((row[feature] + 1.0) / 2.0)).collect())
}

pub fn losses_for(k: usize, p_true: f64) -> Result<Vec<f64>> {
    if !(2..=64).contains(&k) || !(0.0..=1.0).contains(&p_true) {
        return Err(Error::invalid("need 2 <= k <= 64 and 0 <= p <= 1"));
    }
    let rest = (1.0 - p_true) / (k - 1) as f64;
    let mut probs = vec![rest; k];
    probs[0] = p_true;
    let b = PredictionBatch::from_labels(Tensor::from_vec(&[1, k], probs)?, &[0])?;
    Ok(vec![dice_loss(&b)?, soft_ce_loss(&b)?, joint_loss(&b)?])
}

pub fn metrics_for(k: usize, counts: &[u32]) -> Result<Vec<f64>> {
    let cm = ConfusionMatrix::from_counts(k, counts.iter().map(|&c| c as u64).collect())?;
    let mut out = f1_per_class(&cm);
    out.extend(iou_per_class(&cm));
    out.extend([mean_f1(&cm), miou(&cm).unwrap_or(f64::NAN), average_accuracy(&cm)]);
    Ok(out)
}
