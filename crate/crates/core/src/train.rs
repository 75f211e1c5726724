//! Training loop, evaluation and the preprocessor comparison harness.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::data::TileSample;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::metrics::{f1_per_class, fmt_metric, miou, ConfusionMatrix, MetricsReport};
use crate::model::{ModelConfig, Segmenter};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::params::ParamStore;
use crate::preprocess::PreprocessorKind;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Evaluate on the validation tiles every this many steps (0 = never).
    pub val_every: usize,
    /// Row labels for metric reports; empty means `class0..`.
    pub class_names: Vec<String>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            steps: 300,
            batch_size: 2,
            seed: 0,
            adam: AdamConfig::default(),
            val_every: 0,
            class_names: Vec::new(),
        }
    }
}

/// `names` if it has one entry per class, otherwise `class0, class1, ...`.
pub fn class_names(names: &[String], k: usize) -> Vec<String> {
    if names.len() == k {
        names.to_vec()
    } else {
        (0..k).map(|i| format!("class{i}")).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub loss: f32,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Segmenter,
    pub params: ParamStore<f32>,
    pub losses: Vec<f32>,
    /// `(step, report)` for each validation pass.
    pub validation: Vec<(usize, MetricsReport)>,
    pub seconds: f64,
}

/// Batch order: tiles are reshuffled at each pass over the data from one
/// seeded stream, so batch composition depends only on the seed.
struct Batches {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl Batches {
    fn new(n: usize, seed: u64) -> Self {
        Batches { rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ba7c), order: (0..n).collect(), pos: n }
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

fn check_tiles(config: &ModelConfig, tiles: &[TileSample], what: &str) -> Result<()> {
    let t = config.tile_size;
    for s in tiles {
        if s.features.shape() != [config.in_channels, t, t] {
            return Err(Error::shape(format!(
                "{what} tile {:?} is {:?}, model expects [{}, {t}, {t}]",
                s.origin,
                s.features.shape(),
                config.in_channels
            )));
        }
        if s.mask.len() != t * t {
            return Err(Error::invalid(format!("{what} tile {:?} has no label mask", s.origin)));
        }
        let k = config.perceiver.output_classes;
        if s.mask.iter().any(|&l| l as usize >= k) {
            return Err(Error::invalid(format!("{what} tile {:?} has labels >= {k}", s.origin)));
        }
    }
    Ok(())
}

/// Mean joint loss over a batch and the averaged parameter gradients.
pub fn batch_gradients(
    model: &Segmenter,
    params: &ParamStore<f32>,
    tiles: &[&TileSample],
) -> Result<(f32, Vec<crate::tensor::Tensor<f32>>)> {
    let scale = 1.0 / tiles.len() as f32;
    let mut total = 0f32;
    let mut acc: Option<Vec<crate::tensor::Tensor<f32>>> = None;
    for s in tiles {
        let mut g = Graph::new();
        let b = params.bind(&mut g);
        let x = g.constant(s.features.clone());
        let loss = model.loss(&mut g, &b, x, &s.mask)?;
        total += g.value(loss).item()?;
        let mut grads = g.backward(loss)?;
        let grads = params.collect_grads(&b, &mut grads);
        match &mut acc {
            None => acc = Some(grads),
            Some(a) => {
                for (x, y) in a.iter_mut().zip(&grads) {
                    for (u, v) in x.data_mut().iter_mut().zip(y.data()) {
                        *u += v;
                    }
                }
            }
        }
    }
    let mut grads = acc.ok_or_else(|| Error::invalid("empty batch"))?;
    for t in &mut grads {
        t.data_mut().iter_mut().for_each(|v| *v *= scale);
    }
    Ok((total * scale, grads))
}

/// Trains a fresh model. `on_step` sees every step's loss as it happens.
pub fn train(
    config: &ModelConfig,
    opts: &TrainOptions,
    train_tiles: &[TileSample],
    val_tiles: &[TileSample],
    mut on_step: impl FnMut(&StepLog),
) -> Result<TrainOutcome> {
    if opts.steps == 0 || opts.batch_size == 0 {
        return Err(Error::Config("steps and batch_size must be positive".into()));
    }
    if train_tiles.is_empty() {
        return Err(Error::invalid("no training tiles"));
    }
    check_tiles(config, train_tiles, "training")?;
    check_tiles(config, val_tiles, "validation")?;
    let start = Instant::now();
    let mut params = ParamStore::<f32>::new(opts.seed);
    let model = Segmenter::new(config, &mut params)?;
    let mut adam = AdamState::new(params.tensors_mut());
    let mut batches = Batches::new(train_tiles.len(), opts.seed);
    let mut losses = Vec::with_capacity(opts.steps);
    let mut validation = Vec::new();
    for step in 1..=opts.steps {
        let idx = batches.next(opts.batch_size);
        let batch: Vec<&TileSample> = idx.iter().map(|&i| &train_tiles[i]).collect();
        let (loss, grads) = batch_gradients(&model, &params, &batch).map_err(|e| match e {
            Error::NonFinite(m) => Error::NonFinite(format!("step {step}: {m}")),
            e => e,
        })?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("step {step}: loss is {loss}")));
        }
        adam_step(params.tensors_mut(), &grads, &mut adam, &opts.adam)?;
        losses.push(loss);
        on_step(&StepLog { step, loss });
        if opts.val_every > 0 && step % opts.val_every == 0 && !val_tiles.is_empty() {
            let cm = confusion(&model, &params, val_tiles)?;
            let names = class_names(&opts.class_names, cm.num_classes());
            validation.push((step, MetricsReport::from_confusion(cm, &names)?));
        }
    }
    Ok(TrainOutcome { model, params, losses, validation, seconds: start.elapsed().as_secs_f64() })
}

/// Confusion matrix of argmax predictions over every pixel of every tile.
pub fn confusion(model: &Segmenter, params: &ParamStore<f32>, tiles: &[TileSample]) -> Result<ConfusionMatrix> {
    check_tiles(&model.config, tiles, "evaluation")?;
    let mut cm = ConfusionMatrix::new(model.config.perceiver.output_classes);
    for s in tiles {
        let pred = model.predict(params, &s.features)?;
        cm.accumulate(&s.mask, &pred)?;
    }
    Ok(cm)
}

/// Metrics over every pixel of `tiles`.
pub fn evaluate(
    model: &Segmenter,
    params: &ParamStore<f32>,
    tiles: &[TileSample],
    names: &[String],
) -> Result<MetricsReport> {
    if tiles.is_empty() {
        return Err(Error::invalid("no tiles to evaluate"));
    }
    let cm = confusion(model, params, tiles)?;
    let names = class_names(names, cm.num_classes());
    MetricsReport::from_confusion(cm, &names)
}

/// Everything a finished run reports.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub config_hash: String,
    pub losses: Vec<f32>,
    /// Final metrics per split name.
    pub reports: Vec<(String, MetricsReport)>,
    pub seconds: f64,
}

impl RunRecord {
    /// `step,loss` with one line per step.
    pub fn losses_csv(&self) -> String {
        let mut s = String::from("step,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            s.push_str(&format!("{},{:e}\n", i + 1, l));
        }
        s
    }
}

/// Outcome of one (preprocessor, seed) training run in a comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub small_f1: f64,
    pub miou: f64,
    pub final_loss: f32,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub kind: PreprocessorKind,
    pub runs: Vec<SeedResult>,
    pub preprocessor_params: usize,
    pub perceiver_core_params: usize,
}

/// Mean over seeds of a metric where NaN marks a class that was never
/// predicted. A never-predicted class contributes 0; the mean is NaN only
/// when every seed is NaN.
pub fn seed_mean(values: &[f64]) -> f64 {
    if values.is_empty() || values.iter().all(|v| v.is_nan()) {
        return f64::NAN;
    }
    values.iter().map(|v| if v.is_nan() { 0.0 } else { *v }).sum::<f64>() / values.len() as f64
}

/// Total order with NaN below every number.
pub fn nan_low_cmp(a: f64, b: f64) -> std::cmp::Ordering {
    match (a.is_nan(), b.is_nan()) {
        (true, true) => std::cmp::Ordering::Equal,
        (true, false) => std::cmp::Ordering::Less,
        (false, true) => std::cmp::Ordering::Greater,
        _ => a.partial_cmp(&b).unwrap(),
    }
}

impl ComparisonRow {
    pub fn mean_small_f1(&self) -> f64 {
        seed_mean(&self.runs.iter().map(|r| r.small_f1).collect::<Vec<_>>())
    }

    pub fn mean_miou(&self) -> f64 {
        seed_mean(&self.runs.iter().map(|r| r.miou).collect::<Vec<_>>())
    }

    pub fn mean_final_loss(&self) -> f64 {
        self.runs.iter().map(|r| r.final_loss as f64).sum::<f64>() / self.runs.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub small_class: usize,
    /// In the order the kinds were given.
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    /// Rows sorted by seed-mean small-class F1, lowest first.
    pub fn ranking(&self) -> Vec<&ComparisonRow> {
        let mut r: Vec<&ComparisonRow> = self.rows.iter().collect();
        r.sort_by(|a, b| nan_low_cmp(a.mean_small_f1(), b.mean_small_f1()));
        r
    }

    /// True when seed-mean small-class F1 strictly increases along `rows`.
    pub fn strictly_increasing(&self) -> bool {
        self.rows
            .windows(2)
            .all(|w| nan_low_cmp(w[0].mean_small_f1(), w[1].mean_small_f1()) == std::cmp::Ordering::Less)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("preprocessor,small_f1_mean,miou_mean,final_loss_mean,preprocessor_params,perceiver_core_params,small_f1_per_seed\n");
        for r in &self.rows {
            let per: Vec<String> = r.runs.iter().map(|x| fmt_metric(x.small_f1)).collect();
            s.push_str(&format!(
                "{},{},{},{:.6},{},{},{}\n",
                r.kind,
                fmt_metric(r.mean_small_f1()),
                fmt_metric(r.mean_miou()),
                r.mean_final_loss(),
                r.preprocessor_params,
                r.perceiver_core_params,
                per.join(";")
            ));
        }
        s
    }
}

/// Trains every kind with every seed under `base`'s perceiver and budget and
/// scores each run on `eval_tiles`.
pub fn compare_preprocessors(
    base: &TrainConfig,
    kinds: &[PreprocessorKind],
    seeds: &[u64],
    train_tiles: &[TileSample],
    eval_tiles: &[TileSample],
    small_class: usize,
    mut on_run: impl FnMut(&PreprocessorKind, &SeedResult),
) -> Result<Comparison> {
    if kinds.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("comparison needs at least one preprocessor and one seed"));
    }
    if eval_tiles.is_empty() {
        return Err(Error::invalid("comparison needs evaluation tiles"));
    }
    if small_class >= base.classes {
        return Err(Error::invalid(format!("small class {small_class} >= classes {}", base.classes)));
    }
    let mut rows = Vec::with_capacity(kinds.len());
    let mut core_params = None;
    for &kind in kinds {
        let mut cfg = base.clone();
        cfg.preprocessor = kind;
        cfg.validate()?;
        let model_cfg = cfg.model_config();
        let mut row = ComparisonRow { kind, runs: Vec::new(), preprocessor_params: 0, perceiver_core_params: 0 };
        for &seed in seeds {
            cfg.seed = seed;
            let out = train(&model_cfg, &cfg.train_options(Vec::new()), train_tiles, &[], |_| {})?;
            row.preprocessor_params = out.model.preprocessor_param_count(&out.params);
            row.perceiver_core_params = out.model.perceiver_core_param_count(&out.params);
            let cm = confusion(&out.model, &out.params, eval_tiles)?;
            let r = SeedResult {
                seed,
                small_f1: f1_per_class(&cm)[small_class],
                miou: miou(&cm).unwrap_or(f64::NAN),
                final_loss: *out.losses.last().unwrap(),
                seconds: out.seconds,
            };
            on_run(&kind, &r);
            row.runs.push(r);
        }
        match core_params {
            None => core_params = Some(row.perceiver_core_params),
            Some(c) if c != row.perceiver_core_params => {
                return Err(Error::invalid(format!(
                    "perceiver parameter count differs across preprocessors: {c} vs {} for {kind}",
                    row.perceiver_core_params
                )))
            }
            Some(_) => {}
        }
        rows.push(row);
    }
    Ok(Comparison { small_class, rows })
}
