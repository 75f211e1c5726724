use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use volperc::config::{DatasetSource, TrainConfig};
use volperc::data::{mask_to_pgm, mask_to_ppm, read_mmrt, MultimodalScene, StackRecipe};
use volperc::dataset::{load_dataset, mmrt_to_tile, tile_file_name, tile_scenes, write_tiles, Splits};
use volperc::gradcheck_suite::{self, END_TO_END_TOLERANCE, OPS, OP_TOLERANCE};
use volperc::metrics::class_proportions;
use volperc::perceiver::QuerySource;
use volperc::preprocess::PreprocessorKind;
use volperc::run::{load_run, save_run};
use volperc::train::{class_names, compare_preprocessors, evaluate, train, RunRecord};
use volperc::Error;

/// Exit 1: the input was rejected. Exit 2: something failed while running.
enum Failure {
    Invalid(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) | Error::NonFinite(_) => Failure::Runtime(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

#[derive(Parser)]
#[command(name = "volperc", version, about = "Multimodal segmentation with a latent cross-attention model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stack and tile scenes into MMRT files.
    PrepareData(PrepareArgs),
    /// Train a model and write a run directory.
    Train(TrainArgs),
    /// Score a trained run on one split.
    Evaluate(EvaluateArgs),
    /// Segment one MMRT tile.
    Predict(PredictArgs),
    /// Train several preprocessors under one budget and rank them.
    ComparePreprocessors(CompareArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Per-class pixel fractions of each split.
    ClassStats(ClassStatsArgs),
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    preprocessor: Option<PreprocessorKind>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tile_size: Option<usize>,
    /// `position` or `features`
    #[arg(long)]
    query_source: Option<String>,
}

#[derive(Args)]
struct PrepareArgs {
    /// Run config; without --input its synthetic dataset is generated.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of whole-scene MMRT files with raw bands (R, G, B, IR, DSM).
    #[arg(long)]
    input: Option<PathBuf>,
    /// vaihingen, potsdam, or a comma list of five band names
    #[arg(long, default_value = "vaihingen")]
    recipe: String,
    #[arg(long)]
    tile_size: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
    /// Print the loss every this many steps.
    #[arg(long, default_value_t = 10)]
    log_every: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Where to write the CSV and PPM previews (default: the run directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    tile: PathBuf,
    /// Output path prefix; writes `<out>.pgm` and `<out>.ppm`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "identity,conv2d:16,unet2d:2:16,unet3d:8:16")]
    kinds: Vec<PreprocessorKind>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    /// Class whose F1 ranks the preprocessors.
    #[arg(long, default_value_t = 3)]
    small_class: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct GradcheckArgs {
    /// An op name, `end-to-end`, or `all`.
    #[arg(long, default_value = "all")]
    scope: String,
}

#[derive(Args)]
struct ClassStatsArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Restrict to one split.
    #[arg(long)]
    split: Option<String>,
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig, Failure> {
    Ok(match path {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    })
}

fn apply(cfg: &mut TrainConfig, o: &Overrides) -> CmdResult {
    if let Some(v) = o.preprocessor {
        cfg.preprocessor = v;
    }
    if let Some(v) = o.steps {
        cfg.steps = v;
    }
    if let Some(v) = o.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = o.lr {
        cfg.lr = v;
    }
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = o.tile_size {
        cfg.tile_size = v;
        cfg.stride = v;
    }
    if let Some(v) = &o.query_source {
        cfg.query_source = match v.as_str() {
            "position" => QuerySource::Position,
            "features" => QuerySource::InputFeatures,
            _ => return Err(Failure::Invalid(format!("query source must be position or features, got {v:?}"))),
        };
    }
    cfg.validate()?;
    Ok(())
}

fn recipe(s: &str) -> Result<StackRecipe, Failure> {
    Ok(match s {
        "vaihingen" => StackRecipe::Vaihingen,
        "potsdam" => StackRecipe::Potsdam,
        list => StackRecipe::Custom(list.split(',').map(|b| b.trim().to_string()).collect()),
    })
}

fn prepare(a: PrepareArgs) -> CmdResult {
    let cfg = load_config(a.config.as_deref())?;
    let tile = a.tile_size.unwrap_or(cfg.tile_size);
    let stride = a.stride.unwrap_or(if a.tile_size.is_some() { tile } else { cfg.stride });
    match &a.input {
        Some(dir) => {
            let recipe = recipe(&a.recipe)?;
            let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("mmrt"))
                .collect();
            paths.sort();
            if paths.is_empty() {
                return Err(Failure::Invalid(format!("no .mmrt scenes in {}", dir.display())));
            }
            let mut total = 0;
            let mut classes = 0;
            for p in &paths {
                let m = read_mmrt(p)?;
                classes = classes.max(m.num_classes);
                let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
                let mut scene = MultimodalScene::new(&id, m.height, m.width);
                let plane = m.height * m.width;
                for (i, name) in m.band_names.iter().enumerate() {
                    scene.add_band(name, m.bands[i * plane..(i + 1) * plane].to_vec())?;
                }
                if let Some(mask) = m.mask {
                    scene.set_mask(mask, m.num_classes)?;
                }
                let tiles = tile_scenes(&[scene], &recipe, tile, stride)?;
                write_tiles(&a.out, &tiles, &recipe.channels(), m.num_classes)?;
                total += tiles.len();
            }
            println!("wrote {total} tiles from {} scenes to {} ({classes} classes)", paths.len(), a.out.display());
        }
        None => {
            let mut cfg = cfg;
            cfg.tile_size = tile;
            cfg.stride = stride;
            if !matches!(cfg.dataset, DatasetSource::Synthetic { .. }) {
                return Err(Failure::Invalid("prepare-data needs --input for an mmrt dataset".into()));
            }
            cfg.validate()?;
            let splits = load_dataset(&cfg)?;
            let names = StackRecipe::Vaihingen.channels();
            let mut lines = String::from("dataset = mmrt\n");
            let _ = writeln!(lines, "mmrt.dir = {}", a.out.display());
            for (split, tiles) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
                write_tiles(&a.out, tiles, &names, cfg.classes)?;
                let mut ids: Vec<&str> = tiles.iter().map(|t| t.origin.scene_id.as_str()).collect();
                ids.dedup();
                let _ = writeln!(lines, "split.{split} = {}", ids.join(","));
                println!("{split}: {} tiles", tiles.len());
            }
            std::fs::write(a.out.join("dataset.cfg"), lines)?;
            println!("tiles and dataset.cfg written to {}", a.out.display());
        }
    }
    Ok(())
}

fn run_train(a: TrainArgs) -> CmdResult {
    let mut cfg = load_config(a.config.as_deref())?;
    apply(&mut cfg, &a.overrides)?;
    let splits = load_dataset(&cfg)?;
    if splits.train.is_empty() {
        return Err(Failure::Invalid("training split is empty".into()));
    }
    let names = class_names(&splits.class_names, cfg.classes);
    let hash = cfg.hash();
    println!("config {hash}: {} train / {} val tiles, preprocessor {}", splits.train.len(), splits.val.len(), cfg.preprocessor);
    let every = a.log_every.max(1);
    let out = train(&cfg.model_config(), &cfg.train_options(names.clone()), &splits.train, &splits.val, |s| {
        if s.step % every == 0 || s.step == 1 {
            println!("step {:>5} loss {:.6}", s.step, s.loss);
        }
    })?;
    for (step, r) in &out.validation {
        println!("val@{step}: meanF1 {:.4} mIoU {:.4}", r.mean_f1, r.miou);
    }
    let mut reports = vec![("train".to_string(), evaluate(&out.model, &out.params, &splits.train, &names)?)];
    if !splits.val.is_empty() {
        reports.push(("val".to_string(), evaluate(&out.model, &out.params, &splits.val, &names)?));
    }
    let record = RunRecord { config_hash: hash, losses: out.losses.clone(), reports, seconds: out.seconds };
    save_run(&a.out, &cfg, &out.params, &record)?;
    println!("{}", record.reports[0].1.to_csv().trim_end());
    println!("run written to {} in {:.1}s", a.out.display(), out.seconds);
    Ok(())
}

fn split_of<'a>(splits: &'a Splits, name: &str) -> Result<&'a [volperc::data::TileSample], Failure> {
    let tiles = splits.get(name)?;
    if tiles.is_empty() {
        return Err(Failure::Invalid(format!("split {name} has no tiles")));
    }
    Ok(tiles)
}

fn run_evaluate(a: EvaluateArgs) -> CmdResult {
    let (cfg, model, params) = load_run(&a.run)?;
    let splits = load_dataset(&cfg)?;
    let tiles = split_of(&splits, &a.split)?;
    let names = class_names(&splits.class_names, cfg.classes);
    let report = evaluate(&model, &params, tiles, &names)?;
    let out = a.out.unwrap_or_else(|| a.run.clone());
    let previews = out.join(format!("previews_{}", a.split));
    std::fs::create_dir_all(&previews)?;
    for t in tiles {
        let pred = model.predict(&params, &t.features)?;
        let n = t.tile_size();
        let stem = tile_file_name(&t.origin).trim_end_matches(".mmrt").to_string();
        std::fs::write(previews.join(format!("{stem}.ppm")), mask_to_ppm(&pred, n, n)?)?;
    }
    let csv = report.to_csv();
    std::fs::write(out.join(format!("metrics_{}.csv", a.split)), &csv)?;
    print!("{csv}");
    Ok(())
}

fn run_predict(a: PredictArgs) -> CmdResult {
    let (cfg, model, params) = load_run(&a.run)?;
    let m = read_mmrt(&a.tile)?;
    if m.channels() != 5 || m.height != cfg.tile_size || m.width != cfg.tile_size {
        return Err(Failure::Invalid(format!(
            "tile is {}x{}x{}, model expects 5x{}x{}",
            m.channels(),
            m.height,
            m.width,
            cfg.tile_size,
            cfg.tile_size
        )));
    }
    let (h, w) = (m.height, m.width);
    let tile = mmrt_to_tile(m, Default::default())?;
    let pred = model.predict(&params, &tile.features)?;
    let with_ext = |ext: &str| {
        let mut p = a.out.clone().into_os_string();
        p.push(ext);
        PathBuf::from(p)
    };
    std::fs::write(with_ext(".pgm"), mask_to_pgm(&pred, h, w)?)?;
    std::fs::write(with_ext(".ppm"), mask_to_ppm(&pred, h, w)?)?;
    println!("wrote {} and {}", with_ext(".pgm").display(), with_ext(".ppm").display());
    Ok(())
}

fn run_compare(a: CompareArgs) -> CmdResult {
    let mut cfg = load_config(a.config.as_deref())?;
    apply(&mut cfg, &a.overrides)?;
    let splits = load_dataset(&cfg)?;
    let eval = if !splits.test.is_empty() { &splits.test } else { &splits.val };
    let table = compare_preprocessors(&cfg, &a.kinds, &a.seeds, &splits.train, eval, a.small_class, |k, r| {
        eprintln!("{k} seed {}: small-class F1 {:.4} mIoU {:.4} ({:.0}s)", r.seed, r.small_f1, r.miou, r.seconds);
    })?;
    let csv = table.to_csv();
    print!("{csv}");
    let order: Vec<String> = table.ranking().iter().map(|r| r.kind.to_string()).collect();
    eprintln!("ranking (low to high small-class F1): {}", order.join(" < "));
    if let Some(p) = a.out {
        std::fs::write(p, csv)?;
    }
    Ok(())
}

fn run_gradcheck(a: GradcheckArgs) -> CmdResult {
    let scopes: Vec<&str> = match a.scope.as_str() {
        "all" => OPS.iter().copied().chain(["end-to-end"]).collect(),
        s => vec![s],
    };
    let mut failed = Vec::new();
    for s in scopes {
        let (report, tol) = if s == "end-to-end" {
            (gradcheck_suite::check_end_to_end(&gradcheck_suite::miniature_config())?, END_TO_END_TOLERANCE)
        } else {
            (gradcheck_suite::check_op(s)?, OP_TOLERANCE)
        };
        let ok = report.max_rel_error < tol;
        println!("{s:<18} max_rel_error {:.3e} (< {tol:e}) {}", report.max_rel_error, if ok { "PASS" } else { "FAIL" });
        if !ok {
            failed.push(s);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Invalid(format!("gradient check failed for {}", failed.join(", "))))
    }
}

fn run_class_stats(a: ClassStatsArgs) -> CmdResult {
    let cfg = load_config(a.config.as_deref())?;
    let splits = load_dataset(&cfg)?;
    let names = class_names(&splits.class_names, cfg.classes);
    let chosen: Vec<&str> = match &a.split {
        Some(s) => vec![s.as_str()],
        None => vec!["train", "val", "test"],
    };
    let mut out = String::from("split,class,fraction,bar\n");
    let mut any = false;
    for name in chosen {
        let tiles = splits.get(name)?;
        if tiles.is_empty() {
            if a.split.is_some() {
                return Err(Failure::Invalid(format!("split {name} has no tiles")));
            }
            continue;
        }
        if tiles.iter().any(|t| t.mask.is_empty()) {
            return Err(Failure::Invalid(format!("split {name} has tiles without masks")));
        }
        let fr = class_proportions(tiles.iter().map(|t| t.mask.as_slice()), cfg.classes)?;
        for (c, f) in fr.iter().enumerate() {
            let bar = "#".repeat((f * 50.0).round() as usize);
            let _ = writeln!(out, "{name},{},{f:.9},{bar}", names[c]);
        }
        any = true;
    }
    if !any {
        return Err(Failure::Invalid("no split has tiles".into()));
    }
    print!("{out}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::PrepareData(a) => prepare(a),
        Command::Train(a) => run_train(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Predict(a) => run_predict(a),
        Command::ComparePreprocessors(a) => run_compare(a),
        Command::Gradcheck(a) => run_gradcheck(a),
        Command::ClassStats(a) => run_class_stats(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
