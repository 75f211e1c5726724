use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
preprocessor = unet3d:2:4
num_latents = 8
latent_dim = 16
num_heads = 2
num_blocks = 1
pos_encoding = fourier:4:16
tile_size = 16
stride = 16
steps = 4
synthetic.size = 32
synthetic.train = 1
synthetic.val = 0
synthetic.test = 1
";

fn volperc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_volperc")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path) -> String {
    let p = dir.join("tiny.cfg");
    std::fs::write(&p, TINY).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn usage_errors_exit_1_and_help_exits_0() {
    assert_eq!(code(&volperc(&["--help"])), 0);
    assert_eq!(code(&volperc(&["frobnicate"])), 1);
    assert_eq!(code(&volperc(&["train"])), 1);
    assert_eq!(code(&volperc(&["gradcheck", "--scope", "no-such-op"])), 1);
}

#[test]
fn bad_config_is_a_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.cfg");
    std::fs::write(&p, "num_heads = 3\nlatent_dim = 16\n").unwrap();
    let o = volperc(&["class-stats", "--config", p.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    std::fs::write(&p, "unknown_key = 1\n").unwrap();
    assert_eq!(code(&volperc(&["class-stats", "--config", p.to_str().unwrap()])), 1);
}

#[test]
fn missing_files_are_runtime_failures() {
    let o = volperc(&["evaluate", "--run", "/nonexistent/run"]);
    assert_eq!(code(&o), 2);
    let o = volperc(&["class-stats", "--config", "/nonexistent/cfg"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn gradcheck_single_op() {
    let o = volperc(&["gradcheck", "--scope", "softmax"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("PASS"));
}

#[test]
fn class_stats_fractions_sum_to_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let o = volperc(&["class-stats", "--config", &cfg, "--split", "train"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "split,class,fraction,bar");
    assert_eq!(lines.len(), 5);
    let total: f64 = lines[1..].iter().map(|l| l.split(',').nth(2).unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-6);
    assert_eq!(code(&volperc(&["class-stats", "--config", &cfg, "--split", "val"])), 1);
}

#[test]
fn train_evaluate_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let (data_s, run_s) = (data.to_str().unwrap(), run.to_str().unwrap());

    let o = volperc(&["prepare-data", "--config", &cfg, "--out", data_s]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(data.join("dataset.cfg").exists());

    let o = volperc(&["train", "--config", &cfg, "--out", run_s, "--log-every", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["config.txt", "model.ckpt", "losses.csv", "run.txt", "metrics_train.csv"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let losses = std::fs::read_to_string(run.join("losses.csv")).unwrap();
    assert_eq!(losses.lines().count(), 5);

    let o = volperc(&["evaluate", "--run", run_s, "--split", "test"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(run.join("metrics_test.csv")).unwrap();
    assert!(csv.lines().last().unwrap().starts_with("summary,"));
    assert_eq!(std::fs::read_dir(run.join("previews_test")).unwrap().count(), 4);
    assert_eq!(code(&volperc(&["evaluate", "--run", run_s, "--split", "val"])), 1);

    let tile = std::fs::read_dir(&data)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "mmrt"))
        .unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let o = volperc(&["predict", "--run", run_s, "--tile", tile.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let pgm = std::fs::read(out_a.with_extension("pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n16 16\n255\n"));
    assert_eq!(pgm, std::fs::read(out_b.with_extension("pgm")).unwrap());
    assert!(std::fs::read(out_a.with_extension("ppm")).unwrap().starts_with(b"P6\n"));

    // A tile of the wrong size is rejected as invalid input.
    let wrong_cfg = dir.path().join("wrong.cfg");
    std::fs::write(&wrong_cfg, TINY.replace("tile_size = 16", "tile_size = 32").replace("stride = 16", "stride = 32")).unwrap();
    let wrong = dir.path().join("wrong");
    let o = volperc(&["prepare-data", "--config", wrong_cfg.to_str().unwrap(), "--out", wrong.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let big = std::fs::read_dir(&wrong).unwrap().map(|e| e.unwrap().path()).find(|p| p.extension().is_some_and(|e| e == "mmrt")).unwrap();
    let o = volperc(&["predict", "--run", run_s, "--tile", big.to_str().unwrap(), "--out", dir.path().join("c").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn prepared_tiles_train_like_the_synthetic_source() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let data = dir.path().join("data");
    assert_eq!(code(&volperc(&["prepare-data", "--config", &cfg, "--out", data.to_str().unwrap()])), 0);
    // Point a config at the written tiles and split file.
    let split = std::fs::read_to_string(data.join("dataset.cfg")).unwrap();
    let body: String = TINY.lines().filter(|l| !l.starts_with("synthetic.")).map(|l| format!("{l}\n")).collect();
    let mmrt_cfg = dir.path().join("mmrt.cfg");
    std::fs::write(&mmrt_cfg, format!("{body}{split}")).unwrap();
    let a = volperc(&["class-stats", "--config", &cfg, "--split", "train"]);
    let b = volperc(&["class-stats", "--config", mmrt_cfg.to_str().unwrap(), "--split", "train"]);
    assert_eq!(code(&b), 0, "{}", String::from_utf8_lossy(&b.stderr));
    // Tile files carry no class names, so only the fractions are compared.
    let fractions = |o: &Output| -> Vec<String> { stdout(o).lines().skip(1).map(|l| l.split(',').nth(2).unwrap().to_string()).collect() };
    assert_eq!(fractions(&a), fractions(&b));
}

#[test]
fn compare_writes_one_row_per_kind() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("cmp.csv");
    let o = volperc(&[
        "compare-preprocessors",
        "--config",
        &cfg,
        "--kinds",
        "identity,conv2d:4",
        "--seeds",
        "0",
        "--steps",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out).unwrap();
    assert_eq!(csv.lines().count(), 3);
}
