use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use estn::imaging::{load_image, save_image};
use estn::tensor::Tensor;

const TINY: &str = "\
# small model for fast runs
channels = 6
blocks = 1
scale = 2
mssa_windows = 2x2,4x4,8x8
bsgm_window = 2x2
train_patch = 8
batch = 2
patch = 8
iterations = 3
checkpoint_every = 0
";

fn estn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_estn")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn textured(h: usize, w: usize, salt: usize) -> Tensor<f32> {
    Tensor::from_fn(vec![3, h, w], |i| (((i + salt) * 2654435761) % 251) as f32 / 250.0)
}

/// Trains the tiny model in `dir` and returns the weights path.
fn trained(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    std::fs::create_dir_all(&data).unwrap();
    save_image(&data.join("a.png"), &textured(24, 24, 0)).unwrap();
    let cfg = dir.join("tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();
    let out = dir.join("run");
    let o = estn(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&out), "--seed", "7"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out.join("weights.bin")
}

#[test]
fn inspect_reports_and_json_agrees() {
    let text = stdout(&estn(&["inspect"]));
    let json: serde_json::Value = serde_json::from_slice(&estn(&["inspect", "--json"]).stdout).unwrap();
    let params = json["params"].as_u64().unwrap();
    assert!(text.contains(&format!("params {params}")));
    assert_eq!(json["scale"], 4);
    let flops = json["flops"].as_f64().unwrap();
    assert!(text.contains(&format!("{:.3} G", flops / 1e9)));
    let a2: serde_json::Value = serde_json::from_slice(&estn(&["inspect", "--json", "--scale", "2"]).stdout).unwrap();
    let tail = |a: u64| 3 * a * a * 60 * 9 + 3 * a * a;
    assert_eq!(params - a2["params"].as_u64().unwrap(), tail(4) - tail(2));
}

#[test]
fn check_filter_and_sabotage() {
    let o = estn(&["check", "--filter", "attention"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let lines: Vec<String> = stdout(&o).lines().filter(|l| l.starts_with("PASS")).map(String::from).collect();
    assert_eq!(lines.len(), 4);
    assert!(lines.iter().all(|l| l.contains("attention.")));

    let bad = estn(&["check", "--filter", "attention", "--sabotage", "softmax"]);
    assert_eq!(code(&bad), 1);
    assert!(stdout(&bad).contains("FAIL attention.rows_sum_to_one"));
    assert!(stderr(&bad).contains("attention.w_mssa_oracle"));

    assert_eq!(code(&estn(&["check", "--filter", "no-such-check"])), 2);
    assert_eq!(code(&estn(&["check", "--sabotage", "gemm"])), 2);
}

#[test]
fn train_errors_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();
    let missing = estn(&["train", "--config", p(&cfg), "--data", p(&dir.path().join("nope")), "--out", p(dir.path())]);
    assert_eq!(code(&missing), 3);
    assert!(stderr(&missing).contains("nope"));

    let bad_cfg = dir.path().join("bad.cfg");
    std::fs::write(&bad_cfg, "channels = 6\nwidth = 3\n").unwrap();
    let o = estn(&["train", "--config", p(&bad_cfg), "--data", p(dir.path()), "--out", p(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("width"));

    let weights = trained(dir.path());
    assert!(weights.exists());
    let first = std::fs::read(dir.path().join("run/loss.csv")).unwrap();
    std::fs::remove_dir_all(dir.path().join("run")).unwrap();
    trained(dir.path());
    assert_eq!(std::fs::read(dir.path().join("run/loss.csv")).unwrap(), first);
    assert!(dir.path().join("run/checkpoint_000000.bin").exists());
    assert!(dir.path().join("run/checkpoint_000003.bin").exists());
}

#[test]
fn infer_shapes_determinism_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let weights = trained(dir.path());
    let input = dir.path().join("in.png");
    save_image(&input, &textured(16, 12, 3)).unwrap();
    let out_a = dir.path().join("a.png");
    let out_b = dir.path().join("b.png");
    for out in [&out_a, &out_b] {
        let o = estn(&["infer", "--weights", p(&weights), "--input", p(&input), "--out", p(out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    assert_eq!(load_image(&out_a).unwrap().shape(), &[3, 32, 24]);
    assert_eq!(std::fs::read(&out_a).unwrap(), std::fs::read(&out_b).unwrap());

    let bytes = std::fs::read(&weights).unwrap();
    std::fs::write(&weights, &bytes[..bytes.len() - 7]).unwrap();
    let o = estn(&["infer", "--weights", p(&weights), "--input", p(&input), "--out", p(&out_a)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("tail.bias"), "{}", stderr(&o));
}

fn csv_rows(text: &str) -> Vec<(String, f64, f64)> {
    text.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect()
}

#[test]
fn eval_reports() {
    let dir = tempfile::tempdir().unwrap();
    let hr = dir.path().join("hr");
    std::fs::create_dir_all(&hr).unwrap();
    for (i, name) in ["a.png", "b.png"].iter().enumerate() {
        let smooth = Tensor::from_fn(vec![3, 32, 32], |j| ((j % 32) as f32 / 31.0 * 0.6 + (i as f32) * 0.2 + ((j / 32) % 32) as f32 / 80.0).min(1.0));
        save_image(&hr.join(name), &smooth).unwrap();
    }
    let report = dir.path().join("self.csv");
    let o = estn(&["eval", "--data", p(&hr), "--sr", p(&hr), "--scale", "4", "--out", p(&report)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = csv_rows(&std::fs::read_to_string(&report).unwrap());
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.1 == 100.0 && r.2 == 1.0));

    let o = estn(&["eval", "--data", p(&hr), "--bicubic", "--scale", "4"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("image,psnr_db,ssim\n"));
    let rows = csv_rows(&text);
    for r in &rows {
        assert!(r.1.is_finite() && r.1 < 100.0, "{r:?}");
    }
    let mean = (rows[0].1 + rows[1].1) / 2.0;
    assert_eq!(rows[2].0, "mean");
    assert!((rows[2].1 - mean).abs() < 1e-5);

    let sr = dir.path().join("sr");
    std::fs::create_dir_all(&sr).unwrap();
    std::fs::copy(hr.join("a.png"), sr.join("a.png")).unwrap();
    let o = estn(&["eval", "--data", p(&hr), "--sr", p(&sr)]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("unpaired"));
}

#[test]
fn lam_outputs_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let weights = trained(dir.path());
    let input = dir.path().join("in.png");
    save_image(&input, &textured(8, 8, 5)).unwrap();
    let out = dir.path().join("lam.png");
    let o = estn(&["lam", "--weights", p(&weights), "--input", p(&input), "--region", "3,5,4,2", "--sigma", "0", "--steps", "4", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("completeness residual 0.000000e0"));
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("lam.json")).unwrap()).unwrap();
    assert_eq!(meta["region"], "3,5,4,2");
    let grid = std::fs::read_to_string(dir.path().join("lam.csv")).unwrap();
    assert!(grid.lines().all(|l| l.split(',').all(|v| v.parse::<f64>().unwrap() == 0.0)));
    assert!(load_image(&out).unwrap().data().iter().all(|&v| v == 0.0));

    let o = estn(&["lam", "--weights", p(&weights), "--input", p(&input), "--region", "10,10,8,8", "--out", p(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("outside"));
}

#[test]
fn thread_variable_is_validated() {
    let o = Command::new(env!("CARGO_BIN_EXE_estn")).args(["inspect"]).env("ESTN_THREADS", "zero").output().unwrap();
    assert_eq!(code(&o), 2);
    let o = Command::new(env!("CARGO_BIN_EXE_estn")).args(["inspect"]).env("ESTN_THREADS", "2").output().unwrap();
    assert_eq!(code(&o), 0);
}
