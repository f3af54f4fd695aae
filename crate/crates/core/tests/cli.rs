use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pointprops::model::load_checkpoint;
use pointprops::simulate::synthetic_scenes;
use pointprops::Image;
use rand::SeedableRng;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pointprops"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path, extra_paths: &str) -> PathBuf {
    let text = format!(
        r#"seed = 3

[model]
desc_len = 8

[train]
views = 3
iterations = 4
width = 32
height = 32
synthetic_scenes = 3

[properties]
rad = 2
n_min = 2
n_max = 40

[eval]
width = 32
height = 32

[paths]
checkpoint = "{dir}/model.ckpt"
log = "{dir}/log.csv"
{extra_paths}
"#,
        dir = dir.display()
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn save_scenes(dir: &Path, n: usize) {
    std::fs::create_dir_all(dir).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    for (k, img) in synthetic_scenes(&mut rng, n, 32, 32, 3).iter().enumerate() {
        img.save(&dir.join(format!("s{k}.png"))).unwrap();
    }
}

#[test]
fn train_writes_checkpoint_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let out = bin(&["--config", cfg.to_str().unwrap(), "train"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let params = load_checkpoint(&dir.path().join("model.ckpt")).unwrap();
    assert_eq!(params.desc_len(), 8);
    let log = std::fs::read_to_string(dir.path().join("log.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "iteration,E_y_L,mean_num_yhat,skipped_scenes,seconds");
    assert_eq!(lines.len(), 5);
}

#[test]
fn missing_image_directory_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no_such_dir");
    let cfg = small_config(dir.path(), &format!("images = \"{}\"", missing.display()));
    let out = bin(&["--config", cfg.to_str().unwrap(), "train"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_dir"));
}

#[test]
fn invalid_configuration_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[train]\nbogus_key = 1\n").unwrap();
    assert_eq!(bin(&["--config", path.to_str().unwrap(), "train"]).status.code(), Some(1));
    assert_eq!(bin(&["--preset", "pn-x", "oracle-check"]).status.code(), Some(1));
    assert_eq!(bin(&["no-such-command"]).status.code(), Some(1));
}

#[test]
fn oracle_check_passes_and_detects_corrupted_counts() {
    let out = bin(&["oracle-check"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    assert!(text.contains("counts_exact_m_le_60"));
    let corrupt = bin(&["oracle-check", "--corrupt-counts"]);
    assert_eq!(corrupt.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&corrupt.stdout).contains("FAIL"));
}

#[test]
fn eval_skips_malformed_pair_lines() {
    let dir = tempfile::tempdir().unwrap();
    save_scenes(&dir.path().join("img"), 2);
    let list = dir.path().join("pairs.txt");
    std::fs::write(
        &list,
        "img/s0.png img/s0.png 1 0 0 0 1 0 0 0 1\n\
         img/s0.png img/s1.png 1 0 0 0 1\n\
         img/s1.png img/s1.png 1 0 2 0 1 0 0 0 1\n\
         img/missing.png img/s1.png 1 0 0 0 1 0 0 0 1\n",
    )
    .unwrap();
    let cfg = small_config(
        dir.path(),
        &format!("pairs = \"{}\"\nmetrics = \"{}/m.csv\"", list.display(), dir.path().display()),
    );
    let c = cfg.to_str().unwrap();
    assert!(bin(&["--config", c, "train"]).status.success());
    let out = bin(&["--config", c, "eval"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("2 skipped"));
    let csv = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4, "{csv}");
    assert!(lines[3].starts_with("mean,"));
}

#[test]
fn visualize_reports_failed_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), &format!("output = \"{}/viz.png\"", dir.path().display()));
    let text = std::fs::read_to_string(&cfg).unwrap().replace("[eval]\n", "[eval]\npt = 0.999999\n");
    std::fs::write(&cfg, text).unwrap();
    let c = cfg.to_str().unwrap();
    assert!(bin(&["--config", c, "train"]).status.success());
    let flat = Image::from_fn(32, 32, 3, |_, _, _| 0.5);
    let a = dir.path().join("flat.png");
    flat.save(&a).unwrap();
    let out = bin(&["--config", c, "--seed", "3", "visualize", a.to_str().unwrap(), a.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let img = Image::load(&dir.path().join("viz.png")).unwrap();
    assert_eq!((img.width(), img.height()), (64, 32));
    let sidecar = std::fs::read_to_string(dir.path().join("viz.png.txt")).unwrap();
    assert!(sidecar.contains("m_score="));
    assert!(sidecar.contains("homography_error=failed"), "{sidecar}");
}

#[test]
fn thread_count_does_not_change_results() {
    let mut ckpts = Vec::new();
    for threads in ["1", "4"] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path(), "");
        let out = bin(&["--config", cfg.to_str().unwrap(), "--threads", threads, "train"]);
        assert!(out.status.success());
        ckpts.push(std::fs::read(dir.path().join("model.ckpt")).unwrap());
    }
    assert!(ckpts[0] == ckpts[1]);
}
