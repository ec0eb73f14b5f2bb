//! Runs the installed binary the way a user would.

use std::path::Path;
use std::process::{Command, Output};

use sparse_align::dataset::GenerateConfig;
use sparse_align::fusion::{token, CH_DEPTH};
use sparse_align::io;
use sparse_align::scene::SceneConfig;
use sparse_align::train::Trainer;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparse-align"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("SPARSE_ALIGN_DATA")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let o = bin(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TRAIN: &str = "epochs = 2\nbatch_size = 4\nseed = 3\n\
[arch]\nn_latent = 8\nc_latent = 16\nheads = 2\n\
[counts]\nn_reproj = 20\nn_bbox = 20\nn_context = 40\nn_cad = 20\n";

fn dataset(dir: &Path) -> std::path::PathBuf {
    let c = GenerateConfig {
        n_scenes: 5,
        val_fraction: 0.4,
        models_per_category: 1,
        n_points: 200,
        seed: 3,
        scene: SceneConfig { width: 80, height: 60, ..SceneConfig::default() },
        ..GenerateConfig::default()
    };
    let cfg = dir.join("gen.toml");
    std::fs::write(&cfg, toml::to_string(&c).unwrap()).unwrap();
    std::fs::write(dir.join("train.toml"), TRAIN).unwrap();
    let data = dir.join("data");
    ok(&["generate", "--config", s(&cfg), "--out", s(&data)]);
    data
}

#[test]
fn exit_codes_follow_error_classes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(bin(&["--help"]).status.code(), Some(0));
    assert_eq!(bin(&["train", "--bogus"]).status.code(), Some(1));
    let missing = dir.path().join("missing");
    assert_eq!(bin(&["evaluate", "--data", s(&missing), "--records", "x"]).status.code(), Some(2));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "n_scenes = 0\n").unwrap();
    let out = dir.path().join("out");
    assert_eq!(bin(&["generate", "--config", s(&bad), "--out", s(&out)]).status.code(), Some(1));

    let data = dataset(dir.path());
    let garbage = dir.path().join("garbage.ckpt");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    let rec = dir.path().join("r.records");
    assert_eq!(
        bin(&["align", "--data", s(&data), "--checkpoint", s(&garbage), "--out", s(&rec)]).status.code(),
        Some(2)
    );
    assert_eq!(bin(&["align", "--data", s(&data), "--out", s(&rec)]).status.code(), Some(1));
}

#[test]
fn zero_epochs_saves_the_initial_model_and_resume_matches_a_straight_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let cfg = dir.path().join("train.toml");
    let train = |ckpt: &Path, extra: &[&str]| {
        let mut a = vec!["train", "--data", s(&data), "--config", s(&cfg), "--checkpoint", s(ckpt)];
        a.extend_from_slice(extra);
        ok(&a);
    };

    let init = dir.path().join("init.ckpt");
    train(&init, &["--epochs", "0"]);
    let (c, t) = io::load_checkpoint(&init).unwrap();
    let fresh = Trainer::new(&c).unwrap();
    assert_eq!(t.epoch, 0);
    assert_eq!(t.params, fresh.params);

    let straight = dir.path().join("straight.ckpt");
    train(&straight, &[]);
    let resumed = dir.path().join("resumed.ckpt");
    train(&resumed, &["--epochs", "1"]);
    assert_eq!(io::load_checkpoint(&resumed).unwrap().1.epoch, 1);
    train(&resumed, &["--resume", "--epochs", "2"]);
    assert_eq!(std::fs::read(&straight).unwrap(), std::fs::read(&resumed).unwrap());

    // one more refinement step changes the output
    let r1 = dir.path().join("r1.records");
    let r3 = dir.path().join("r3.records");
    ok(&["align", "--data", s(&data), "--checkpoint", s(&straight), "--out", s(&r1), "--n-iter", "1"]);
    ok(&["align", "--data", s(&data), "--checkpoint", s(&straight), "--out", s(&r3), "--n-iter", "3"]);
    let (a, b) = (io::read_records(&r1).unwrap(), io::read_records(&r3).unwrap());
    assert_eq!(a.len(), b.len());
    assert!(a.iter().zip(&b).any(|(x, y)| x.pose != y.pose));

    let csv = dir.path().join("report.csv");
    ok(&["evaluate", "--data", s(&data), "--records", s(&r3), "--csv", s(&csv)]);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("metric,category,value\n"));
    assert!(text.lines().any(|l| l.starts_with("instance,all,")));
}

#[test]
fn no_depth_zeroes_the_depth_channel() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let dump = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut a = vec!["dump-input", "--data", s(&data), "--scene", "scene00000", "--out", s(&out)];
        a.extend_from_slice(extra);
        ok(&a);
        io::decode_rows(&std::fs::read(&out).unwrap(), &out).unwrap()
    };
    let full = dump("full.rows", &[]);
    let blind = dump("blind.rows", &["--no-depth"]);
    assert_eq!(full.n_rows(), blind.n_rows());
    let observed = |x: &sparse_align::fusion::SparseInput| {
        (0..x.n_rows())
            .filter(|&i| matches!(x.token(i), token::REPROJ | token::BBOX | token::CONTEXT))
            .map(|i| x.rows[[i, CH_DEPTH]])
            .collect::<Vec<f32>>()
    };
    assert!(observed(&full).iter().any(|&d| d > 0.0));
    assert!(observed(&blind).iter().all(|&d| d == 0.0));
}
