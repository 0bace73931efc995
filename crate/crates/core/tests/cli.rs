use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cliptime::synthgen::{Manifest, MANIFEST_FILE};

const SMALL: &str = r#"
[gen]
n_per_stage = 12
image_size = 32
seed = 3

[encoder]
d = 16
vision_arch = "compact-conv"

[model]
d = 16
ffn_hidden = 32
n_attention_heads = 2

[train]
epochs = 2
batch_size = 8
learning_rate = 1e-3

[paths]
data_dir = "data"
run_dir = "run"
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cliptime"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn setup(dir: &Path) -> PathBuf {
    let cfg = dir.join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    cfg
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn full_command_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let cfg = s(&cfg);

    let missing = run(&["train", "--config", cfg]);
    assert_eq!(missing.status.code(), Some(2), "{}", stderr(&missing));
    assert!(stderr(&missing).contains("cliptime generate"), "{}", stderr(&missing));

    let gen = run(&["generate", "--config", cfg]);
    assert!(gen.status.success(), "{}", stderr(&gen));
    for stage in ["spore", "hyphae", "mycelium"] {
        assert!(stdout(&gen).lines().any(|l| l.starts_with(stage) && l.contains(" 12 ")), "{}", stdout(&gen));
    }
    let manifest_path = dir.path().join("data").join(MANIFEST_FILE);
    let first = fs::read(&manifest_path).unwrap();

    let again = run(&["generate", "--config", cfg]);
    assert_eq!(again.status.code(), Some(2));
    assert!(stderr(&again).contains("--force"));

    let forced = run(&["generate", "--config", cfg, "--force"]);
    assert!(forced.status.success());
    assert_eq!(fs::read(&manifest_path).unwrap(), first);

    let train = run(&["train", "--config", cfg]);
    assert!(train.status.success(), "{}", stderr(&train));
    let run_dir = dir.path().join("run");
    for f in ["checkpoint_final.safetensors", "checkpoint_best.safetensors", "history.tsv", "vocab.txt"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    let history = fs::read_to_string(run_dir.join("history.tsv")).unwrap();
    assert_eq!(history.lines().filter(|l| !l.starts_with('#')).count(), 2 * 2);

    for split in ["val", "test"] {
        let ev = run(&["evaluate", "--config", cfg, "--split", split]);
        assert!(ev.status.success(), "{}", stderr(&ev));
        let report_dir = run_dir.join(format!("eval-{split}"));
        let confusion = fs::read_to_string(report_dir.join("confusion.tsv")).unwrap();
        let rows: Vec<Vec<u64>> = confusion
            .lines()
            .skip(1)
            .map(|l| l.split('\t').skip(1).map(|v| v.parse().unwrap()).collect())
            .collect();
        let total: u64 = rows.iter().flatten().sum();
        let diag: u64 = (0..3).map(|i| rows[i][i]).sum();
        let printed = format!("accuracy {:.4} ({diag} / {total})", diag as f64 / total as f64);
        assert!(stdout(&ev).contains(&printed), "{} vs {printed}", stdout(&ev));
        for (fig, data) in [
            ("confusion.svg", "confusion.tsv"),
            ("scatter.svg", "scatter.tsv"),
            ("mae.svg", "mae.tsv"),
            ("loss_curves.svg", "history.tsv"),
            ("qualitative.svg", "qualitative.tsv"),
        ] {
            assert!(report_dir.join(fig).exists() && report_dir.join(data).exists(), "{fig}");
        }
        let scatter = fs::read_to_string(report_dir.join("scatter.tsv")).unwrap();
        assert_eq!(scatter.lines().count() - 1, total as usize);
    }

    let manifest = Manifest::read(&manifest_path).unwrap();
    let image = dir.path().join("data").join(&manifest.samples[0].image_path);
    let ckpt = run_dir.join("checkpoint_final.safetensors");
    // Portability: predict runs from the checkpoint alone, in another directory.
    let pred = bin()
        .current_dir(std::env::temp_dir())
        .args(["predict", "--checkpoint", s(&ckpt), s(&image)])
        .output()
        .unwrap();
    assert!(pred.status.success(), "{}", stderr(&pred));
    let rec: serde_json::Value = serde_json::from_str(stdout(&pred).trim()).unwrap();
    let probs = rec["probabilities"].as_object().unwrap();
    let sum: f64 = probs.values().map(|v| v.as_f64().unwrap()).sum();
    assert!((sum - 1.0).abs() < 1e-6);
    let hours = rec["hours"].as_f64().unwrap();
    assert!((0.0..=720.0).contains(&hours));
    assert_eq!(rec["prompt"], "an image of fungal growth");

    let prompted = run(&["predict", "--checkpoint", s(&ckpt), "--prompt", "late mycelium", s(&image)]);
    assert!(prompted.status.success());

    let bad_image = run(&["predict", "--checkpoint", s(&ckpt), s(&dir.path().join("nope.png"))]);
    assert_ne!(bad_image.status.code(), Some(0));

    let no_ckpt = run(&["evaluate", "--config", cfg, "--checkpoint", s(&dir.path().join("nope.safetensors"))]);
    assert_ne!(no_ckpt.status.code(), Some(0));
}

#[test]
fn config_errors_exit_one_before_side_effects() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[gen]\nn_per_stage = 4\nimage_sise = 32\n[paths]\ndata_dir = \"data\"\n").unwrap();
    let out = run(&["generate", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("image_sise"));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
    assert!(!dir.path().join("data").exists());
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["evaluate", "--split", "holdout", "--config", "x"]).status.code(), Some(1));
    assert!(run(&["--help"]).status.success());
}

#[test]
fn seed_flag_overrides_generation_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run(&["generate", "--config", s(&cfg), "--out", s(&a)]).status.success());
    assert!(run(&["generate", "--config", s(&cfg), "--out", s(&b), "--seed", "99"]).status.success());
    let ma = fs::read(a.join(MANIFEST_FILE)).unwrap();
    let mb = fs::read(b.join(MANIFEST_FILE)).unwrap();
    assert_ne!(ma, mb);
}
