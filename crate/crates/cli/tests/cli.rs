use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use csilab_core::config::LabConfig;
use csilab_core::model::{save_checkpoint, CheckpointMeta};
use csilab_core::verify::CHECKS;
use csilab_core::Model;

const SMALL: &str = r#"
schema_version = 1
seed = 3

[channel]
n_channels = 12

[dataset]
per_class = 4
activity_duration = 1.0

[dataset.windowing]
window_width = 20
stride = 4
clip_length = 4

[model]
fc_units = 16

[train]
epochs = 2
batch_size = 4
"#;

fn csilab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csilab")).args(args).env_remove("CSILAB_OUT").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = csilab(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

struct Lab {
    dir: tempfile::TempDir,
}

impl Lab {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("lab.toml"), SMALL).unwrap();
        Self { dir }
    }

    fn path(&self, p: &str) -> PathBuf {
        self.dir.path().join(p)
    }

    fn s(&self, p: &str) -> String {
        self.path(p).display().to_string()
    }

    fn gen(&self, out: &str) {
        ok(&["gen", "--config", &self.s("lab.toml"), "--out", &self.s(out)]);
    }

    fn train(&self, data: &str, out: &str, extra: &[&str]) -> String {
        let (config, data, out) = (self.s("lab.toml"), self.s(data), self.s(out));
        let mut args = vec!["train", "--config", &config, "--data", &data, "--out", &out];
        args.extend(extra);
        ok(&args)
    }
}

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn default_config_generates_the_six_class_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    let stdout = ok(&["gen", "--out", out.to_str().unwrap()]);
    assert!(stdout.contains("6 classes, 240 clips (120 train, 120 test)"), "{stdout}");
    let manifest: toml::Value = toml::from_str(&fs::read_to_string(out.join("run.toml")).unwrap()).unwrap();
    assert_eq!(manifest["command"].as_str(), Some("gen"));
    assert_eq!(manifest["config"]["dataset"]["per_class"].as_integer(), Some(40));
}

#[test]
fn gen_is_deterministic_per_seed() {
    let lab = Lab::new();
    lab.gen("a");
    lab.gen("b");
    for f in ["dataset.toml", "clips.bin", "features.bin"] {
        assert_eq!(read(&lab.path("a").join(f)), read(&lab.path("b").join(f)), "{f}");
    }
    ok(&["gen", "--config", &lab.s("lab.toml"), "--out", &lab.s("c"), "--seed", "4"]);
    assert_ne!(read(&lab.path("a/clips.bin")), read(&lab.path("c/clips.bin")));
}

#[test]
fn output_root_comes_from_the_environment() {
    let lab = Lab::new();
    let out = Command::new(env!("CARGO_BIN_EXE_csilab"))
        .args(["gen", "--config", &lab.s("lab.toml")])
        .env("CSILAB_OUT", lab.path("root"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(lab.path("root/gen/clips.bin").exists());
}

#[test]
fn config_errors_exit_2_with_a_line_number() {
    let lab = Lab::new();
    let out = csilab(&["gen", "--config", &lab.s("missing.toml")]);
    assert_eq!(code(&out), 2);
    fs::write(lab.path("bad.toml"), "schema_version = 1\n\n[dataset]\nper_class = 1\n").unwrap();
    let out = csilab(&["gen", "--config", &lab.s("bad.toml"), "--out", &lab.s("x")]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3") && err.contains("per_class"), "{err}");
    assert_eq!(code(&csilab(&["gen", "--bogus"])), 2);
    assert_eq!(code(&csilab(&["train"])), 2);
}

#[test]
fn zero_epochs_writes_the_initialisation() {
    let lab = Lab::new();
    lab.gen("data");
    lab.train("data", "ckpt", &["--epochs", "0"]);
    let cfg = LabConfig::load(&lab.path("lab.toml")).unwrap();
    let ds = csilab_core::dataset::load_dataset(&lab.path("data")).unwrap();
    let model = Model::build(cfg.model_config(ds.n_classes()), cfg.seed).unwrap();
    let meta = CheckpointMeta { epoch: 0, class_names: ds.class_names.clone(), normalization: ds.norm };
    save_checkpoint(&model, &meta, &lab.path("expected")).unwrap();
    assert_eq!(read(&lab.path("ckpt/params.bin")), read(&lab.path("expected/params.bin")));
}

#[test]
fn attention_flag_changes_the_manifest_and_the_model() {
    let lab = Lab::new();
    lab.gen("data");
    lab.train("data", "off", &["--attention", "off"]);
    lab.train("data", "on", &["--attention", "on"]);
    let off = fs::read_to_string(lab.path("off/run.toml")).unwrap();
    let on = fs::read_to_string(lab.path("on/run.toml")).unwrap();
    assert_ne!(off, on);
    assert!(on.contains("use_spatial_attention = true") && off.contains("use_spatial_attention = false"));
    assert_ne!(read(&lab.path("off/checkpoint.toml")), read(&lab.path("on/checkpoint.toml")));
}

#[test]
fn eval_is_repeatable_and_reports_render() {
    let lab = Lab::new();
    lab.gen("data");
    lab.train("data", "ckpt", &[]);
    for out in ["e1", "e2"] {
        ok(&["eval", "--checkpoint", &lab.s("ckpt"), "--data", &lab.s("data"), "--out", &lab.s(out)]);
    }
    for f in ["summary.tsv", "confusion_c3d.tsv", "metrics_c3d.tsv", "result.toml"] {
        assert_eq!(read(&lab.path("e1").join(f)), read(&lab.path("e2").join(f)), "{f}");
    }
    ok(&["baseline", "--config", &lab.s("lab.toml"), "--data", &lab.s("data"), "--out", &lab.s("b"), "--p", "4", "--k", "1"]);
    let stdout = ok(&["report", "--out", &lab.s("r"), &lab.s("e1"), &lab.s("b"), &lab.s("ckpt")]);
    assert!(stdout.contains("c3d\t") && stdout.contains("pca_knn\t"), "{stdout}");
    assert!(lab.path("r/curves_c3d.tsv").exists());
    assert!(lab.path("r/confusion_pca_knn.tsv").exists());
}

#[test]
fn eval_rejects_a_dataset_of_the_wrong_shape() {
    let lab = Lab::new();
    lab.gen("data");
    lab.train("data", "ckpt", &["--epochs", "0"]);
    let other = SMALL.replace("window_width = 20", "window_width = 24");
    fs::write(lab.path("other.toml"), other).unwrap();
    ok(&["gen", "--config", &lab.s("other.toml"), "--out", &lab.s("wide")]);
    let out = csilab(&["eval", "--checkpoint", &lab.s("ckpt"), "--data", &lab.s("wide"), "--out", &lab.s("e")]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("shape"));
}

#[test]
fn memorised_training_split_scores_perfectly() {
    let lab = Lab::new();
    let tiny = SMALL.replace("per_class = 4", "per_class = 2");
    fs::write(lab.path("lab.toml"), tiny).unwrap();
    lab.gen("data");
    lab.train("data", "ckpt", &["--epochs", "60", "--learning-rate", "0.003"]);
    let stdout = ok(&[
        "eval", "--checkpoint", &lab.s("ckpt"), "--data", &lab.s("data"), "--split", "train", "--out", &lab.s("e"),
    ]);
    assert!(stdout.contains("accuracy 100.00%"), "{stdout}");
}

#[test]
fn baseline_with_leakage_is_perfect() {
    let lab = Lab::new();
    lab.gen("data");
    let stdout = ok(&[
        "baseline", "--config", &lab.s("lab.toml"), "--data", &lab.s("data"), "--out", &lab.s("b"),
        "--k", "1", "--p", "5", "--fit-split", "train", "--split", "train",
    ]);
    assert!(stdout.contains("accuracy 100.00%"), "{stdout}");
}

#[test]
fn divergence_exits_3() {
    let lab = Lab::new();
    lab.gen("data");
    let out = csilab(&[
        "train", "--config", &lab.s("lab.toml"), "--data", &lab.s("data"), "--out", &lab.s("t"),
        "--learning-rate", "1e12",
    ]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn gradcheck_lists_every_check_once_and_catches_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("g");
    let stdout = ok(&["--jobs", "1", "gradcheck", "--out", out_dir.to_str().unwrap()]);
    for name in CHECKS {
        let rows = stdout.lines().filter(|l| l.split_whitespace().next() == Some(name)).count();
        assert_eq!(rows, 1, "{name}: {stdout}");
    }
    assert!(!stdout.contains("FAIL"));
    let out = csilab(&["gradcheck", "--out", out_dir.to_str().unwrap(), "--corrupt", "linear"]);
    assert_eq!(code(&out), 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains("linear"));
}
