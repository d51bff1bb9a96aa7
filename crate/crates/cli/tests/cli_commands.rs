use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command as Proc, Output};

use h2r_cli::config::apply_override;
use h2r_cli::store::{CONFIG_SNAPSHOT, REPORT_FILE, STAGE_MARKER};
use h2r_cli::{run, Command, Outcome, RunConfig};

fn tiny(out: &Path) -> Vec<String> {
    [
        format!("out_dir={}", out.display()),
        "height=32".into(),
        "width=32".into(),
        "data.robot_clips=2".into(),
        "data.human_clips=1".into(),
        "data.frames=5".into(),
        "model.width=16".into(),
        "model.layers=1".into(),
        "model.heads=2".into(),
        "model.mlp_ratio=2".into(),
        "train.steps=2".into(),
        "train.batch_size=1".into(),
        "train.accumulation=1".into(),
        "translate.sampler_steps=2".into(),
        "eval.max_pairs=1".into(),
    ]
    .into()
}

fn bin(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut c = Proc::new(env!("CARGO_BIN_EXE_h2r"));
    c.args(args).env_remove("H2R_CONFIG").env("RUST_LOG", "warn");
    for (k, v) in envs {
        c.env(k, v);
    }
    c.output().unwrap()
}

fn mtime(p: &Path) -> std::time::SystemTime {
    fs::metadata(p).unwrap().modified().unwrap()
}

#[test]
fn toml_and_json_configs_agree() {
    let dir = tempfile::tempdir().unwrap();
    let toml_path = dir.path().join("run.toml");
    fs::write(&toml_path, "seed = 7\nworkers = 2\n[train]\nsteps = 11\nmode = \"lora-only\"\n[model]\nwidth = 32\n").unwrap();
    let json_path = dir.path().join("run.json");
    fs::write(&json_path, r#"{"seed": 7, "workers": 2, "train": {"steps": 11, "mode": "lora-only"}, "model": {"width": 32}}"#).unwrap();
    let a = RunConfig::load(Some(&toml_path), &[]).unwrap();
    let b = RunConfig::load(Some(&json_path), &[]).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.train.steps, 11);
    assert_eq!(a.model.heads, 4);
    let yaml = dir.path().join("run.yaml");
    fs::write(&yaml, "seed: 1").unwrap();
    assert!(matches!(RunConfig::load(Some(&yaml), &[]), Err(h2r_cli::Error::Config(_))));
}

#[test]
fn overrides_follow_dotted_paths() {
    let cfg = RunConfig::load(None, &["train.steps=3".into(), "train.mode=lora-only".into(), "out_dir=/tmp/x".into(), "backends.inpaint.kind=naive".into(), "overlay.alpha=0.5".into()]).unwrap();
    assert_eq!(cfg.train.steps, 3);
    assert_eq!(cfg.train.mode, h2r_model::TrainMode::LoraOnly);
    assert_eq!(cfg.out_dir, PathBuf::from("/tmp/x"));
    assert_eq!(cfg.backends.inpaint.kind, h2r_core::perception::BackendKind::Naive);
    assert_eq!(cfg.overlay().alpha, 0.5);
    assert_eq!(cfg.overlay().dot_radius, 3.0);
    let reference = RunConfig::default().to_json();
    let mut v = reference.clone();
    assert!(apply_override(&mut v, &reference, "train.stepz=3").is_err());
    assert!(apply_override(&mut v, &reference, "no_equals_sign").is_err());
}

#[test]
fn validation_lists_every_violation() {
    let err = RunConfig::load(None, &["height=30".into(), "workers=0".into(), "train.batch_size=0".into(), "model.heads=3".into()])
        .unwrap_err()
        .to_string();
    for field in ["height", "workers", "batch_size", "model"] {
        assert!(err.contains(field), "{field} missing from: {err}");
    }
}

#[test]
fn stages_snapshot_config_and_resume_skips_finished_work() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::load(None, &tiny(&dir.path().join("run"))).unwrap();
    let stages = run(&cfg, Command::Pipeline, false).unwrap();
    assert!(stages.iter().all(|(_, o)| *o == Outcome::Ran));
    let root = dir.path().join("run");
    for stage in ["data", "pairs", "train", "translate", "eval"] {
        let snap: RunConfig = serde_json::from_str(&fs::read_to_string(root.join(stage).join(CONFIG_SNAPSHOT)).unwrap()).unwrap();
        assert_eq!(snap, cfg, "{stage}");
        assert!(root.join(stage).join(STAGE_MARKER).is_file());
    }
    let report = root.join("eval").join(REPORT_FILE);
    let before = mtime(&report);
    let ck = root.join("train").join("checkpoint.safetensors");
    let ck_before = mtime(&ck);
    let again = run(&cfg, Command::Pipeline, true).unwrap();
    assert!(again.iter().all(|(_, o)| *o == Outcome::Skipped), "{again:?}");
    assert_eq!(mtime(&report), before);
    assert_eq!(mtime(&ck), ck_before);

    // More steps: data and pairs stay, training continues from the saved step.
    let more = RunConfig::load(None, &[tiny(&root), vec!["train.steps=3".into()]].concat()).unwrap();
    let out = run(&more, Command::Pipeline, true).unwrap();
    assert_eq!(out[0].1, Outcome::Skipped);
    assert_eq!(out[1].1, Outcome::Skipped);
    assert_eq!(out[2].1, Outcome::Ran);
    let log = fs::read_to_string(root.join("train").join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
}

#[test]
fn failed_stage_keeps_earlier_output() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("run");
    let cfg = RunConfig::load(None, &tiny(&root)).unwrap();
    run(&cfg, Command::GenData, false).unwrap();
    run(&cfg, Command::BuildPairs, false).unwrap();
    let manifest = fs::read(root.join("pairs").join("manifest.json")).unwrap();
    // Robot clips removed behind the stage's back: the rebuild fails.
    fs::remove_dir_all(root.join("data").join("robot").join("robot_0001").join("video")).unwrap();
    let err = run(&cfg, Command::BuildPairs, false).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("build-pairs"), "{err}");
    assert_eq!(fs::read(root.join("pairs").join("manifest.json")).unwrap(), manifest);
}

#[test]
fn exit_codes_and_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("run");
    let out = bin(&["gen-data", "--set", "workers=0"], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("workers"));

    let cfg_path = dir.path().join("run.json");
    let sets = tiny(&root);
    let mut v = RunConfig::default().to_json();
    let reference = v.clone();
    for s in &sets {
        apply_override(&mut v, &reference, s).unwrap();
    }
    fs::write(&cfg_path, serde_json::to_string(&v).unwrap()).unwrap();
    let env = [("H2R_CONFIG", cfg_path.to_str().unwrap())];
    for cmd in ["gen-data", "build-pairs"] {
        let out = bin(&[cmd], &env);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let out = bin(&["train", "--mode", "lora-only"], &env);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("random-initialized"));
    assert!(root.join("train").join("checkpoint.safetensors").is_file());

    // A raw 8-frame directory fed without preprocessing.
    let raw = dir.path().join("raw");
    h2r_core::VideoArray::zeros(8, 32, 32).save_png_dir(&raw).unwrap();
    let out = bin(&["translate", "--input", raw.to_str().unwrap(), "--no-preprocess"], &env);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("frame count 8"), "{err}");

    let out = bin(&["build-pairs", "--set", "backends.segment.kind=remote", "--set", "backends.segment.endpoint_url=http://127.0.0.1:9", "--set", "backends.segment.timeout_s=0.5", "--set", "backends.segment.max_retries=0"], &env);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("robot_0000"));
}
