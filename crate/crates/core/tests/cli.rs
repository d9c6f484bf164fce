use std::path::Path;
use std::process::{Command, Output};

use twinmask::cli::{parse_args, version_string, Command as Sub, EXIT_USAGE};
use twinmask::io::save_rgb_png;
use twinmask::toyflow::{oracle_generate, train_flow, Health, SceneSpec, TrainConfig};

fn twinmask(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twinmask")).args(args).output().expect("run binary")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn no_args_prints_usage_and_exits_2() {
    let out = twinmask(&[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("Usage"));
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = twinmask(&["pipeline", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(parse_args(["twinmask", "pipeline", "--no-such-flag"]).unwrap_err().code, EXIT_USAGE);
}

#[test]
fn negative_gamma_names_the_flag() {
    for sub in ["deid", "pipeline", "sweep"] {
        let out = twinmask(&[sub, "--gamma-src", "-1"]);
        assert_eq!(out.status.code(), Some(2));
        assert!(stderr(&out).contains("--gamma-src"), "{}", stderr(&out));
    }
    let err = parse_args(["twinmask", "deid", "--gamma-tgt=-0.5"]).unwrap_err();
    assert!(err.message.contains("--gamma-tgt"));
    let err = parse_args(["twinmask", "pipeline", "--s-max", "1.5"]).unwrap_err();
    assert!(err.message.contains("--s-max"));
}

#[test]
fn version_reports_scene_hash() {
    let out = twinmask(&["--version"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains(env!("CARGO_PKG_VERSION")));
    assert!(text.contains(&SceneSpec::default().hash()));
    assert!(version_string().contains(&SceneSpec::default().hash()));
}

#[test]
fn pipeline_twice_gives_identical_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = twinmask(&["pipeline", "--seed", "7", "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let ma = std::fs::read(a.join("manifest.json")).unwrap();
    let mb = std::fs::read(b.join("manifest.json")).unwrap();
    assert_eq!(ma, mb);
    let manifest: serde_json::Value = serde_json::from_slice(&ma).unwrap();
    assert_eq!(manifest["run"]["seed"], 7);
    assert_eq!(manifest["run"]["command"], "pipeline");
}

#[test]
fn oracle_pipeline_writes_full_case_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("case");
    let o = twinmask(&["pipeline", "--backend", "oracle", "--seed", "3", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in [
        "deid.png",
        "twin_path.png",
        "twin_healthy.png",
        "diff.png",
        "mask.png",
        "overlay.png",
        "calibration.csv",
        "histograms.csv",
        "manifest.json",
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["backend"]["kind"], "oracle");
    assert_eq!(manifest["metrics"]["distractor_overlap"], 0);
    assert!(manifest["metrics"]["iou_ground_truth"].as_f64().unwrap() >= 0.95);
    assert_eq!(manifest["seeds"]["case_seed"], 3);
}

#[test]
fn manifest_replays_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let o = twinmask(&["pipeline", "--seed", "12", "--gamma-src", "0.5", "--tgt-identity", "3", "--out", first.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(first.join("manifest.json")).unwrap()).unwrap();

    // the embedded run block, used as a config file, reproduces the run
    let conf = dir.path().join("replay.json");
    std::fs::write(&conf, serde_json::to_vec(&manifest["run"]).unwrap()).unwrap();
    let second = dir.path().join("second");
    let o = twinmask(&["pipeline", "--config", conf.to_str().unwrap(), "--out", second.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let replay: serde_json::Value = serde_json::from_slice(&std::fs::read(second.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(replay["metrics"], manifest["metrics"]);
    assert_eq!(replay["artifacts"], manifest["artifacts"]);
}

#[test]
fn flags_override_config_file_which_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    std::fs::write(&conf, "# comment\nseed = 5\ngamma_src = 0.75\nsurrogates = 2,3\n").unwrap();
    let c = conf.to_str().unwrap();

    let cfg = parse_args(["twinmask", "sweep", "--config", c]).unwrap();
    let Sub::Sweep { case, surrogates, .. } = &cfg.command else { panic!() };
    assert_eq!((case.seed, case.guidance.gamma_src, case.guidance.gamma_tgt), (5, 0.75, 2.0));
    assert_eq!(surrogates, &vec![2, 3]);

    let cfg = parse_args(["twinmask", "sweep", "--seed", "9", "--config", c]).unwrap();
    let Sub::Sweep { case, .. } = &cfg.command else { panic!() };
    assert_eq!(case.seed, 9);

    let json = dir.path().join("run.json");
    std::fs::write(&json, r#"{"seed": 4, "twin-mode": "edit_heal", "theta_step": 2.0}"#).unwrap();
    let cfg = parse_args(["twinmask", "pipeline", "--config", json.to_str().unwrap()]).unwrap();
    let Sub::Pipeline { case, .. } = &cfg.command else { panic!() };
    assert_eq!(case.seed, 4);
    assert_eq!(case.twin_mode, twinmask::twinsynth::TwinMode::EditHeal);
    assert_eq!(case.grid.grid().len(), 128);

    std::fs::write(&conf, "bogus = 1\n").unwrap();
    assert_eq!(parse_args(["twinmask", "pipeline", "--config", c]).unwrap_err().code, EXIT_USAGE);
}

#[test]
fn stats_on_identical_files_reports_unit_bhattacharyya() {
    let dir = tempfile::tempdir().unwrap();
    let scene = SceneSpec::default();
    let img = oracle_generate(&scene, &scene.latent(1), &scene.condition(0, Health::Pathological).unwrap()).unwrap();
    let a = dir.path().join("a.png");
    let b = dir.path().join("b.png");
    save_rgb_png(&img, &a).unwrap();
    save_rgb_png(&img, &b).unwrap();
    let csv = dir.path().join("h.csv");
    let o = twinmask(&["stats", a.to_str().unwrap(), b.to_str().unwrap(), "--csv", csv.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["bhattacharyya"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(v["ks"].as_f64().unwrap(), 0.0);
    assert_eq!(std::fs::read_to_string(csv).unwrap().lines().count(), 257);
}

#[test]
fn missing_input_exits_1_with_path() {
    let o = twinmask(&["stats", "/nonexistent/left.png", "/nonexistent/right.png"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("/nonexistent/left.png"), "{err}");
    assert!(err.contains("input"), "{err}");

    let o = twinmask(&["deid", "--backend", "trained", "--checkpoint", "/nonexistent/flow.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/nonexistent/flow.json"));
}

#[test]
fn stage_failure_exits_1_naming_stage() {
    let dir = tempfile::tempdir().unwrap();
    let o = twinmask(&[
        "pipeline",
        "--src-identity",
        "2",
        "--tgt-identity",
        "2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("stage `deid`"), "{}", stderr(&o));
}

#[test]
fn twins_sweep_deid_and_fedsim_run_on_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n).to_str().unwrap().to_string();
    let runs: [Vec<String>; 4] = [
        vec!["twins".into(), "--identity".into(), "2".into(), "--out".into(), d("twins")],
        vec!["sweep".into(), "--seed".into(), "1".into(), "--out".into(), d("sweep")],
        vec!["deid".into(), "--tgt-identity".into(), "3".into(), "--out".into(), d("deid")],
        vec!["fedsim".into(), "--clients".into(), "2".into(), "--rounds".into(), "2".into(), "--out".into(), d("fed")],
    ];
    for args in &runs {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let o = twinmask(&args);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
    }
    assert!(Path::new(&d("twins")).join("diff.png").is_file());
    assert!(Path::new(&d("sweep")).join("sweep.json").is_file());
    assert!(Path::new(&d("deid")).join("deid.png").is_file());
    let rounds = std::fs::read_to_string(Path::new(&d("fed")).join("rounds.csv")).unwrap();
    assert_eq!(rounds.lines().count(), 3);
    let audit = std::fs::read_to_string(Path::new(&d("fed")).join("audit.jsonl")).unwrap();
    assert_eq!(audit.lines().count(), 4);
}

#[test]
fn train_flow_then_trained_backend() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("flow.json");
    let o = twinmask(&[
        "train-flow",
        "--size",
        "16",
        "--steps",
        "20",
        "--hidden",
        "16",
        "--out",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(dir.path().join("flow.loss.csv").is_file());

    // the library gives the same weights for the same settings
    let scene = SceneSpec::with_size(16, 16);
    let hp = TrainConfig {
        steps: 20,
        width: 16,
        ..TrainConfig::default()
    };
    let model = train_flow(&scene, &hp, 0).unwrap();
    let saved = twinmask::toyflow::FlowModel::load(&ckpt).unwrap();
    assert_eq!(saved.net, model.net);

    let out = dir.path().join("case");
    let o = twinmask(&[
        "pipeline",
        "--backend",
        "trained",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--steps",
        "5",
        "--sample-steps",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["backend"]["kind"], "trained");
    assert_eq!(manifest["metrics"]["edit_steps"], 5);
}
