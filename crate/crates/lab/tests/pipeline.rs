use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use selfmodel_lab::formats;
use selfmodel_lab::manifest::RunManifest;
use selfmodel_lab::table;

const TINY_SWEEP: &str = r#"
master_seed = 11
presets = ["crawler-2", "crawler-4", "crawler-6"]
budgets = [200]
seeds_per_cell = 2
tasks = ["walk"]

[ppo]
rollout_batch = 64
minibatch_size = 32
epochs_per_update = 2

[self_model]
hidden = [16]
max_epochs = 5

[harness]
ppo_budget_model = 256
eval_episodes = 2
collect_episode_len = 50
"#;

fn selfmodel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_selfmodel"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn collect_reports_shape() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.smds");
    let o = selfmodel(&["collect", "--env", "crawler-8", "--n", "1000", "--seed", "7", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let data = formats::decode_dataset(&fs::read(&out).unwrap()).unwrap();
    assert_eq!(data.len(), 1000);
    assert_eq!(data.act_dim(), 8);
    assert_eq!(data.obs_dim(), 22);
}

#[test]
fn collect_fit_train_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("cfg.toml");
    fs::write(&cfg, "self_model.hidden = [16]\nself_model.max_epochs = 5\nppo.rollout_batch = 64\n").unwrap();
    let data = d.join("d.smds");
    let model = d.join("m.smfm");
    let model_again = d.join("m2.smfm");
    let agent = d.join("a.smpg");
    let run = |args: &[&str]| {
        let o = selfmodel(args);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    };
    run(&["collect", "--env", "crawler-2", "--n", "300", "--seed", "1", "--out", path(&data)]);
    for m in [&model, &model_again] {
        run(&["fit-model", "--data", path(&data), "--out", path(m), "--config", path(&cfg)]);
    }
    assert_eq!(fs::read(&model).unwrap(), fs::read(&model_again).unwrap());

    run(&[
        "train", "--mode", "dyna", "--env", "crawler-2", "--budget", "256", "--seed", "3",
        "--model", path(&model), "--out", path(&agent), "--config", path(&cfg),
    ]);
    let eval = run(&["eval", "--agent", path(&agent), "--env", "crawler-2", "--episodes", "3"]);
    assert!(eval.starts_with("mean_return "), "{eval}");
    assert_eq!(eval.lines().filter(|l| l.starts_with("episode ")).count(), 3);

    let mfrl = d.join("b.smpg");
    run(&[
        "train", "--mode", "mfrl", "--env", "crawler-2", "--task", "jump", "--budget", "128",
        "--out", path(&mfrl), "--config", path(&cfg),
    ]);
    formats::decode_agent(&fs::read(&mfrl).unwrap()).unwrap();

    // A model for the wrong morphology is a runtime failure.
    let o = selfmodel(&[
        "train", "--mode", "dyna", "--env", "crawler-4", "--budget", "64", "--model", path(&model),
        "--out", path(&d.join("c.smpg")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = selfmodel(&["collect", "--env", "crawler-2", "--n", "5", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stderr.is_empty());

    let o = selfmodel(&["train", "--mode", "dyna", "--env", "crawler-2", "--budget", "10", "--out", path(&d.join("a"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--model"));

    let o = selfmodel(&["fit-model", "--data", path(&d.join("missing")), "--out", path(&d.join("m"))]);
    assert_eq!(o.status.code(), Some(2));

    let bad = d.join("bad.toml");
    fs::write(&bad, "ppo.gama = 0.9\n").unwrap();
    let o = selfmodel(&["sweep", "--config", path(&bad), "--out", path(&d.join("runs"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ppo.gama"));

    let empty = d.join("empty");
    fs::create_dir(&empty).unwrap();
    let o = selfmodel(&["report", "--runs", path(&empty)]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(fs::read_dir(&empty).unwrap().count(), 0);
}

#[test]
fn sweep_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("cfg.toml");
    fs::write(&cfg, TINY_SWEEP).unwrap();
    let runs = d.join("runs");
    let o = selfmodel(&["sweep", "--config", path(&cfg), "--out", path(&runs), "--jobs", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    for f in ["config.toml", "manifest.json", "sweep.csv", "timings.csv", "regression.csv", "report.svg"] {
        assert!(runs.join(f).is_file(), "missing {f}");
    }
    let manifest = RunManifest::load(&runs).unwrap();
    assert!(manifest.verify(&runs).is_empty());
    assert_eq!(manifest.config, fs::read_to_string(runs.join("config.toml")).unwrap());

    let rows = table::read_path(&runs.join("sweep.csv")).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.wall_time_s.is_none()));

    let sweep_regression = fs::read(runs.join("regression.csv")).unwrap();
    let csv_out = d.join("reg.csv");
    let svg_out = d.join("fig.svg");
    let o = selfmodel(&["report", "--runs", path(&runs), "--csv-out", path(&csv_out), "--svg-out", path(&svg_out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(&csv_out).unwrap(), sweep_regression);
    let svg = fs::read_to_string(&svg_out).unwrap();
    assert!(svg.contains("R2="));

    // The echoed config reproduces the sweep byte for byte.
    let again = d.join("again");
    let o = selfmodel(&["sweep", "--config", path(&runs.join("config.toml")), "--out", path(&again)]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read(again.join("sweep.csv")).unwrap(), fs::read(runs.join("sweep.csv")).unwrap());

    fs::write(runs.join("sweep.csv"), b"preset\n").unwrap();
    assert!(!manifest.verify(&runs).is_empty());
}
