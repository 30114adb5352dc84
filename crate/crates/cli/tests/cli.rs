use std::fs;
use std::process::{Command, Output};

fn mcrc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcrc"))
        .args(args)
        .output()
        .expect("spawn mcrc")
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(mcrc(&["--help"]).status.code(), Some(0));
    assert_eq!(mcrc(&["--version"]).status.code(), Some(0));
}

#[test]
fn bad_arguments_are_validation_errors() {
    assert_eq!(mcrc(&["simulate"]).status.code(), Some(1));
    assert_eq!(mcrc(&["frobnicate"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let unknown = mcrc(&["simulate", "--reduced", "--set", "model.channel.speed=1", "--out", out]);
    assert_eq!(unknown.status.code(), Some(1), "{}", String::from_utf8_lossy(&unknown.stderr));
    let negative = mcrc(&["simulate", "--set", "model.channel.distance=-1", "--out", out]);
    assert_eq!(negative.status.code(), Some(1));
}

#[test]
fn missing_config_file_is_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let code = mcrc(&[
        "simulate",
        "--config",
        dir.path().join("absent.json").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])
    .status
    .code();
    assert_eq!(code, Some(2));
}

#[test]
fn simulate_writes_frozen_config_and_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"task": {"name": "narma10"}, "seed": 3}"#).unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = mcrc(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--reduced",
            "--set",
            "model.receptor.k_off=2",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let a = run("a");
    let b = run("b");
    for file in ["config.json", "predictions.csv", "report.json"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
    let frozen: serde_json::Value =
        serde_json::from_slice(&fs::read(a.join("config.json")).unwrap()).unwrap();
    assert_eq!(frozen["split"]["train"], 300);
    assert_eq!(frozen["model"]["receptor"]["k_off"], 2.0);
    assert_eq!(frozen["task"]["name"], "narma10");

    // the frozen config alone reproduces the run
    let c = dir.path().join("c");
    let o = mcrc(&[
        "simulate",
        "--config",
        a.join("config.json").to_str().unwrap(),
        "--out",
        c.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_eq!(fs::read(a.join("report.json")).unwrap(), fs::read(c.join("report.json")).unwrap());
}

#[test]
fn sweep_then_render() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("grid.json");
    fs::write(
        &grid,
        r#"{
            "base": {"split": {"train": 300, "test": 150}},
            "param1": {"path": "model.receptor.k_off", "values": [0.5, 2.0]},
            "param2": {"path": "model.encoding.n_max", "values": [1500, 3000]},
            "metrics": ["nrmse"]
        }"#,
    )
    .unwrap();
    let out = dir.path().join("sweep");
    let o = mcrc(&["sweep", "--grid", grid.to_str().unwrap(), "--workers", "2", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| l.ends_with(",ok")).count(), 4, "{csv}");
    assert!(out.join("grid.json").exists());
    assert_eq!(fs::read_dir(out.join("cache")).unwrap().count(), 4);

    let svg = dir.path().join("map.svg");
    let o = mcrc(&[
        "render",
        "--csv",
        out.join("sweep.csv").to_str().unwrap(),
        "--metric",
        "nrmse",
        "--out",
        svg.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let text = fs::read_to_string(svg).unwrap();
    assert_eq!(text.matches(r#"class="cell""#).count(), 4);
}

#[test]
fn oversized_sweep_is_rejected_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let o = mcrc(&[
        "sweep",
        "--preset",
        "kon_koff",
        "--count",
        "30",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("budget"));
}
