//! End-to-end runs of the command-line tool and of the staged runner.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use harnack_lab::runner::{demo_config, run, RunConfig, RunOptions, Stage, EXIT_CONFIG, EXIT_PASS};

const BIN: &str = env!("CARGO_BIN_EXE_harnack-lab");

const STATIC_C: &str = r#"
[grid]
n = 16

[flow]
variant = "static"
horizon = 0.01
dt = 2e-4
metric = { kind = "flat" }

[heat]
gamma = { kind = "constant", value = 0.0 }
a = 0.0
terminal = { kind = "fourier", mean = 0.5, amplitude = 0.2, mode = [1, 1] }

[check]
theorems = ["C"]
"#;

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    write_named(dir, "run.toml", text)
}

fn write_named(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn cli(config: &Path, out: &Path, stage: &str) -> Output {
    Command::new(BIN)
        .args(["--config", config.to_str().unwrap(), "--stage", stage, "--out", out.to_str().unwrap()])
        .env("RUST_LOG", "info")
        .output()
        .unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn margins(csv: &Path) -> Vec<f64> {
    fs::read_to_string(csv)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn static_flat_theorem_c_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), STATIC_C);
    let out = tmp.path().join("out");
    let o = cli(&cfg, &out, "all");
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stdout));
    assert!(text(&o.stdout).contains("theorem C: Pass"));
    let m = margins(&out.join("check_C.csv"));
    assert!(!m.is_empty());
    assert!(m.iter().all(|&x| x >= 0.0));
    for f in ["flow.csv", "heat.csv", "check_C.gp", "report-all.txt"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
}

#[test]
fn oversized_step_is_rejected_with_the_bound() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &STATIC_C.replace("dt = 2e-4", "dt = 1e-2"));
    let out = tmp.path().join("out");
    let o = cli(&cfg, &out, "all");
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
    let stdout = text(&o.stdout);
    assert!(stdout.contains("exceeds the stability bound"), "{stdout}");
    // 0.2 h^2 on the flat 16-point unit torus.
    assert!(stdout.contains(&format!("{:e}", 0.2 / 256.0)), "{stdout}");
    assert!(!out.exists());
}

#[test]
fn wrong_heat_parameters_fail_before_any_compute() {
    let tmp = tempfile::tempdir().unwrap();
    let text_cfg = STATIC_C
        .replace("value = 0.0", "value = 1.0")
        .replace("a = 0.0", "a = 1.0")
        .replace(r#"theorems = ["C"]"#, r#"theorems = ["A1"]"#);
    let cfg = write_config(tmp.path(), &text_cfg);
    let out = tmp.path().join("out");
    let o = cli(&cfg, &out, "all");
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
    assert!(text(&o.stdout).contains("heat parameters do not match theorem A1"));
    assert!(!out.exists(), "no artifacts may be written");
}

#[test]
fn malformed_config_exits_five() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &STATIC_C.replace("[check]", "[check]\nbogus = 1"));
    let o = cli(&cfg, &tmp.path().join("out"), "all");
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
    let o = Command::new(BIN).args(["--config", "/nonexistent.toml"]).output().unwrap();
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
}

#[test]
fn staged_runs_share_the_trajectory_cache() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), STATIC_C);
    let out = tmp.path().join("out");

    let o = cli(&cfg, &out, "check");
    assert_eq!(o.status.code(), Some(EXIT_CONFIG), "check needs a trajectory first");

    assert_eq!(cli(&cfg, &out, "run-flow").status.code(), Some(0));
    let o = cli(&cfg, &out, "check");
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stdout));
    assert!(text(&o.stdout).contains("trajectory cache hit"));
    assert!(text(&o.stderr).contains("trajectory cache hash matches"));

    // A run in another directory is untouched by edits here.
    let other = tmp.path().join("other");
    assert_eq!(cli(&cfg, &other, "run-flow").status.code(), Some(0));

    let edited = write_named(tmp.path(), "edited.toml", &STATIC_C.replace("dt = 2e-4", "dt = 1e-4"));
    let o = cli(&edited, &out, "check");
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
    assert!(text(&o.stdout).to_lowercase().contains("stale"), "{}", text(&o.stdout));

    let o = cli(&cfg, &other, "check");
    assert_eq!(o.status.code(), Some(0));
    assert!(text(&o.stdout).contains("trajectory cache hit"));
}

#[test]
fn identical_runs_write_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::from_toml_str(STATIC_C).unwrap();
    cfg.check.identities = vec!["T1_EQUIV".into(), "T2_EQUIV".into()];
    let run_in = |name: &str| {
        let opts = RunOptions { stage: Stage::All, out: Some(tmp.path().join(name)), seed: Some(11), levels: None };
        let outcome = run(&cfg, &opts);
        assert_eq!(outcome.exit_code, EXIT_PASS, "{:?}", outcome.report);
        outcome
    };
    let a = run_in("a");
    run_in("b");
    let mut csvs = 0;
    for path in &a.artifacts {
        let name = path.file_name().unwrap();
        if path.extension().is_some_and(|e| e == "csv") {
            csvs += 1;
            assert_eq!(fs::read(path).unwrap(), fs::read(tmp.path().join("b").join(name)).unwrap(), "{name:?} differs");
        }
    }
    assert!(csvs >= 4);
}

#[test]
fn convergence_stage_writes_a_three_level_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &STATIC_C.replace("n = 16", "n = 8").replace("dt = 2e-4", "dt = 1e-3"));
    let out = tmp.path().join("out");
    let o = Command::new(BIN)
        .args(["--config", cfg.to_str().unwrap(), "--stage", "convergence", "--levels", "2", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(EXIT_CONFIG), "two levels cannot fit an order");

    let o = cli(&cfg, &out, "convergence");
    let table = fs::read_to_string(out.join("convergence.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next().unwrap(), "id,level,n,h,dt,linf,l2,relative,slack,order,passed");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    let ids: std::collections::BTreeSet<&str> = rows.iter().map(|r| r[0]).collect();
    assert!(ids.contains("T1_EQUIV") && ids.contains("L31_LAP"), "{ids:?}");
    for id in &ids {
        let levels: Vec<&str> = rows.iter().filter(|r| r[0] == *id).map(|r| r[2]).collect();
        assert_eq!(levels, ["8", "16", "32"], "{id}");
    }
    assert!(matches!(o.status.code(), Some(0) | Some(2)), "{}", text(&o.stdout));
}

#[test]
fn demo_config_round_trips_through_toml() {
    let cfg = demo_config(16, 0.01, 1e-4);
    let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
    assert_eq!(back, cfg);
}
