use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TOY_CONFIG: &str = include_str!("../../../configs/toy.toml");
const TOY_DATA: &str = include_str!("../../../configs/toy.csv");

fn nostill() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_nostill"));
    cmd.env_remove("NOSTILL_OUTPUT_ROOT");
    cmd
}

/// A scratch directory with the toy data and a config edited by `edit`.
fn workspace(edit: impl Fn(&str) -> String) -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("toy.csv"), TOY_DATA).unwrap();
    let config = dir.path().join("toy.toml");
    fs::write(&config, edit(TOY_CONFIG)).unwrap();
    (dir, config)
}

fn run(args: &[&str]) -> Output {
    nostill().args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const RUN_ARTIFACTS: [&str; 8] = [
    "manifest.toml",
    "stationary_model.toml",
    "latents.csv",
    "model.toml",
    "trace_stationary.csv",
    "trace_nostill.csv",
    "summary.csv",
    "rms_series.csv",
];

#[test]
fn toy_run_writes_every_artifact() {
    let (dir, config) = workspace(str::to_string);
    let out = dir.path().join("out");
    let res = run(&["run", s(&config), "--out", s(&out)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    for name in RUN_ARTIFACTS {
        assert!(out.join(name).is_file(), "missing {name}");
    }
    let manifest = fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(manifest.contains("status = \"ok\""));
    for name in &RUN_ARTIFACTS[1..] {
        assert!(manifest.contains(&format!("\"{name}\"")), "{name} not in manifest");
    }
    let listed = fs::read_dir(&out).unwrap().count();
    assert_eq!(listed, RUN_ARTIFACTS.len(), "orphan outputs");
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "model_label,mean_rms");
    assert!(lines[1].starts_with("stationary,"));
    assert!(lines[2].starts_with("nostill,"));
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let (dir, config) = workspace(str::to_string);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let res = run(&["run", s(&config), "--out", s(out)]);
        assert_eq!(code(&res), 0, "{}", stderr(&res));
    }
    for name in RUN_ARTIFACTS {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name} differs"
        );
    }
}

#[test]
fn seed_flag_overrides_config() {
    let (dir, config) = workspace(str::to_string);
    let out = dir.path().join("out");
    let res = run(&["select", s(&config), "--out", s(&out), "--seed", "99"]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let manifest = fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(manifest.contains("seed = 99"));
}

#[test]
fn unknown_family_exits_before_computing() {
    let (dir, config) = workspace(|c| c.replace("family = \"ch2\"", "family = \"matern\""));
    let out = dir.path().join("out");
    let res = run(&["run", s(&config), "--out", s(&out)]);
    assert_eq!(code(&res), 2, "{}", stderr(&res));
    assert!(!out.exists());
}

#[test]
fn missing_seed_is_a_config_error() {
    let (dir, config) = workspace(|c| c.replace("seed = 7\n", ""));
    let res = run(&["run", s(&config), "--out", s(&dir.path().join("out"))]);
    assert_eq!(code(&res), 2);
}

#[test]
fn missing_dataset_is_a_config_error() {
    let (dir, config) = workspace(|c| c.replace("toy.csv", "absent.csv"));
    let res = run(&["ingest", s(&config), "--out", s(&dir.path().join("out"))]);
    assert_eq!(code(&res), 2);
}

#[test]
fn unreadable_config_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let res = run(&["run", s(&dir.path().join("nope.toml"))]);
    assert_eq!(code(&res), 4);
}

#[test]
fn unwritable_output_is_an_io_error() {
    let (dir, config) = workspace(str::to_string);
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let res = run(&["ingest", s(&config), "--out", s(&blocker.join("out"))]);
    assert_eq!(code(&res), 4, "{}", stderr(&res));
}

#[test]
fn constant_values_are_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("x,y,t,value,station\n");
    for st in 0..4 {
        for t in 0..3 {
            csv += &format!("{},0,{t},1.5,{st}\n", st as f64 / 3.0);
        }
    }
    fs::write(dir.path().join("toy.csv"), csv).unwrap();
    let config = dir.path().join("toy.toml");
    fs::write(&config, TOY_CONFIG.replace("k = 3", "k = 2").replace("m_total = 4", "m_total = 2"))
        .unwrap();
    let out = dir.path().join("out");
    let res = run(&["run", s(&config), "--out", s(&out)]);
    assert_eq!(code(&res), 3, "{}", stderr(&res));
    let manifest = fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(manifest.contains("status = \"failed\""));
    assert!(manifest.contains("failed_stage = \"stationary\""));
    assert!(stderr(&res).contains("[stationary]"));
}

#[test]
fn staged_commands_match_a_full_run() {
    let (dir, config) = workspace(str::to_string);
    let full = dir.path().join("full");
    let staged = dir.path().join("staged");
    assert_eq!(code(&run(&["run", s(&config), "--out", s(&full)])), 0);

    let res = run(&["ingest", s(&config), "--out", s(&staged)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    assert!(staged.join("train.csv").is_file() && staged.join("test.csv").is_file());
    let res = run(&["train", s(&config), "--out", s(&staged)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let res = run(&["plan", s(&config), "--out", s(&staged)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    for name in ["latents.csv", "model.toml", "summary.csv", "rms_series.csv"] {
        assert_eq!(
            fs::read(full.join(name)).unwrap(),
            fs::read(staged.join(name)).unwrap(),
            "{name} differs"
        );
    }
}

#[test]
fn plan_without_models_is_an_io_error() {
    let (dir, config) = workspace(str::to_string);
    let res = run(&["plan", s(&config), "--out", s(&dir.path().join("empty"))]);
    assert_eq!(code(&res), 4, "{}", stderr(&res));
}

#[test]
fn train_accepts_external_latents() {
    let (dir, config) = workspace(str::to_string);
    let latents = dir.path().join("mine.csv");
    fs::write(&latents, "x,y,t\n0,0,0\n1,0,9\n").unwrap();
    let out = dir.path().join("out");
    let res = run(&["train", s(&config), "--out", s(&out), "--latents", s(&latents)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let manifest = fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(manifest.contains("m = 2"));
}

#[test]
fn training_log_is_monotone_per_restart() {
    let (dir, config) = workspace(str::to_string);
    let res = run(&["train", s(&config), "--out", s(&dir.path().join("out"))]);
    assert_eq!(code(&res), 0);
    let log = stderr(&res);
    let mut last: Option<(String, f64)> = None;
    let mut seen = 0;
    for line in log.lines().filter(|l| l.contains(" lml=")) {
        let restart = line.split_whitespace().find(|w| w.starts_with("restart=")).unwrap();
        let lml: f64 = line.rsplit("lml=").next().unwrap().parse().unwrap();
        if let Some((r, v)) = &last {
            if r == restart && !line.contains("iter=0 ") {
                assert!(lml >= *v, "{line}");
            }
        }
        last = Some((restart.to_string(), lml));
        seen += 1;
    }
    assert!(seen > 0, "no per-iteration lml lines in\n{log}");
}

#[test]
fn output_root_env_relocates_runs() {
    let (dir, config) = workspace(str::to_string);
    let root = dir.path().join("root");
    let res = nostill()
        .env("NOSTILL_OUTPUT_ROOT", &root)
        .args(["ingest", s(&config)])
        .output()
        .unwrap();
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    assert!(root.join("runs/toy/manifest.toml").is_file());
    assert!(!dir.path().join("runs").exists());
}

#[test]
fn report_collects_an_m_sweep() {
    let (dir, config) = workspace(str::to_string);
    let mut runs = Vec::new();
    for m in [4, 2, 3] {
        let cfg = dir.path().join(format!("m{m}.toml"));
        fs::write(&cfg, fs::read_to_string(&config).unwrap().replace("m_total = 4", &format!("m_total = {m}")))
            .unwrap();
        let out = dir.path().join(format!("m{m}"));
        let res = run(&["run", s(&cfg), "--out", s(&out)]);
        assert_eq!(code(&res), 0, "{}", stderr(&res));
        runs.push(out);
    }
    let report = dir.path().join("report");
    let mut args = vec!["report", "--out", s(&report)];
    args.extend(runs.iter().map(|p| s(p)));
    let res = run(&args);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let mean = fs::read_to_string(report.join("mean_rms_vs_m.csv")).unwrap();
    let rows: Vec<&str> = mean.lines().collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0], "run,m,nostill_mean_rms,stationary_mean_rms,mismatch");
    let ms: Vec<&str> = rows[1..].iter().map(|r| r.split(',').nth(1).unwrap()).collect();
    assert_eq!(ms, ["2", "3", "4"]);
    assert!(rows[1..].iter().all(|r| r.ends_with(",0")));
    let long = fs::read_to_string(report.join("rms_long.csv")).unwrap();
    assert_eq!(long.lines().next().unwrap(), "run,model_label,m,timestep,rms,mismatch");
    // 3 runs, 2 models, 10 steps
    assert_eq!(long.lines().count(), 1 + 3 * 2 * 10);
}

#[test]
fn report_flags_runs_on_other_test_sets() {
    let (dir, config) = workspace(str::to_string);
    let a = dir.path().join("a");
    assert_eq!(code(&run(&["run", s(&config), "--out", s(&a)])), 0);
    let other = dir.path().join("other.toml");
    fs::write(&other, fs::read_to_string(&config).unwrap().replace("k = 3", "k = 4")).unwrap();
    let b = dir.path().join("b");
    let res = run(&["run", s(&other), "--out", s(&b)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let report = dir.path().join("report");
    let res = run(&["report", "--out", s(&report), s(&a), s(&b)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let mean = fs::read_to_string(report.join("mean_rms_vs_m.csv")).unwrap();
    let flags: Vec<&str> = mean.lines().skip(1).map(|r| r.rsplit(',').next().unwrap()).collect();
    assert_eq!(flags, ["0", "1"]);
}

#[test]
fn report_without_runs_fails() {
    let res = run(&["report"]);
    assert_eq!(code(&res), 2);
}

#[test]
fn report_on_missing_summaries_fails() {
    let dir = tempfile::tempdir().unwrap();
    let res = run(&["report", "--out", s(&dir.path().join("r")), s(dir.path())]);
    assert_ne!(code(&res), 0);
}
