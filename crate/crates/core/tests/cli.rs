use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

use rewardgrid::config::{ExperimentSpec, Method};
use rewardgrid::harness::{self, SUMMARY_HEADER};
use rewardgrid::{GameConfig, Movement};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rewardgrid"))
}

fn scratch() -> TempDir {
    tempfile::tempdir().unwrap()
}

fn write_spec(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("spec.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = bin();
    cmd.args(args);
    match env_out {
        Some(d) => cmd.env(harness::OUT_DIR_VAR, d),
        None => cmd.env_remove(harness::OUT_DIR_VAR),
    };
    cmd.output().unwrap()
}

const ONLINE: &str = r#"
[experiment]
name = "cli-online"
method = "online"
replications = 6
base_seed = 3
[game]
preset = "5x5"
movement = "random"
[online]
n_obs = 10
"#;

#[test]
fn reruns_without_timing_are_byte_identical() {
    let tmp = scratch();
    let dir = tmp.path();
    let spec = write_spec(dir, ONLINE);
    let spec = spec.to_str().unwrap();
    let mut files = Vec::new();
    for k in 0..2 {
        let out = dir.join(format!("out{k}"));
        let o = run(&["--no-timing", "--out", out.to_str().unwrap(), "run", spec], None);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        files.push((
            std::fs::read(out.join("cli-online_summary.csv")).unwrap(),
            std::fs::read(out.join("cli-online_runs.csv")).unwrap(),
        ));
    }
    assert_eq!(files[0], files[1]);
    let summary = String::from_utf8(files[0].0.clone()).unwrap();
    assert_eq!(summary.lines().next(), Some(SUMMARY_HEADER));
}

#[test]
fn out_dir_comes_from_environment() {
    let tmp = scratch();
    let dir = tmp.path();
    let spec = write_spec(dir, ONLINE);
    let target = dir.join("from-env");
    let o = run(&["--no-timing", "run", spec.to_str().unwrap()], Some(&target));
    assert!(o.status.success());
    assert!(target.join("cli-online_summary.csv").exists());
}

#[test]
fn sweep_writes_sorted_curve() {
    let tmp = scratch();
    let dir = tmp.path();
    let spec = write_spec(dir, ONLINE);
    let out = dir.join("out");
    let o = run(
        &["--out", out.to_str().unwrap(), "sweep", "--n-obs", "20,5,10", spec.to_str().unwrap()],
        None,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let curve = std::fs::read_to_string(out.join("cli-online_curve.csv")).unwrap();
    let obs: Vec<usize> = curve
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(obs, vec![5, 10, 20]);
    for line in curve.lines().skip(1) {
        let p: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&p));
    }
}

#[test]
fn plan_prints_a_trace() {
    let tmp = scratch();
    let dir = tmp.path();
    let spec = write_spec(dir, ONLINE);
    let o = run(&["plan", spec.to_str().unwrap()], None);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,row,col"));
    assert_eq!(lines.next(), Some("0,0,0"));
    let rows: Vec<Vec<usize>> = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    for (k, r) in rows.iter().enumerate() {
        assert_eq!(r[0], k + 1);
    }
    assert!(rows.len() >= 8);
    assert_eq!(rows.last().unwrap()[1..], [4, 4]);
}

#[test]
fn oracle_check_passes() {
    let o = run(&["oracle-check", "--instances", "40"], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = scratch();
    let dir = tmp.path();
    assert_eq!(run(&["run"], None).status.code(), Some(2));
    assert_eq!(run(&["table", "9"], None).status.code(), Some(2));
    let missing = dir.join("nope.toml");
    assert_eq!(run(&["run", missing.to_str().unwrap()], None).status.code(), Some(2));
    let bad = write_spec(dir, "[experiment]\nmethod = \"online\"\n[game]\npreset = \"6x6\"\n");
    assert_eq!(run(&["run", bad.to_str().unwrap()], None).status.code(), Some(2));
    let o = run(&["sweep", "--n-obs", "5", bad.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn summary_invariants_hold() {
    for (method, mv) in [
        (Method::Online, Movement::Random),
        (Method::Tabular, Movement::Clockwise),
        (Method::Dqn, Movement::Counterclockwise),
    ] {
        let mut spec = ExperimentSpec::new("inv", method, GameConfig::five_by_five(mv), 3);
        spec.tabular.epochs = 200;
        spec.dqn.epochs = 20;
        let res = harness::run_experiment(&spec).unwrap();
        let row = &res.summary;
        assert!(row.successes <= row.replications);
        assert_eq!(res.records.len(), 3);
        for r in &res.records {
            if let Some(regret) = r.regret {
                assert!(regret >= 0.0);
            }
            assert_eq!(r.success, r.score.is_some());
        }
        if let Some(g) = row.avg_regret {
            assert!(g >= 0.0);
        }
    }
}
