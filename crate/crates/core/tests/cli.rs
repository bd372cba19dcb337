use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mlmc_greeks::cli::{DENSITY_SCHEMA, LEVELS_SCHEMA};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mlmc-greeks"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn data_rows(csv: &str) -> Vec<&str> {
    csv.lines().skip(2).filter(|l| !l.is_empty()).collect()
}

#[test]
fn levels_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(
        dir.path(),
        &["levels", "--levels", "2:4", "--samples", "4000", "--out", "levels.csv"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("levels.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(LEVELS_SCHEMA));
    assert!(lines.next().unwrap().starts_with("level,h,n,mean_value"));
    assert_eq!(data_rows(&csv).len(), 3);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("levels.csv.json")).unwrap()).unwrap();
    assert!(summary.to_string().contains("beta_hat"));

    // only the two outputs, no stray temporaries
    let mut names: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["levels.csv", "levels.csv.json"]);
}

#[test]
fn single_level_has_one_row_and_no_fit() {
    let o = run(&["levels", "--levels", "0:0", "--samples", "1000"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = String::from_utf8(o.stdout.clone()).unwrap();
    assert!(csv.starts_with(LEVELS_SCHEMA));
    assert_eq!(data_rows(&csv).len(), 1);
    let summary: serde_json::Value = serde_json::from_str(&stderr(&o)).unwrap();
    assert!(summary["value"]["beta_hat"].is_null(), "{summary}");
}

#[test]
fn output_is_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    for (cmd, extra) in [
        (
            "levels",
            &["--levels", "1:4", "--samples", "5000", "--method", "vibrato"][..],
        ),
        ("mlmc", &["--eps", "0.1"][..]),
    ] {
        for threads in ["1", "2"] {
            let out = format!("{cmd}-{threads}.out");
            let mut args = vec![cmd, "--seed", "3", "--threads", threads, "--out", &out];
            args.extend_from_slice(extra);
            let o = run_in(dir.path(), &args);
            assert_eq!(code(&o), 0, "{}", stderr(&o));
        }
        let a = fs::read(dir.path().join(format!("{cmd}-1.out"))).unwrap();
        let b = fs::read(dir.path().join(format!("{cmd}-2.out"))).unwrap();
        assert_eq!(a, b, "{cmd} output differs between thread counts");
    }
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.json");
    fs::write(
        &cfg,
        r#"{"seed": 5, "samples": 3000, "level_min": 1, "level_max": 3, "method": "cond_exp"}"#,
    )
    .unwrap();
    let cfg = cfg.to_str().unwrap();

    let from_file = run(&["levels", "--config", cfg]);
    assert_eq!(code(&from_file), 0, "{}", stderr(&from_file));
    assert_eq!(data_rows(&String::from_utf8_lossy(&from_file.stdout)).len(), 3);

    let explicit = run(&[
        "levels",
        "--seed",
        "5",
        "--samples",
        "3000",
        "--levels",
        "1:3",
        "--method",
        "cond_exp",
    ]);
    assert_eq!(from_file.stdout, explicit.stdout);

    let overridden = run(&["levels", "--config", cfg, "--levels", "2:3", "--seed", "6"]);
    assert_eq!(code(&overridden), 0);
    let csv = String::from_utf8_lossy(&overridden.stdout).into_owned();
    assert_eq!(data_rows(&csv).len(), 2);
    assert_ne!(
        data_rows(&csv)[1],
        data_rows(&String::from_utf8_lossy(&from_file.stdout))[2]
    );
}

#[test]
fn configuration_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"sigma": 0.2, "volatility": 0.3}"#).unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["levels", "--config", bad.to_str().unwrap()],
        vec!["levels", "--config", "/nonexistent/exp.json"],
        vec!["density", "--samples", "100"],
        vec!["levels", "--method", "pathwise", "--payoff", "digital"],
        vec!["levels", "--levels", "5:2"],
        vec!["levels", "--method", "nonsense"],
        vec!["mlmc", "--eps", "-1"],
        vec!["levels", "--grid", "power", "--payoff", "call"],
        vec!["levels", "--unknown-flag"],
        vec![],
    ];
    for args in cases {
        let o = run(&args);
        assert_eq!(code(&o), 2, "{args:?}: {}", stderr(&o));
        assert!(o.stdout.is_empty(), "{args:?} wrote to stdout");
    }
}

#[test]
fn help_exits_0() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["levels", "--help"])), 0);
}

#[test]
fn mlmc_without_enough_levels_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("capped.json");
    fs::write(
        &cfg,
        r#"{"max_level": 1, "pilot_samples": 2000, "greek_tolerance": "value_only"}"#,
    )
    .unwrap();
    let o = run_in(
        dir.path(),
        &[
            "mlmc",
            "--config",
            cfg.to_str().unwrap(),
            "--eps",
            "0.01",
            "--out",
            "report.json",
        ],
    );
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["converged"], false);
}

#[test]
fn mlmc_report_is_json() {
    let o = run(&["mlmc", "--eps", "0.1", "--method", "cond_exp"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let value = report["estimates"]["value"].as_f64().unwrap();
    assert!((value - 10.4506).abs() < 0.3, "{value}");
    assert_eq!(report["converged"], true);
}

#[test]
fn density_histogram() {
    let o = run(&[
        "density",
        "--barrier",
        "95",
        "--payoff",
        "barrier",
        "--levels",
        "6:6",
        "--samples",
        "5000",
        "--bins",
        "20",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = String::from_utf8(o.stdout.clone()).unwrap();
    assert!(csv.starts_with(DENSITY_SCHEMA));
    assert_eq!(data_rows(&csv).len(), 20);
    let summary: serde_json::Value = serde_json::from_str(&stderr(&o)).unwrap();
    assert!(summary["crossings"].as_u64().unwrap() > 0);
}

#[test]
fn compare_runs_both_grids() {
    let o = run(&[
        "compare",
        "--barrier",
        "95",
        "--payoff",
        "barrier",
        "--levels",
        "0:3",
        "--samples",
        "2000",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(report.to_string().contains("uniform"));
}
