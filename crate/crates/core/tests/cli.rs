use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn pamlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pamlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn schedule_reports_the_stage_arithmetic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "s.conf",
        "kind = schedule\nepsilon = 1e-10\nl_star = 2\nn_max = 5\n",
    );
    let out = dir.path().join("out");
    let res = pamlab(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["status"], "ok");
    let results = &report["results"];
    let delta = 1.0 / (1e10f64).ln().ln();
    assert!((results["delta"].as_f64().unwrap() - delta).abs() < 1e-15);
    assert!((results["T0"].as_f64().unwrap() - 2.0 * (2e10f64).ln()).abs() < 1e-12);
    // log₊0 = 1, so the first gap is δ itself.
    assert!((results["T1_minus_T0"].as_f64().unwrap() - delta).abs() < 1e-15);
    assert_eq!(results["monotone"], true);
    let csv = fs::read_to_string(out.join("schedule.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 6);
}

#[test]
fn tailsum_stays_below_the_constant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "t.conf", "kind = tailsum\ndeltas = 0.1, 0.3\n");
    let out = dir.path().join("out");
    assert!(pamlab(&["run", "--config", &cfg, "--out", out.to_str().unwrap()])
        .status
        .success());
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["results"]["bounded"], true);
    let c = report["results"]["constant"].as_f64().unwrap();
    assert!((c - 2.1311).abs() < 1e-3, "constant {c}");
}

#[test]
fn runs_are_reproducible_and_the_echo_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "p.conf",
        "kind = pam\nn = 16\ndt = 1e-3\nt_end = 0.2\nstride = 50\ntrajectories = 3\nmu = 0.5\nsigma = 1\n",
    );
    let run = |out: &Path, config: &str, workers: &str| {
        let res = pamlab(&[
            "run",
            "--config",
            config,
            "--seed",
            "0x2a",
            "--workers",
            workers,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    };
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    run(&a, &cfg, "1");
    run(&b, &cfg, "3");
    let echo = a.join("resolved.conf");
    run(&c, echo.to_str().unwrap(), "1");
    let report_a = fs::read(a.join("report.json")).unwrap();
    assert_eq!(report_a, fs::read(b.join("report.json")).unwrap());
    assert_eq!(report_a, fs::read(c.join("report.json")).unwrap());
    for name in ["summary.csv", "snapshots.csv", "series/traj_00002.csv"] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(c.join(name)).unwrap(),
            "{name}"
        );
    }
    let resolved = fs::read_to_string(&echo).unwrap();
    assert!(resolved.contains("seed = 42"));
}

#[test]
fn report_reaggregates_series() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "p.conf",
        "kind = pam\nn = 16\ndt = 1e-3\nt_end = 0.1\nstride = 10\ntrajectories = 2\n",
    );
    let out = dir.path().join("run");
    assert!(pamlab(&["run", "--config", &cfg, "--out", out.to_str().unwrap()])
        .status
        .success());
    let again = dir.path().join("again");
    let res = pamlab(&[
        "report",
        "--input",
        out.to_str().unwrap(),
        "--gamma",
        "0.1",
        "--from",
        "0",
        "--horizon",
        "0.05",
        "--out",
        again.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let report = read_json(&again.join("report.json"));
    assert_eq!(report["results"]["trajectories"], 2);
    assert!(again.join("summary.csv").exists());
}

#[test]
fn validate_flags_coarse_steps_and_bad_epsilon() {
    let dir = tempfile::tempdir().unwrap();
    let good = write_config(dir.path(), "g.conf", "kind = pam\nn = 64\ndt = 1e-5\ntheta = 0\n");
    let res = pamlab(&["validate", "--config", &good]);
    assert!(res.status.success());
    let doc: Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(doc["checks"]["cfl"]["ok"], true);

    let explicit = write_config(dir.path(), "e.conf", "kind = pam\nn = 64\ndt = 1\ntheta = 0\n");
    let doc: Value = serde_json::from_slice(&pamlab(&["validate", "--config", &explicit]).stdout).unwrap();
    assert_eq!(doc["checks"]["cfl"]["ok"], false);
    let limit = doc["checks"]["cfl"]["explicit_limit"].as_f64().unwrap();
    assert!((limit - (2.0f64 / 64.0).powi(2) / 2.0).abs() < 1e-15);
    assert_eq!(doc["all_ok"], false);

    let eps = write_config(dir.path(), "x.conf", "kind = schedule\nepsilon = 0.1\n");
    let doc: Value = serde_json::from_slice(&pamlab(&["validate", "--config", &eps]).stdout).unwrap();
    assert_eq!(doc["checks"]["epsilon_range"]["ok"], false);
}

#[test]
fn failures_write_an_error_document_and_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let unknown = write_config(dir.path(), "u.conf", "kind = schedule\nbogus = 1\n");
    let res = pamlab(&["run", "--config", &unknown, "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    let err = read_json(&out.join("error.json"));
    assert_eq!(err["status"], "error");
    assert_eq!(err["exit_code"], 2);

    let eps = write_config(dir.path(), "e.conf", "kind = schedule\nepsilon = 0.1\n");
    let res = pamlab(&["run", "--config", &eps, "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("outside"));
}
