use std::path::Path;
use std::process::{Command, Output};

use fsrm::io::{read_povm, read_state};
use fsrm_cli::output::parse_noise_csv;
use serde_json::Value;

fn fsrm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fsrm")).args(args).output().expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let out = fsrm(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn oracle_reports() {
    let v = ok_json(&["oracle", "--state", "bell"]);
    assert!((v["p2"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert!((v["p3"].as_f64().unwrap() - 0.25).abs() < 1e-9);
    assert!((v["negativity"].as_f64().unwrap() - 0.5).abs() < 1e-9);
    assert!((v["n3"].as_f64().unwrap() - 0.75).abs() < 1e-9);

    let v = ok_json(&["oracle", "--state", "werner:0.3333333333333333"]);
    assert!(v["negativity"].as_f64().unwrap().abs() < 1e-9);
    assert!(v["n3"].as_f64().unwrap() <= 1e-9);

    let v = ok_json(&["oracle", "--state", "product:2"]);
    assert_eq!(v["p2"].as_f64().unwrap(), 1.0);
    assert_eq!(v["p3"].as_f64().unwrap(), 1.0);
    assert_eq!(v["negativity"].as_f64().unwrap(), 0.0);

    let v = ok_json(&["oracle", "--state", "random:4:2:3"]);
    assert_eq!(v["partitions"].as_array().unwrap().len(), 7);
}

#[test]
fn estimate_targets_and_flags() {
    let v = ok_json(&["estimate", "--state", "bell", "--n-u", "10000", "--n-m", "2", "--seed", "3"]);
    let (mean, se) = (v["mean"].as_f64().unwrap(), v["std_error"].as_f64().unwrap());
    assert!((mean - 1.0).abs() <= 4.0 * se);
    assert_eq!(v["biased"], false);
    assert_eq!(v["batch_means"].as_array().unwrap().len(), 10);
    assert_eq!(v["config"]["seed"], 3);
    assert_eq!(v["config"]["n_m"], 2);

    let v = ok_json(&["estimate", "--scheme", "cs", "--n-u", "10000", "--epsilon", "0.5", "--seed", "4"]);
    let (mean, se) = (v["mean"].as_f64().unwrap(), v["std_error"].as_f64().unwrap());
    assert!(1.0 - mean > 5.0 * se, "{v}");

    let v = ok_json(&["estimate", "--scheme", "rm", "--n-u", "200"]);
    assert_eq!(v["biased"], true);
}

#[test]
fn config_file_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = path(dir.path(), "cfg.json");
    std::fs::write(
        &cfg,
        r#"{"state": "werner:0.9", "quantity": "p3", "n_u": 3000, "seed": 1, "noise": {"kind": "none"}}"#,
    )
    .unwrap();
    let v = ok_json(&["estimate", "--config", &cfg, "--seed", "9"]);
    assert_eq!(v["seed"], 9);
    assert_eq!(v["config"]["state"], "werner:0.9");
    assert_eq!(v["config"]["settings"], "sampled");
    assert_eq!(v["rounds"], 3000);

    // the echoed config reproduces the run
    let echo = path(dir.path(), "echo.json");
    std::fs::write(&echo, v["config"].to_string()).unwrap();
    let again = ok_json(&["estimate", "--config", &echo]);
    assert_eq!(again, v);

    std::fs::write(&cfg, r#"{"state": "bell", "shots": 3}"#).unwrap();
    let out = fsrm(&["estimate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown field"));
}

#[test]
fn validation_errors_exit_with_two() {
    for args in [
        &["estimate", "--quantity", "p3", "--n-m", "2"][..],
        &["estimate", "--partition", "11"],
        &["estimate", "--state", "werner:1.5"],
        &["converge", "--n-list", "1000,2000,4000"],
        &["noise-study", "--schemes", "fsrm-7"],
        &["make-povm", "--fidelity", "1.2"],
    ] {
        let out = fsrm(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn deterministic_across_thread_counts() {
    let args = ["estimate", "--quantity", "n3", "--state", "werner:0.7", "--n-u", "4000", "--n-m", "4", "--seed", "5"];
    let one = fsrm(&[&args[..], &["--single-thread"]].concat());
    let many = fsrm(&[&args[..], &["--threads", "4"]].concat());
    assert!(one.status.success() && many.status.success());
    assert_eq!(one.stdout, many.stdout);

    let ns = ["noise-study", "--schemes", "cs,fsrm-2", "--epsilons", "0.5", "--n-list", "100,1000"];
    let a = fsrm(&[&ns[..], &["--threads", "1"]].concat());
    let b = fsrm(&[&ns[..], &["--threads", "3"]].concat());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn make_state_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = path(dir.path(), "a.json");
    let b = path(dir.path(), "b.json");
    for p in [&a, &b] {
        assert!(fsrm(&["make-state", "--state", "random:2:2:7", "--out", p]).status.success());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let rho = read_state(Path::new(&a)).unwrap();
    assert_eq!(rho.n_qubits(), 2);

    let bell = path(dir.path(), "bell.json");
    assert!(fsrm(&["make-state", "--state", "bell", "--out", &bell]).status.success());
    let v = ok_json(&["oracle", "--state", &format!("file:{bell}")]);
    assert!((v["p2"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn make_povm_and_amend() {
    let dir = tempfile::tempdir().unwrap();
    let povm = path(dir.path(), "povm.json");
    let v = ok_json(&["make-povm", "--fidelity", "0.7344", "--out", &povm]);
    assert!((v["overall_fidelity"].as_f64().unwrap() - 0.7344).abs() < 0.01);
    let loaded = read_povm(Path::new(&povm)).unwrap();
    assert!((loaded.overall_fidelity() - 0.7344).abs() < 0.01);

    let coeffs = path(dir.path(), "coeffs.json");
    let r = ok_json(&["amend", "--povm", &povm, "--out", &coeffs]);
    assert!(r["residual"].as_f64().unwrap() <= 1e-6);
    assert!(r["bound"].as_f64().unwrap() <= 5.6e-8);
    assert!(r["K"].as_f64().unwrap() < 0.056);

    let r = ok_json(&["amend"]);
    assert!(r["residual"].as_f64().unwrap() <= 1e-9);

    let v = ok_json(&["estimate", "--quantity", "p3", "--povm", &povm, "--n-u", "1000"]);
    assert_eq!(v["biased"], true);
    let v = ok_json(&["estimate", "--quantity", "p3", "--povm", &povm, "--coefficients", &coeffs, "--n-u", "1000"]);
    assert_eq!(v["biased"], false);

    // a fully depolarized measurement cannot be amended
    let flat = path(dir.path(), "flat.json");
    assert!(fsrm(&["make-povm", "--fidelity", "0.25", "--twist", "0", "--out", &flat]).status.success());
    let out = fsrm(&["amend", "--povm", &flat]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    // elements that do not sum to I are rejected by the loader
    let mut doc: Value = serde_json::from_str(&std::fs::read_to_string(&povm).unwrap()).unwrap();
    doc["elements"][0][0][0]["re"] = Value::from(0.9);
    let broken = path(dir.path(), "broken.json");
    std::fs::write(&broken, doc.to_string()).unwrap();
    let out = fsrm(&["amend", "--povm", &broken]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sum to the identity"));
}

#[test]
fn noise_study_csv() {
    let out = fsrm(&["noise-study", "--schemes", "fsrm-2,cs", "--epsilons", "0.1,0.5", "--n-list", "100,1000,10000", "--seed", "2"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let rows = parse_noise_csv(&text).unwrap();
    assert_eq!(rows.len(), 12);
    let fsrm_05: Vec<f64> = rows.iter().filter(|r| r.scheme == "fsrm-2" && r.epsilon == 0.5).map(|r| r.err).collect();
    assert!(fsrm_05.windows(2).all(|w| w[1] < w[0]), "{fsrm_05:?}");
    let cs_floor = |eps: f64| rows.iter().find(|r| r.scheme == "cs" && r.epsilon == eps && r.n == 10000).unwrap().err;
    assert!(cs_floor(0.1) < cs_floor(0.5));
    for line in text.lines().skip(1) {
        let err = line.split(',').nth(4).unwrap();
        assert_eq!(err.split('e').next().unwrap().replace(['.', '-'], "").len(), 17, "{line}");
    }

    // without noise the error is Monte Carlo decay
    let out = fsrm(&["noise-study", "--schemes", "cs,fsrm-1", "--epsilons", "0", "--n-list", "100,10000"]);
    let rows = parse_noise_csv(&String::from_utf8(out.stdout).unwrap()).unwrap();
    for pair in rows.chunks(2) {
        assert!(pair[1].err < pair[0].err / 3.0, "{pair:?}");
    }
}

#[test]
fn converge_writes_csv_and_fits() {
    let dir = tempfile::tempdir().unwrap();
    let csv = path(dir.path(), "conv.csv");
    let fit = path(dir.path(), "fit.json");
    let out = fsrm(&[
        "converge", "--n-list", "200,400,800,1600", "--n-m-list", "2,20", "--repetitions", "20", "--out", &csv, "--fit-out",
        &fit,
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), "n_m,N,n_u,repetitions,err,seed");
    assert_eq!(text.lines().count(), 9);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&fit).unwrap()).unwrap();
    assert_eq!(v["fits"].as_array().unwrap().len(), 2);
    assert!(v["db_gain"].as_f64().unwrap().is_finite());
}
