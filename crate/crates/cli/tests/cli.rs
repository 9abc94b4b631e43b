use std::path::PathBuf;
use std::process::{Command, Output};

use abrw_core::analytics::{pz_table, tail_bound, PzTable};
use abrw_core::offspring::fixtures::nn1;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn abrw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_abrw"))
        .args(args)
        .env_remove("ABRW_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn path(name: &str) -> String {
    fixture(name).to_str().unwrap().to_owned()
}

#[test]
fn law_check_reports_lambda() {
    let o = abrw(&["law", "check", &path("nn1.json")]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["lambda"], 2.0);
    assert_eq!(v["irreducible"], true);
}

#[test]
fn law_check_rejects_bad_documents() {
    let o = abrw(&["law", "check", &path("reducible.json")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Reducible"));
    let o = abrw(&["law", "check", &path("malformed.json")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("malformed"));
}

#[test]
fn pz_export_matches_bessel_value() {
    let o = abrw(&["analytics", "pz", "--law", &path("nn1.json"), "--t", "1", "--radius", "10"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(text.lines().next(), Some("z_1,p"));
    let p0: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("0,"))
        .unwrap()
        .parse()
        .unwrap();
    // e^{-2} I_0(2)
    assert!((p0 - 0.308508322553671).abs() < 1e-9, "{p0}");
}

#[test]
fn tailbound_wraps_library_value() {
    let o = abrw(&["analytics", "tailbound", "--law", &path("nn1.json"), "--r", "8", "--T", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let table: PzTable<f64> = pz_table(&nn1(), 1.0, 8, 1e-12).unwrap();
    let direct: f64 = tail_bound(&nn1(), &table, 8).unwrap();
    assert_eq!(v["tail_bound"].as_f64().unwrap(), direct);
}

#[test]
fn exponent_of_a_one_dimensional_law() {
    let o = abrw(&["analytics", "exponent", "--law", &path("death1.json"), "--t", "20"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["sup_pz_slope"].as_f64().unwrap() + 0.5).abs() < 0.05);
    assert!((v["parseval_slope"].as_f64().unwrap() + 0.5).abs() < 0.05);
}

#[test]
fn analytics_errors_exit_three() {
    let o = abrw(&["analytics", "pz", "--law", &path("nn1.json"), "--t=-1"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn mean_growth_passes_and_echoes_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = abrw(&["experiment", "mean-growth", "--config", &path("mean_growth.json"), "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let meta: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(meta["seed"], 7);
    assert_eq!(meta["config_sha256"].as_str().unwrap().len(), 64);
    let csv = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert!(csv.starts_with("observable,estimate,se,replicates,epsilon,seed,pass\n"));
    let records = std::fs::read_to_string(dir.path().join("records.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 2);
}

#[test]
fn seed_precedence() {
    let cfg = path("mean_growth.json");
    let run = |extra: &[&str], env: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_abrw"));
        c.args(["experiment", "mean-growth", "--config", &cfg]).args(extra).env_remove("ABRW_SEED");
        if let Some(v) = env {
            c.env("ABRW_SEED", v);
        }
        let o = c.output().unwrap();
        let first = String::from_utf8(o.stdout).unwrap();
        let meta: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
        meta["seed"].as_u64().unwrap()
    };
    assert_eq!(run(&[], None), 7);
    assert_eq!(run(&[], Some("9")), 9);
    assert_eq!(run(&["--seed", "42"], Some("9")), 42);
}

#[test]
fn same_seed_gives_identical_bytes() {
    let a = abrw(&["experiment", "coupling", "--config", &path("coupling.json"), "--seed", "42"]);
    let b = abrw(&["experiment", "coupling", "--config", &path("coupling.json"), "--seed", "42"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert!(stdout(&a).contains("\"observable\":\"containment_violations\",\"estimate\":0.0"));
}

#[test]
fn couple_single_pair() {
    let o = abrw(&["couple", "--config", &path("couple_pair.json"), "--seed", "5"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["seed"], 5);
    assert_eq!(v["violations"].as_array().unwrap().len(), 0);
}

#[test]
fn simulate_writes_trajectory_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = abrw(&["simulate", "--config", &path("simulate.json"), "--seed", "3", "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("replicate,seed,time,site,value,observable"));
    // 3 replicates × 3 times × 2 sites × 3 observables
    assert_eq!(lines.count(), 54);
    for row in csv.lines().skip(1).filter(|l| l.ends_with(",Z")) {
        let value: i64 = row.split(',').nth(4).unwrap().parse().unwrap();
        assert!(value.abs() <= 64);
    }

    let o = abrw(&["simulate", "--config", &path("labelled.json"), "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let mut lines = text.lines();
    let meta: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    assert_eq!(meta["seed"], 3);
    for l in lines {
        let e: serde_json::Value = serde_json::from_str(l).unwrap();
        assert!(e["t"].as_f64().unwrap() <= 0.5);
    }
}

#[test]
fn usage_errors() {
    assert_eq!(abrw(&["simulate", "--bogus"]).status.code(), Some(2));
    assert_eq!(abrw(&["experiment", "nope", "--config", "x"]).status.code(), Some(2));
    for sub in [&["law", "check", "--help"][..], &["analytics", "--help"], &["experiment", "--help"]] {
        let o = abrw(sub);
        assert_eq!(o.status.code(), Some(0));
    }
    let help = stdout(&abrw(&["experiment", "--help"]));
    for flag in ["--config", "--seed", "--threads", "--out"] {
        assert!(help.contains(flag), "{flag}");
    }
    let help = stdout(&abrw(&["analytics", "--help"]));
    for flag in ["--law", "--t", "--radius", "--r", "--T", "--tol"] {
        assert!(help.contains(flag), "{flag}");
    }
}
