use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use unlearn_core::harness::Scenario;

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unlearn-lab"))
        .args(args)
        .env_remove("UNLEARN_LAB_OUT")
        .output()
        .expect("binary runs")
}

fn config(name: &str) -> String {
    format!("{}/../../configs/{name}.json", env!("CARGO_MANIFEST_DIR"))
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn list_names_every_scenario() {
    let o = lab(&["list"]);
    assert!(o.status.success());
    let names: Vec<String> = stdout(&o)
        .lines()
        .map(|l| l.split_whitespace().next().unwrap().to_owned())
        .collect();
    let expected: Vec<String> = Scenario::ALL.iter().map(|s| s.name().to_owned()).collect();
    assert_eq!(names, expected);
}

#[test]
fn run_writes_tables_and_a_valid_report() {
    let out = tempfile::tempdir().unwrap();
    let o = lab(&[
        "run",
        "one-dim",
        "--config",
        &config("one-dim"),
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = out.path().join("one-dim");
    assert!(dir.join("stationary_points.csv").is_file());

    let schema: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(format!(
            "{}/../../docs/report.schema.json",
            env!("CARGO_MANIFEST_DIR")
        ))
        .unwrap(),
    )
    .unwrap();
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.join("report.json")).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator
        .iter_errors(&report)
        .map(|e| e.to_string())
        .collect();
    assert!(errors.is_empty(), "{errors:?}");
    for file in report["tables"].as_object().unwrap().values() {
        assert!(dir.join(file.as_str().unwrap()).is_file());
    }
}

#[test]
fn runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let o = lab(&[
            "run",
            "random-sets",
            "--config",
            &config("random-sets"),
            "--out",
            d.path().to_str().unwrap(),
        ]);
        assert!(o.status.success());
    }
    let (fa, fb) = (
        read_dir_sorted(&a.path().join("random-sets")),
        read_dir_sorted(&b.path().join("random-sets")),
    );
    assert_eq!(fa, fb);
}

#[test]
fn seed_flag_overrides_config() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for (d, seed) in [(&a, "0"), (&b, "7")] {
        let o = lab(&[
            "run",
            "random-sets",
            "--config",
            &config("random-sets"),
            "--seed",
            seed,
            "--out",
            d.path().to_str().unwrap(),
        ]);
        assert!(o.status.success());
    }
    let report = |d: &tempfile::TempDir| -> serde_json::Value {
        serde_json::from_slice(&fs::read(d.path().join("random-sets/report.json")).unwrap())
            .unwrap()
    };
    assert_eq!(report(&a)["seed"], 0);
    assert_eq!(report(&b)["seed"], 7);
    let table = |d: &tempfile::TempDir| {
        fs::read(d.path().join("random-sets/violation_frequency.csv")).unwrap()
    };
    assert_ne!(table(&a), table(&b));
}

#[test]
fn env_var_sets_default_output_dir() {
    let out = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_unlearn-lab"))
        .args(["run", "random-sets", "--config", &config("random-sets")])
        .env("UNLEARN_LAB_OUT", out.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(out.path().join("random-sets/report.json").is_file());

    // An explicit --out still wins.
    let other = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_unlearn-lab"))
        .args([
            "run",
            "random-sets",
            "--config",
            &config("random-sets"),
            "--out",
        ])
        .arg(other.path())
        .env("UNLEARN_LAB_OUT", out.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(other.path().join("random-sets/report.json").is_file());
}

#[test]
fn verify_exit_codes() {
    let ok = lab(&["verify", "one-dim"]);
    assert!(ok.status.success(), "{}", stdout(&ok));
    assert!(stdout(&ok).lines().all(|l| l.starts_with("PASS ")));

    // The Gauss-Seidel direction check fails by design.
    let bad = lab(&["verify", "two-dim-region"]);
    assert_eq!(bad.status.code(), Some(1));
    let failed: Vec<String> = stdout(&bad)
        .lines()
        .filter(|l| l.starts_with("FAIL "))
        .map(str::to_owned)
        .collect();
    assert_eq!(failed.len(), 1);
    assert!(failed[0].starts_with("FAIL gauss_seidel.monotone_claimed "));
}

#[test]
fn bad_input_exits_two() {
    assert_eq!(
        lab(&["run", "one-dim", "--config", "/nonexistent.json"])
            .status
            .code(),
        Some(2)
    );
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"params": {"no_such_field": 1}}"#).unwrap();
    assert_eq!(
        lab(&["verify", "one-dim", "--config", cfg.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
    assert!(
        !lab(&["run", "no-such-scenario", "--config", &config("one-dim")])
            .status
            .success()
    );
}
