use std::path::Path;
use std::process::{Command, Output};

use r2ag::policy::{init_params, PolicyParams};

fn r2ag(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_r2ag"))
        .arg("--data-dir")
        .arg(dir)
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
}

const SMALL: &[&str] = &[
    "synth",
    "--groups",
    "5",
    "--concepts-per-group",
    "12",
    "--patients",
    "12",
    "--keywords-per-patient",
    "3",
    "--truth-per-patient",
    "4",
    "--dim",
    "8",
];

fn small_dataset(dir: &Path) {
    ok(&r2ag(dir, SMALL));
}

#[test]
fn broken_relations_file_exits_two_and_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    let rel = dir.path().join("relations.tsv");
    let mut text = std::fs::read_to_string(&rel).unwrap();
    text.push_str("S000000\tonly two fields\n");
    std::fs::write(&rel, &text).unwrap();
    let line = text.lines().count();

    let out = r2ag(dir.path(), &["validate"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("relations.tsv"), "{err}");
    assert!(err.contains(&format!(":{line}")), "{err}");
}

#[test]
fn validate_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    let out = r2ag(dir.path(), &["validate"]);
    ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("60"), "{text}");
}

#[test]
fn zero_learning_rate_keeps_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    ok(&r2ag(dir.path(), &["--seed", "7", "train", "--lr", "0", "--epochs", "1"]));
    let trained = PolicyParams::load(&dir.path().join("checkpoint.json")).unwrap();
    assert_eq!(trained, init_params(8, 7).unwrap());
    let log = std::fs::read_to_string(dir.path().join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 12);
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"train.learning_rate": 0.1}"#).unwrap();
    let out = r2ag(dir.path(), &["--config", cfg.to_str().unwrap(), "validate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = r2ag(dir.path(), &["validate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unreachable_endpoint_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"generate.retries": 0, "generate.timeout_secs": 2}"#).unwrap();
    let out = r2ag(
        dir.path(),
        &[
            "--config",
            cfg.to_str().unwrap(),
            "generate",
            "--max-paths",
            "0",
            "--endpoint",
            &format!("http://127.0.0.1:{port}/v1/chat/completions"),
        ],
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn retrieve_one_patient_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    ok(&r2ag(dir.path(), &["train", "--epochs", "1"]));
    let out = r2ag(dir.path(), &["retrieve", "--patient", "p0003"]);
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(!text.is_empty());
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["patient"], "p0003");
        assert!(v["origin"].is_string());
    }
    let out = r2ag(dir.path(), &["retrieve", "--patient", "nobody"]);
    assert_eq!(out.status.code(), Some(2));
}

/// Every output file of a stub pipeline run, by name.
fn pipeline(dir: &Path, jobs: &str) -> Vec<(String, Vec<u8>)> {
    small_dataset(dir);
    ok(&r2ag(dir, &["--jobs", jobs, "train", "--epochs", "2"]));
    ok(&r2ag(dir, &["--jobs", jobs, "retrieve", "--out", dir.join("paths.jsonl").to_str().unwrap()]));
    ok(&r2ag(dir, &["--jobs", jobs, "generate", "--stub"]));
    ok(&r2ag(dir, &["--jobs", jobs, "eval"]));
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn pipeline_outputs_do_not_depend_on_worker_count() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let one = pipeline(a.path(), "1");
    let four = pipeline(b.path(), "4");
    let names: Vec<&str> = one.iter().map(|(n, _)| n.as_str()).collect();
    for expected in ["checkpoint.json", "generated.jsonl", "paths.jsonl", "report.json", "report_rows.csv"] {
        assert!(names.contains(&expected), "{names:?}");
    }
    assert_eq!(one, four);

    let report: serde_json::Value = serde_json::from_slice(&one.iter().find(|(n, _)| n == "report.json").unwrap().1).unwrap();
    for level in ["ngram", "concept"] {
        let r = &report["ce"][level];
        let (recall, hamming) = (r["recall"].as_f64().unwrap(), r["hamming"].as_f64().unwrap());
        assert!((hamming - (1.0 - recall)).abs() < 1e-12);
    }
    assert!(report["nlg"]["rougeL"].is_number());
}
