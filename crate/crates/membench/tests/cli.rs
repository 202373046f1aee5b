//! Black-box tests of the installed binary. Process-level concerns live
//! here: exit codes on real streams, and environment switches like
//! MEMBENCH_NO_PIN that cannot be toggled safely inside a threaded test
//! process.

use std::path::Path;
use std::process::{Command, Output};

use membench::report::parse_jsonl;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_membench"))
}

fn write_file(dir: &Path, name: &str, contents: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, contents).unwrap();
    path
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

#[test]
fn clockinfo_reports_a_monotonic_source() {
    let output = bin().arg("clockinfo").output().unwrap();
    assert_eq!(output.status.code(), Some(0), "{}", stderr_of(&output));
    let out = stdout_of(&output);
    assert!(out.contains("source: "));
    assert!(out.contains("resolution_ns: "));
}

#[test]
fn usage_problems_exit_two_and_domain_problems_exit_one() {
    let output = bin().arg("no-such-command").output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr_of(&output).starts_with("error:"));

    let output = bin().args(["topo", "validate", "/no/such/file.json"]).output().unwrap();
    assert_eq!(output.status.code(), Some(1));
    let err = stderr_of(&output);
    assert!(err.starts_with("error:"));
    assert_eq!(err.trim_end().lines().count(), 1, "one-line errors only: {err}");
}

#[test]
fn unpinned_mode_runs_any_core_ids_and_says_so_in_the_record() {
    let dir = tempfile::tempdir().unwrap();
    // Core ids far beyond any host inventory: only legal unpinned.
    let suite = write_file(
        dir.path(),
        "suite.json",
        r#"[{
            "id": "free-read",
            "kernel": "read",
            "initiator_cores": [4096, 8192],
            "buffer": { "length": 262144 },
            "repetitions": 2,
            "warmup": 1,
            "start_delay_ns": 120000000
        }]"#,
    );
    let results = dir.path().join("results.jsonl");
    let output = bin()
        .env("MEMBENCH_NO_PIN", "1")
        .args(["run", suite.to_str().unwrap(), "--out", results.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{}", stderr_of(&output));

    let records = parse_jsonl(&std::fs::read_to_string(&results).unwrap()).unwrap();
    assert_eq!(records.len(), 1);
    assert!(!records[0].pinned);
    assert_eq!(records[0].worker_count, 2);
    assert_eq!(records[0].core_ids, vec![4096, 8192]);
}

#[test]
fn pinned_mode_refuses_the_same_suite() {
    let dir = tempfile::tempdir().unwrap();
    let suite = write_file(
        dir.path(),
        "suite.json",
        r#"[{
            "id": "free-read",
            "kernel": "read",
            "initiator_cores": [4096],
            "buffer": { "length": 65536 }
        }]"#,
    );
    let results = dir.path().join("results.jsonl");
    let output = bin()
        .env_remove("MEMBENCH_NO_PIN")
        .args(["run", suite.to_str().unwrap(), "--out", results.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr_of(&output).contains("core 4096"));
}

#[test]
fn noise_workers_may_share_cores_when_unpinned() {
    let dir = tempfile::tempdir().unwrap();
    let suite = write_file(
        dir.path(),
        "suite.json",
        r#"[{
            "id": "noisy-read",
            "kernel": "read",
            "initiator_cores": [0],
            "buffer": { "length": 262144 },
            "repetitions": 2,
            "warmup": 1,
            "start_delay_ns": 120000000,
            "noise": {
                "cores": [0],
                "buffer_bytes": 1048576
            }
        }]"#,
    );
    let results = dir.path().join("results.jsonl");
    let output = bin()
        .env("MEMBENCH_NO_PIN", "1")
        .args(["run", suite.to_str().unwrap(), "--out", results.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{}", stderr_of(&output));

    let records = parse_jsonl(&std::fs::read_to_string(&results).unwrap()).unwrap();
    let roles: Vec<&str> = records[0].placements.iter().map(|p| p.role.as_str()).collect();
    assert!(roles.contains(&"noise"), "roles: {roles:?}");
}

#[test]
fn pipeline_artifacts_survive_process_boundaries() {
    let dir = tempfile::tempdir().unwrap();
    let suite = write_file(
        dir.path(),
        "suite.json",
        r#"[{
            "id": "pipe-read",
            "kernel": "read",
            "initiator_cores": [0],
            "buffer": { "length": 1048576 },
            "repetitions": 2,
            "warmup": 1,
            "start_delay_ns": 120000000
        }]"#,
    );
    let results = dir.path().join("results.jsonl");
    let output = bin()
        .args(["run", suite.to_str().unwrap(), "--out", results.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{}", stderr_of(&output));

    let output = bin().args(["analyze", results.to_str().unwrap()]).output().unwrap();
    assert_eq!(output.status.code(), Some(0), "{}", stderr_of(&output));
    assert!(stdout_of(&output).contains("pipe-read"));

    let csv = dir.path().join("flat.csv");
    let output = bin()
        .args(["report", results.to_str().unwrap(), "--out", csv.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{}", stderr_of(&output));
    let flat = std::fs::read_to_string(&csv).unwrap();
    assert!(flat.starts_with("case_id,kernel,"));
    assert_eq!(flat.lines().count(), 4); // header + 3 iterations
}
