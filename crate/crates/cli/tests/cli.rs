//! End-to-end checks of the command-line surface: generate -> validate ->
//! simulate -> sweep on a small trace.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_elastic-sched"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let output = cmd.output().expect("binary runs");
    assert!(
        output.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

fn generate_small_trace(dir: &Path) -> std::path::PathBuf {
    let trace = dir.join("trace.csv");
    run_ok(bin().args([
        "generate",
        "--profile",
        "baseline",
        "--count",
        "25",
        "--arrival-rate",
        "40",
        "--large-mean-min",
        "30",
        "--seed",
        "7",
        "--out",
        trace.to_str().unwrap(),
    ]));
    trace
}

#[test]
fn generate_validate_simulate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let trace = generate_small_trace(dir.path());

    run_ok(bin().args(["validate", "--trace", trace.to_str().unwrap()]));

    let out_dir = dir.path().join("sim");
    run_ok(bin().args([
        "simulate",
        "--trace",
        trace.to_str().unwrap(),
        "--nodes",
        "16",
        "--allocator",
        "optimal",
        "--seed",
        "1",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]));
    let report = std::fs::read_to_string(out_dir.join("report.json")).unwrap();
    assert!(report.contains("\"schema_version\": \"report-v1\""));
    let jobs = std::fs::read_to_string(out_dir.join("jobs.csv")).unwrap();
    assert!(jobs.starts_with("job_id,submit_s,start_s,end_s,queue_s,train_s,total_s,outcome"));
    assert_eq!(jobs.lines().count(), 26); // header + 25 jobs
}

#[test]
fn sweep_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let trace = generate_small_trace(dir.path());
    let config = dir.path().join("sweep.toml");
    std::fs::write(
        &config,
        format!(
            r#"
trace = "{}"
seed = 3
node_counts = [8, 16]
allocators = ["greedy", "optimal"]
scenario = "baseline"
"#,
            trace.file_name().unwrap().to_str().unwrap()
        ),
    )
    .unwrap();
    let out_dir = dir.path().join("sweep");
    run_ok(bin().args([
        "sweep",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]));
    for name in [
        "queueing_vs_nodes.csv",
        "total_time_vs_nodes.csv",
        "additional_jobs.csv",
        "latency_histogram.csv",
        "manifest.json",
    ] {
        assert!(out_dir.join(name).exists(), "missing {name}");
    }
    let manifest = std::fs::read_to_string(out_dir.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"schema_version\": \"manifest-v1\""));
    assert!(manifest.contains("\"seed\": 3"));
}

#[test]
fn failures_emit_json_errors_and_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let bogus = dir.path().join("missing.csv");
    let output = bin()
        .args(["validate", "--trace", bogus.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    let parsed: serde_json::Value =
        serde_json::from_str(stderr.trim()).expect("stderr is JSON");
    assert!(parsed.get("error").is_some());
}

#[test]
fn invalid_trace_rows_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("bad.csv");
    std::fs::write(
        &trace,
        "# trace-v1\njob_id,submit_s,demand_node_hours,n_min,n_max,failure\nj1,0,1.5,1,12,none\n",
    )
    .unwrap();
    let output = bin()
        .args(["validate", "--trace", trace.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("line 3"), "stderr: {stderr}");
}
