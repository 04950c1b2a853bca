//! The `doseopt` binary: exit codes, output parity with the service and the `serve` command.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use doseopt_cli::commands::to_json;
use doseopt_cli::{EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION};
use doseopt_core::workflow::{design_request, efficiency_request, DesignRequest, EfficiencyRequest};
use serde_json::{json, Value};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_doseopt"))
}

fn requests() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/requests")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn write(dir: &TempDir, name: &str, body: &str) -> String {
    let p = dir.path().join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn design_stdout_matches_the_library_rendering() {
    let dir = TempDir::new().unwrap();
    let body = json!({
        "criterion": {"kind": "d"},
        "nominal_sets": [[2.506, 7.800, -0.979]],
        "pso": {"n_particles": 40, "iters": 100}
    });
    let path = write(&dir, "d.json", &body.to_string());
    let out = run(&["design", &path]);
    assert_eq!(out.status.code(), Some(EXIT_OK), "{}", String::from_utf8_lossy(&out.stderr));
    let req: DesignRequest = serde_json::from_value(body).unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap(), to_json(&design_request(&req).unwrap()).unwrap());
}

#[test]
fn stdin_and_output_file_are_supported() {
    let dir = TempDir::new().unwrap();
    let text = std::fs::read_to_string(requests().join("efficiency.json")).unwrap();
    let target = dir.path().join("eff.json");
    let mut child = bin()
        .args(["efficiency", "-", "-o", target.to_str().unwrap()])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(text.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_OK));
    assert!(out.stdout.is_empty());
    let req: EfficiencyRequest = serde_json::from_str(&text).unwrap();
    assert_eq!(std::fs::read_to_string(target).unwrap(), to_json(&efficiency_request(&req).unwrap()).unwrap());
}

#[test]
fn validation_and_numerical_failures_have_distinct_codes() {
    let dir = TempDir::new().unwrap();
    let out = run(&["design", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(EXIT_VALIDATION));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let bad = write(&dir, "bad.json", r#"{"criterion": {"kind": "d"}, "nominal_sets": [[2.5, -7.8, -1.0]]}"#);
    assert_eq!(run(&["design", &bad]).status.code(), Some(EXIT_VALIDATION));

    let garbled = write(&dir, "garbled.json", "{ not json");
    assert_eq!(run(&["verify", &garbled]).status.code(), Some(EXIT_VALIDATION));

    let single = write(
        &dir,
        "single.json",
        r#"{"criterion": {"kind": "d"}, "nominal_sets": [[2.506, 7.8, -0.979]],
            "design": {"doses": [10.0], "weights": [1.0]}}"#,
    );
    let out = run(&["verify", &single]);
    assert_eq!(out.status.code(), Some(EXIT_NUMERICAL), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn verify_writes_curve_files() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("curve.csv");
    let svg = dir.path().join("curve.svg");
    let req = requests().join("verify.json");
    let out = run(&["verify", req.to_str().unwrap(), "--csv", csv.to_str().unwrap(), "--svg", svg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(EXIT_OK), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let n = v["curve"]["values"].as_array().unwrap().len();
    assert_eq!(std::fs::read_to_string(csv).unwrap().lines().count(), n + 1);
    assert!(std::fs::read_to_string(svg).unwrap().starts_with("<svg"));
}

#[test]
fn fit_and_run_on_the_sample_stage_one_data() {
    let stage1 = requests().join("stage1.csv");
    let out = run(&["fit", stage1.to_str().unwrap(), "--model", "continuation-ratio"]);
    assert_eq!(out.status.code(), Some(EXIT_OK), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["fit"]["converged"].as_bool().unwrap());

    let dir = TempDir::new().unwrap();
    std::fs::copy(&stage1, dir.path().join("stage1.csv")).unwrap();
    let cfg = write(
        &dir,
        "run.json",
        r#"{"data": "stage1.csv", "criterion": {"kind": "dual", "lambda": 0.5}, "output_dir": "out",
            "pso": {"n_particles": 30, "iters": 40, "n_support": 3}, "grid_points": 101}"#,
    );
    let out = run(&["run", &cfg]);
    assert_eq!(out.status.code(), Some(EXIT_OK), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    let saved: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report, saved);
}

#[test]
fn bp_simulate_small_study() {
    let dir = TempDir::new().unwrap();
    let mut cfg: Value = serde_json::from_str(&std::fs::read_to_string(requests().join("bp_simulate.json")).unwrap()).unwrap();
    cfg["n_reps"] = json!(4);
    cfg["pso"] = json!({"n_particles": 20, "iters": 30, "n_support": 3});
    let path = write(&dir, "sim.json", &cfg.to_string());
    let out = run(&["bp-simulate", &path]);
    assert_eq!(out.status.code(), Some(EXIT_OK), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["replicates"].as_array().unwrap().len(), 4);
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn get_health(port: u16) -> Option<String> {
    let mut stream = TcpStream::connect(("127.0.0.1", port)).ok()?;
    stream.set_read_timeout(Some(Duration::from_secs(5))).ok()?;
    stream.write_all(b"GET /health HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").ok()?;
    let mut reply = String::new();
    stream.read_to_string(&mut reply).ok()?;
    Some(reply)
}

#[test]
fn serve_listens_on_the_port_from_the_environment() {
    let port = free_port();
    let mut child = bin().arg("serve").env("DOSEOPT_PORT", port.to_string()).stderr(Stdio::null()).spawn().unwrap();
    let deadline = Instant::now() + Duration::from_secs(20);
    let reply = loop {
        if let Some(r) = get_health(port) {
            break r;
        }
        assert!(Instant::now() < deadline, "service did not come up");
        std::thread::sleep(Duration::from_millis(50));
    };
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(reply.starts_with("HTTP/1.1 200"), "{reply}");
    assert!(reply.contains(r#"{"status":"ok"}"#));
}
