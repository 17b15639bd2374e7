use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_trconsent"))
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn scenarios_pass() {
    let dir = fixtures().join("scenarios");
    let files: Vec<String> = [
        "gp.json",
        "cardiologist.json",
        "emergency.json",
        "break-the-glass.json",
        "empty.json",
    ]
    .iter()
    .map(|f| dir.join(f).display().to_string())
    .collect();
    let args: Vec<&str> = std::iter::once("run-scenario")
        .chain(files.iter().map(String::as_str))
        .collect();
    let o = run(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("patient visiting her GP: 13 checks, 13 passed, 0 failed"));
}

#[test]
fn failing_assertion_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(fixtures().join("scenarios/gp.json"))
        .unwrap()
        .replace("\"../", &format!("\"{}/", fixtures().display()))
        .replacen("\"line\": 9", "\"line\": 8", 1);
    let path = dir.path().join("broken.json");
    std::fs::write(&path, text).unwrap();
    let o = run(&["run-scenario", "--json", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let reports: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(reports[0]["checks"][0]["passed"], false);
}

#[test]
fn malformed_trace_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"name": "x", "steps": [{"teleport": {}}]}"#).unwrap();
    assert_eq!(run(&["run-scenario", path.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(run(&["run-scenario", "/nonexistent.json"]).status.code(), Some(2));
}

#[test]
fn check_describes_documents() {
    let f = fixtures();
    let o = run(&[
        "check",
        f.join("policies/gp-clinic.tr").to_str().unwrap(),
        f.join("templates/library.json").to_str().unwrap(),
        f.join("golden/gp-bob.json").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("TR policy consentAtGPClinic(Patient) with 7 rules"));
    assert!(out.contains("5 templates"));
    assert!(out.contains("authorization policy gp-clinic:Alice:Bob (Active)"));
}

#[test]
fn check_rejects_bad_policy_text() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.tr");
    std::fs::write(&path, "tr-policy p(X)\n\nfoo(X) ->\n").unwrap();
    let o = run(&["check", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
}

fn eval(time: &str, purpose: &str) -> Output {
    let policy = fixtures().join("golden/gp-bob.json");
    run(&[
        "eval",
        "--policy",
        policy.to_str().unwrap(),
        "--requester",
        "Bob",
        "--role",
        "GP",
        "--subject",
        "Alice",
        "--resource",
        "Blood Test",
        "--purpose",
        purpose,
        "--time",
        time,
        "--date",
        "2026-03-02",
        "--requester-location",
        "Milan",
        "--subject-location",
        "Milan",
    ])
}

#[test]
fn eval_reports_decision() {
    let o = eval("12:00", "Diagnosis");
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("Permit"));
    let o = eval("18:00", "Diagnosis");
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stdout(&o).trim(), "Deny: condition failed: AccessTime <= 17:00");
    assert_eq!(eval("25:00", "Diagnosis").status.code(), Some(2));
}

fn get(addr: &str, path: &str) -> Option<String> {
    let mut s = TcpStream::connect(addr).ok()?;
    write!(s, "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").ok()?;
    let mut out = String::new();
    s.read_to_string(&mut out).ok()?;
    Some(out)
}

#[test]
fn serve_answers_health_checks() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let mut child = bin()
        .args([
            "serve",
            "--config",
            fixtures().join("service.json").to_str().unwrap(),
            "--listen",
            &addr,
        ])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(10);
    let mut reply = None;
    while Instant::now() < deadline {
        if let Some(r) = get(&addr, "/health") {
            reply = Some(r);
            break;
        }
        std::thread::sleep(Duration::from_millis(50));
    }
    let denied = get(&addr, "/policies");
    child.kill().unwrap();
    child.wait().unwrap();
    let reply = reply.expect("server did not come up");
    assert!(reply.starts_with("HTTP/1.1 200"), "{reply}");
    assert!(denied.unwrap().starts_with("HTTP/1.1 401"));
}

#[test]
fn bad_config_exits_2() {
    let o = run(&["serve", "--config", "/nonexistent/service.json"]);
    assert_eq!(o.status.code(), Some(2));
}
