use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn desk_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/desk")
}

fn build_desk(root: &Path) {
    for db in ["club", "library", "weather"] {
        let dir = root.join(db);
        std::fs::create_dir_all(&dir).unwrap();
        let script = std::fs::read_to_string(desk_dir().join(format!("{db}.sql"))).unwrap();
        rusqlite::Connection::open(dir.join(format!("{db}.sqlite")))
            .unwrap()
            .execute_batch(&script)
            .unwrap();
    }
}

fn sqlreward(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sqlreward"))
        .args(args)
        .env_clear()
        .output()
        .unwrap()
}

fn desk() -> (tempfile::TempDir, String) {
    let dir = tempfile::tempdir().unwrap();
    build_desk(dir.path());
    let root = dir.path().to_str().unwrap().to_owned();
    (dir, root)
}

#[test]
fn eval_writes_report_matching_expectations() {
    let (dir, root) = desk();
    let out_path = dir.path().join("report.json");
    let dataset = format!("desk={}", desk_dir().join("dataset.json").display());
    let preds = format!("desk={}", desk_dir().join("predictions.json").display());
    let out = sqlreward(&[
        "eval", "--dataset", &dataset, "--predictions", &preds, "--db-root", &root, "--out", out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("desk"));

    let report: Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    let expected: Vec<Value> =
        serde_json::from_str(&std::fs::read_to_string(desk_dir().join("expected.json")).unwrap()).unwrap();
    let items = report["datasets"][0]["items"].as_array().unwrap();
    assert_eq!(items.len(), expected.len());
    for (got, want) in items.iter().zip(&expected) {
        assert_eq!(got["item_id"], want["id"]);
        for (g, w) in [
            ("executable", "executable"),
            ("ex_refined", "ex"),
            ("ex_classic", "ex_classic"),
            ("cp", "cp"),
            ("cr", "cr"),
            ("tc", "tc"),
            ("qa", "qa"),
            ("fr", "fr"),
            ("composite", "gate"),
        ] {
            assert_eq!(got[g], want[w], "{} {g}", want["id"]);
        }
    }
}

#[test]
fn eval_requires_matching_predictions() {
    let (_dir, root) = desk();
    let dataset = format!("desk={}", desk_dir().join("dataset.json").display());
    let preds = format!("other={}", desk_dir().join("predictions.json").display());
    let out = sqlreward(&["eval", "--dataset", &dataset, "--predictions", &preds, "--db-root", &root]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("desk"));
}

fn score(root: &str, gold: &str, completion: &str) -> (i32, Value) {
    let out = sqlreward(&["score", "--db-root", root, "--db-id", "club", "--gold", gold, "--completion", completion]);
    let code = out.status.code().unwrap();
    let json = serde_json::from_slice(&out.stdout).unwrap_or(Value::Null);
    (code, json)
}

#[test]
fn score_exit_codes_and_values() {
    let (_dir, root) = desk();
    let tag = |sql: &str| format!("<reasoning>r</reasoning><answer>{sql}</answer>");
    let gold = "SELECT name FROM team";

    let (code, out) = score(&root, gold, &tag("SELECT name FROM team"));
    assert_eq!((code, out["composite"].as_f64()), (0, Some(1.0)));

    let (code, out) = score(&root, gold, &tag("SELEC name FROM team"));
    assert_eq!((code, out["composite"].as_f64()), (0, Some(0.0)));
    assert_eq!(out["error_class"], "SyntaxError");

    let (code, out) = score(&root, gold, &tag("SELECT name FROM team WHERE 0"));
    assert_eq!((code, out["composite"].as_f64()), (0, Some(0.1)));

    let (code, _) = score(&root, "SELECT nope FROM team", &tag("SELECT 1"));
    assert_eq!(code, 2);

    let out = sqlreward(&["score", "--db-root", &root, "--db-id", "ghost", "--gold", gold, "--completion", "x"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn score_reads_completion_from_stdin() {
    let (_dir, root) = desk();
    let mut child = Command::new(env!("CARGO_BIN_EXE_sqlreward"))
        .args(["score", "--db-root", &root, "--db-id", "club", "--gold", "SELECT 1", "--completion-file", "-", "--kind", "qafm"])
        .env_clear()
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"<answer>SELECT 1</answer>").unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let json: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["r_fr"], 0);
    assert!((json["composite"].as_f64().unwrap() - 0.95).abs() < 1e-12);
}

#[test]
fn compare_metrics_lists_disagreements() {
    let (_dir, root) = desk();
    let out = sqlreward(&[
        "compare-metrics",
        "--dataset",
        desk_dir().join("dataset.json").to_str().unwrap(),
        "--predictions",
        desk_dir().join("predictions.json").to_str().unwrap(),
        "--db-root",
        &root,
    ]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for needle in ["c02", "c03", "w04", "MultiplicityLoss", "ColumnSensitivity", "Other"] {
        assert!(text.contains(needle), "missing {needle} in\n{text}");
    }
}

#[test]
fn rejects_bad_arguments() {
    let (_dir, root) = desk();
    let out = sqlreward(&[
        "score", "--db-root", &root, "--db-id", "club", "--gold", "SELECT 1", "--completion", "x", "--timeout-ms", "0",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let out = sqlreward(&["score", "--db-root", &root, "--db-id", "club", "--gold", "SELECT 1", "--completion", "x", "--kind", "best"]);
    assert!(!out.status.success());
}

#[test]
fn serve_fails_on_missing_root() {
    let out = sqlreward(&["serve", "--db-root", "/definitely/not/here", "--port", "0"]);
    assert!(!out.status.success());
}

#[cfg(unix)]
#[test]
fn serve_answers_health_and_stops_on_sigterm() {
    let (_dir, root) = desk();
    let mut child = Command::new(env!("CARGO_BIN_EXE_sqlreward"))
        .args(["serve", "--db-root", &root, "--port", "0"])
        .env_clear()
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stderr = BufReader::new(child.stderr.take().unwrap());
    let mut line = String::new();
    stderr.read_line(&mut line).unwrap();
    let addr = line
        .split("http://")
        .nth(1)
        .and_then(|s| s.split_whitespace().next())
        .unwrap_or_else(|| panic!("unexpected banner: {line}"))
        .to_owned();

    let mut stream = TcpStream::connect(&addr).unwrap();
    write!(stream, "GET /health HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut response = String::new();
    stream.read_to_string(&mut response).unwrap();
    assert!(response.starts_with("HTTP/1.1 200"));
    assert!(response.ends_with("ok"));

    let pid = child.id().to_string();
    assert!(Command::new("kill").args(["-TERM", &pid]).status().unwrap().success());
    let status = child.wait().unwrap();
    assert!(status.success());
    let mut rest = String::new();
    stderr.read_to_string(&mut rest).unwrap();
    assert!(rest.contains("stopped"));
}
