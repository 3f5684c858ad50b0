use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sci_core::drbench::PredictionRecord;

const SCI: &str = env!("CARGO_BIN_EXE_sci");

fn sci(args: &[&str]) -> Output {
    Command::new(SCI).args(args).env("SCI_LOG", "error").output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, backend: serde_json::Value, out: &str) -> PathBuf {
    let corpus = dir.join("corpus.jsonl");
    if !corpus.exists() {
        let o = sci(&["toy-corpus", "--count", "12", "--seed", "5", "--output", corpus.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let cfg = serde_json::json!({
        "backend": backend,
        "max_tokens": 4,
        "parallelism": 2,
        "paths": { "sources": ["corpus.jsonl"] },
        "out": out,
    });
    let path = dir.join(format!("{out}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn toy_backend() -> serde_json::Value {
    serde_json::json!({ "kind": "toy", "spec": { "seed": 1, "distractor": 0.8 } })
}

fn pipeline(config: &Path) {
    let c = config.to_str().unwrap();
    for cmd in ["ingest", "variants", "decode"] {
        let o = sci(&[cmd, "--config", c]);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
    }
}

fn predictions(dir: &Path, out: &str) -> Vec<PredictionRecord> {
    let text = std::fs::read_to_string(dir.join(out).join("predictions/sci5.jsonl")).unwrap();
    text.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn help_exits_zero_and_bad_usage_exits_one() {
    assert_eq!(sci(&["--help"]).status.code(), Some(0));
    assert_eq!(sci(&["decode"]).status.code(), Some(1));
    assert_eq!(sci(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn bad_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"strategy": {"kind": "nope"}}"#).unwrap();
    let o = sci(&["ingest", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error:"));

    let missing = sci(&["ingest", "--config", dir.path().join("absent.json").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn missing_data_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), toy_backend(), "run");
    let o = sci(&["decode", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("sci ingest"), "{}", stderr(&o));
}

#[test]
fn unreachable_backend_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let toy = write_config(dir.path(), toy_backend(), "run");
    let c = toy.to_str().unwrap();
    assert!(sci(&["ingest", "--config", c]).status.success());
    assert!(sci(&["variants", "--config", c]).status.success());

    // Bind and drop to get a port nobody listens on.
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let wire = serde_json::json!({ "kind": "wire", "endpoint": format!("127.0.0.1:{port}") });
    let mut cfg: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&toy).unwrap()).unwrap();
    cfg["backend"] = wire;
    let wire_cfg = dir.path().join("wire.json");
    std::fs::write(&wire_cfg, cfg.to_string()).unwrap();
    let o = sci(&["decode", "--config", wire_cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn held_lock_rejects_a_second_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), toy_backend(), "run");
    std::fs::create_dir_all(dir.path().join("run")).unwrap();
    std::fs::write(dir.path().join("run/.sci.lock"), "4242\n").unwrap();
    let o = sci(&["ingest", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("lock"), "{}", stderr(&o));
    std::fs::remove_file(dir.path().join("run/.sci.lock")).unwrap();
    assert!(sci(&["ingest", "--config", cfg.to_str().unwrap()]).status.success());
    assert!(!dir.path().join("run/.sci.lock").exists());
}

#[test]
fn spawned_wire_backend_matches_in_process_toy() {
    let dir = tempfile::tempdir().unwrap();
    let toy = write_config(dir.path(), toy_backend(), "local");
    pipeline(&toy);
    let launch = serde_json::json!({
        "kind": "wire",
        "launch": [SCI, "serve-toy", "--config", toy.to_str().unwrap()],
    });
    let wire = write_config(dir.path(), launch, "remote");
    pipeline(&wire);
    let (a, b) = (predictions(dir.path(), "local"), predictions(dir.path(), "remote"));
    assert_eq!(a.len(), 12 * 6);
    assert_eq!(a, b);
}

#[test]
fn tcp_wire_backend_matches_in_process_toy() {
    let dir = tempfile::tempdir().unwrap();
    let toy = write_config(dir.path(), toy_backend(), "local");
    pipeline(&toy);

    let mut server = Command::new(SCI)
        .args(["serve-toy", "--config", toy.to_str().unwrap(), "--listen", "127.0.0.1:0"])
        .stderr(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = std::io::BufRead::lines(std::io::BufReader::new(server.stderr.take().unwrap()));
    let addr = loop {
        let line = lines.next().expect("server announces its address").unwrap();
        if let Some(a) = line.strip_prefix("listening on ") {
            break a.to_string();
        }
    };
    let wire = write_config(dir.path(), serde_json::json!({ "kind": "wire", "endpoint": addr }), "remote");
    pipeline(&wire);
    server.kill().unwrap();
    let _ = server.wait();
    assert_eq!(predictions(dir.path(), "local"), predictions(dir.path(), "remote"));
}

#[test]
fn full_cli_run_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), toy_backend(), "run");
    let c = cfg.to_str().unwrap();
    pipeline(&cfg);
    let o = sci(&["decode", "--config", c, "--strategy", "baseline"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = sci(&["build-drbench", "--config", c, "--strategy", "baseline"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = sci(&["report", "--config", c, "--runs", "baseline,sci5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("Overall"), "{stdout}");
    assert!(dir.path().join("run/reports/report.json").exists());
    assert!(dir.path().join("run/manifest.json").exists());
}
