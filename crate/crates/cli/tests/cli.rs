use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn demo_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo/study.toml")
}

fn serpeval(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_serpeval")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(serpeval(&["--help"]).status.code(), Some(0));
    assert_eq!(serpeval(&[]).status.code(), Some(1));
    assert_eq!(serpeval(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(serpeval(&["sample", "--seed", "minus one"]).status.code(), Some(1));
}

#[test]
fn validate_accepts_the_demo() {
    let out = serpeval(&["--config", demo_config().to_str().unwrap(), "validate"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stderr(&out).contains("ok, 0 warning(s)"), "{}", stderr(&out));
}

#[test]
fn bad_configuration_exits_2() {
    let out = serpeval(&["--config", "/nonexistent/study.toml", "validate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("error: "), "{}", stderr(&out));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("study.toml");
    let text = std::fs::read_to_string(demo_config()).unwrap().replace("concurrency = 4", "concurrency = 0");
    std::fs::write(&cfg, text).unwrap();
    let out = serpeval(&["--config", cfg.to_str().unwrap(), "validate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("concurrency"), "{}", stderr(&out));
}

#[test]
fn collect_before_sample_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let out = serpeval(&["--config", demo_config().to_str().unwrap(), "--store", store.to_str().unwrap(), "collect"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn malformed_interrupt_hook_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_serpeval"))
        .args(["--config", demo_config().to_str().unwrap(), "--store", dir.path().to_str().unwrap(), "collect"])
        .env("SERPEVAL_INTERRUPT_AFTER", "soon")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unusable_store_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("not-a-dir");
    std::fs::write(&blocker, "x").unwrap();
    let out = serpeval(&["--config", demo_config().to_str().unwrap(), "--store", blocker.to_str().unwrap(), "sample"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn serve_reports_a_busy_port_as_runtime_error() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap().to_string();
    let dir = tempfile::tempdir().unwrap();
    let cfg = demo_config();
    let base = ["--config", cfg.to_str().unwrap(), "--store", dir.path().to_str().unwrap()];
    for step in ["sample", "collect"] {
        let out = serpeval(&[&base[..], &[step]].concat());
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let out = serpeval(&[&base[..], &["serve", "--listen", &addr]].concat());
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}
