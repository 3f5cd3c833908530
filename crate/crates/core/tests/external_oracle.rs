use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use gjsscc::classifier::{ExternalOracle, Oracle};
use gjsscc::imaging::Image;
use gjsscc::Error;

/// Writes a shell adapter whose request loop body is `body`. The loop
/// variables are `$verb`, `$path` and `$target`; `$n` counts requests.
fn adapter(dir: &Path, handshake: &str, body: &str) -> PathBuf {
    static COUNT: AtomicUsize = AtomicUsize::new(0);
    let script = format!("echo '{handshake}'\nn=0\nwhile read -r verb path target; do\n  n=$((n+1))\n{body}\ndone\n");
    let path = dir.join(format!("adapter{}.sh", COUNT.fetch_add(1, Ordering::Relaxed)));
    fs::write(&path, script).unwrap();
    path
}

fn spawn(script: &Path, timeout: Duration) -> gjsscc::Result<ExternalOracle> {
    ExternalOracle::spawn(&format!("sh {}", script.display()), timeout)
}

fn img() -> Image {
    Image::from_fn(8, 6, 1, |x, y, _| (x * 20 + y) as u8).unwrap()
}

#[test]
fn golden_exchange() {
    let dir = tempfile::tempdir().unwrap();
    // Answers only when the request names an existing absolute P5 file.
    let script = adapter(
        dir.path(),
        "READY 3",
        r#"  case "$path" in /*) ;; *) echo "ERR relative path"; continue ;; esac
  if [ "$verb" = CLASSIFY ] && [ "$(head -c 2 "$path")" = P5 ]; then echo "OK 0.1 0.7 0.2"; else echo "ERR bad request"; fi"#,
    );
    let oracle = spawn(&script, Duration::from_secs(10)).unwrap();
    assert_eq!(oracle.num_classes(), 3);
    let d = oracle.classify(&img(), 2).unwrap();
    assert_eq!(d.probs(), &[0.1, 0.7, 0.2]);
    assert_eq!(d.p_target(), 0.7);
    assert!(!d.renormalized());
    // The request file is removed after the response.
    assert_eq!(oracle.classify(&img(), 3).unwrap().p_target(), 0.2);
}

#[test]
fn error_response_carries_message_and_session_survives() {
    let dir = tempfile::tempdir().unwrap();
    let script = adapter(
        dir.path(),
        "READY 2",
        r#"  if [ $n -eq 1 ]; then echo "ERR model not loaded"; else echo "OK 0.25 0.75"; fi"#,
    );
    let oracle = spawn(&script, Duration::from_secs(10)).unwrap();
    match oracle.classify(&img(), 1) {
        Err(Error::Oracle(msg)) => assert_eq!(msg, "model not loaded"),
        other => panic!("expected oracle error, got {other:?}"),
    }
    assert_eq!(oracle.classify(&img(), 2).unwrap().p_target(), 0.75);
}

#[test]
fn normalization_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let script = adapter(
        dir.path(),
        "READY 2",
        r#"  case $n in 1) echo "OK 0.3 0.7000005" ;; 2) echo "OK 0.3 0.71" ;; 3) echo "OK 0.3" ;; *) echo "OK 0.3 x" ;; esac"#,
    );
    let oracle = spawn(&script, Duration::from_secs(10)).unwrap();
    let d = oracle.classify(&img(), 2).unwrap();
    assert!(d.renormalized());
    assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    for _ in 0..3 {
        assert!(matches!(oracle.classify(&img(), 2), Err(Error::Oracle(_))));
    }
}

#[test]
fn bad_handshake_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let script = adapter(dir.path(), "HELLO", "  echo OK 1");
    assert!(matches!(spawn(&script, Duration::from_secs(10)), Err(Error::Oracle(_))));
    let script = adapter(dir.path(), "READY 0", "  echo OK 1");
    assert!(matches!(spawn(&script, Duration::from_secs(10)), Err(Error::Oracle(_))));
}

#[test]
fn silent_adapter_times_out() {
    let dir = tempfile::tempdir().unwrap();
    let script = adapter(dir.path(), "READY 2", "  sleep 5; echo OK 0.5 0.5");
    let oracle = spawn(&script, Duration::from_millis(200)).unwrap();
    assert!(matches!(oracle.classify(&img(), 1), Err(Error::OracleTimeout(_))));
}

#[test]
fn dead_adapter_is_an_oracle_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("adapter.sh");
    fs::write(&path, "echo 'READY 2'\nread -r line\nexit 0\n").unwrap();
    let oracle = spawn(&path, Duration::from_secs(10)).unwrap();
    assert!(matches!(oracle.classify(&img(), 1), Err(Error::Oracle(_))));
}
