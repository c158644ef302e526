use std::net::TcpListener;
use std::path::PathBuf;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn txmerge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_txmerge")).args(args).current_dir(root()).env("RUST_BACKTRACE", "0").output().expect("spawn")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "exit {:?}: {}", o.status, String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn analyze_prints_table_and_json() {
    let out = stdout(&txmerge(&["analyze", "templates/neworder.json"]));
    assert!(out.contains("3-4"), "{out}");
    let json: serde_json::Value = serde_json::from_str(&out[out.find('{').unwrap()..]).unwrap();
    let multi: Vec<(u64, u64)> = json["groups"]
        .as_array()
        .unwrap()
        .iter()
        .map(|g| (g["lo"].as_u64().unwrap(), g["hi"].as_u64().unwrap()))
        .filter(|(lo, hi)| lo != hi)
        .collect();
    assert_eq!(multi, vec![(3, 4), (8, 10)]);
}

#[test]
fn rewrite_merges_a_payment_batch() {
    let dir = tempfile::tempdir().unwrap();
    let args = dir.path().join("args.json");
    let member = |c_id: i64, h_id: i64| {
        serde_json::json!({
            "w_id": 1, "d_id": 1, "c_w_id": 1, "c_d_id": 1, "c_id": c_id,
            "amount": {"dec": "10.00"}, "h_id": h_id, "h_date": {"ts": 100}, "h_data": "h", "new_data": "n"
        })
    };
    std::fs::write(&args, serde_json::json!([member(3, 1), member(4, 2)]).to_string()).unwrap();
    let out = stdout(&txmerge(&["rewrite", "templates/payment.json", args.to_str().unwrap()]));
    assert!(out.starts_with("UPDATE warehouse SET w_ytd = w_ytd + 20.00 WHERE w_id = 1;\n"), "{out}");
    assert!(out.contains("c_id IN (3, 4)"), "{out}");
    assert!(out.contains("VALUES (1, 3, 1, 1, 1, 1, 100, 10.00, 'h'), (2, 4, 1, 1, 1, 1, 100, 10.00, 'h');"), "{out}");
}

#[test]
fn rewrite_rejects_bad_arguments() {
    let dir = tempfile::tempdir().unwrap();
    let args = dir.path().join("args.json");
    std::fs::write(&args, r#"{"not": "an array"}"#).unwrap();
    assert!(!txmerge(&["rewrite", "templates/payment.json", args.to_str().unwrap()]).status.success());
}

#[test]
fn oracle_check_passes() {
    let out = stdout(&txmerge(&["oracle-check", "--trials", "10", "--seed", "4"]));
    assert!(out.contains("10 batches") && out.contains("no mismatches"), "{out}");
}

#[test]
fn bench_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("out.csv");
    let out = stdout(&txmerge(&[
        "bench", "--workload", "payment", "--mode", "original", "--clients", "2", "--batch", "1,4", "--duration-s", "1", "--csv",
        csv.to_str().unwrap(),
    ]));
    let written = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(out, written);
    let lines: Vec<&str> = written.lines().collect();
    assert_eq!(lines[0], "workload,mode,batch,clients,throughput,p50_ms,p95_ms,p99_ms,retries,stmts_executed");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("payment,original,1,2,"));
    assert!(lines[2].starts_with("payment,original,4,2,"));
}

#[test]
fn serve_rejects_unknown_config_fields() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("serve.json");
    std::fs::write(&cfg, r#"{"workload": "micro-update", "batch_sise": 3}"#).unwrap();
    let o = txmerge(&["serve", "--config", cfg.to_str().unwrap(), "--listen", "127.0.0.1:0"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("batch_sise"));
}

struct Killed(std::process::Child);

impl Drop for Killed {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn tune_talks_to_a_served_workload() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("serve.json");
    std::fs::write(
        &cfg,
        r#"{"workload": "micro-update", "micro_rows": 1000, "load_clients": 4,
            "batch": {"workers": 1, "batch_size": 2, "timeout_ms": 1}}"#,
    )
    .unwrap();
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let _server = Killed(
        Command::new(env!("CARGO_BIN_EXE_txmerge"))
            .args(["serve", "--config", cfg.to_str().unwrap(), "--listen", &addr])
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .unwrap(),
    );
    let start = Instant::now();
    while std::net::TcpStream::connect(&addr).is_err() {
        assert!(start.elapsed() < Duration::from_secs(10), "server did not start");
        std::thread::sleep(Duration::from_millis(20));
    }
    let out = stdout(&txmerge(&["tune", "--endpoint", &addr, "--wmax", "2", "--bmax", "3", "--window-ms", "30", "--seed", "1", "--cap", "2"]));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "iteration,W,B,throughput,predicted_mean,predicted_var");
    assert_eq!(lines.iter().filter(|l| l.starts_with("0,")).count(), 20);
    let measured: Vec<f64> = lines[1..].iter().map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
    assert!(measured.iter().any(|&t| t > 0.0), "{out}");
}

#[test]
fn tune_reports_an_unreachable_service() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let o = txmerge(&["tune", "--endpoint", &format!("127.0.0.1:{port}"), "--window-ms", "10"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("unreachable"));
}
