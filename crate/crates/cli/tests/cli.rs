use std::fs;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_edgetail"))
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn small_config(dir: &Path, bench: serde_json::Value) -> PathBuf {
    let mut c: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(config_path("reference.json")).unwrap()).unwrap();
    c["sim"]["horizon_ms"] = 3000.0.into();
    c["step"]["steps_per_episode"] = 3.into();
    c["bench"] = bench;
    let path = dir.join("c.json");
    fs::write(&path, c.to_string()).unwrap();
    path
}

#[test]
fn run_writes_outputs_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let config = config_path("reference.json");
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let status = bin()
            .args(["run", "--config"])
            .arg(&config)
            .args(["--scheduler", "rd", "--seed", "1", "--out"])
            .arg(&out)
            .stdout(Stdio::null())
            .status()
            .unwrap();
        assert!(status.success());
        for f in ["requests.csv", "queues.csv", "summary.json", "config.json", "manifest.json", "trace.csv"] {
            assert!(out.join(f).exists(), "{f}");
        }
        outputs.push(fs::read(out.join("requests.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);

    let replay = dir.path().join("replay");
    let status = bin()
        .args(["run", "--config"])
        .arg(&config)
        .args(["--scheduler", "rd", "--seed", "1", "--trace"])
        .arg(dir.path().join("a/trace.csv"))
        .arg("--out")
        .arg(&replay)
        .stdout(Stdio::null())
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(fs::read(replay.join("requests.csv")).unwrap(), outputs[0]);
}

#[test]
fn report_is_a_function_of_the_requests_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert!(bin()
        .args(["run", "--config"])
        .arg(config_path("reference.json"))
        .args(["--scheduler", "da", "--out"])
        .arg(&out)
        .stdout(Stdio::null())
        .status()
        .unwrap()
        .success());
    assert!(bin()
        .args(["report", "--requests"])
        .arg(out.join("requests.csv"))
        .stdout(Stdio::null())
        .status()
        .unwrap()
        .success());
    let run: serde_json::Value = serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("report/summary.json")).unwrap()).unwrap();
    assert_eq!(run["latency"], report["latency"]);
    let cdf = fs::read_to_string(out.join("report/cdf.csv")).unwrap();
    assert!(cdf.starts_with("latency_ms,fraction\n"));
    assert!(cdf.trim_end().ends_with(",1"));
    let queues = fs::read_to_string(out.join("report/queues.csv")).unwrap();
    assert_eq!(queues.lines().count(), 5);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["run", "--config"])
        .arg(config_path("reference.json"))
        .args(["--scheduler", "fastest", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("possible values"));

    let config = small_config(dir.path(), serde_json::json!({"scenarios": []}));
    let out = bin().args(["bench", "--config"]).arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = bin()
        .args(["run", "--config"])
        .arg(dir.path().join("missing.json"))
        .args(["--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    let out = bin()
        .args(["run", "--config"])
        .arg(config_path("reference.json"))
        .args(["--delta-ms", "100", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("step.delta_ms"));
}

#[test]
fn bench_grid_rows() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(
        dir.path(),
        serde_json::json!({
            "scenarios": [
                {"name": "2-4", "servers": [1, 4], "services": [1, 2, 3, 4]},
                {"name": "4-8", "servers": [1, 2, 3, 4], "services": [1, 2, 3, 4, 5, 6, 7, 8]}
            ],
            "target_utilization": 0.5,
            "seeds": [1, 2]
        }),
    );
    let out = bin()
        .args(["bench", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("bench"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8(out.stdout).unwrap();
    assert_eq!(table.lines().count(), 1 + 6);
    let csv = fs::read_to_string(dir.path().join("bench/bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 6);
}

#[test]
fn episode_and_bound_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), serde_json::Value::Null);
    let out = dir.path().join("ep");
    assert!(bin()
        .args(["episode", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .stdout(Stdio::null())
        .status()
        .unwrap()
        .success());
    let rewards = fs::read_to_string(out.join("rewards.csv")).unwrap();
    assert_eq!(rewards.lines().count(), 1 + 3);

    let omega = dir.path().join("omega.csv");
    fs::write(&omega, "1,0\n0,1\n").unwrap();
    let mut c: serde_json::Value = serde_json::from_str(&fs::read_to_string(config_path("toy.json")).unwrap()).unwrap();
    c["reward"] = serde_json::json!({"gamma": 80.0, "beta1": 0.1, "beta2": 0.3, "beta3": 0.1});
    let toy = dir.path().join("toy.json");
    fs::write(&toy, c.to_string()).unwrap();
    let out = bin().args(["bound", "--config"]).arg(&toy).arg("--omega").arg(&omega).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["servers"].as_array().unwrap().len(), 2);
    let k = v["kappa_bound"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&k));

    fs::write(&omega, "1,0\n").unwrap();
    let out = bin().args(["bound", "--config"]).arg(&toy).arg("--omega").arg(&omega).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

fn http(port: u16, request: &str) -> Option<String> {
    let mut stream = TcpStream::connect(("127.0.0.1", port)).ok()?;
    stream.set_read_timeout(Some(Duration::from_secs(10))).ok()?;
    stream.write_all(request.as_bytes()).ok()?;
    let mut response = String::new();
    stream.read_to_string(&mut response).ok()?;
    Some(response)
}

#[test]
fn serve_is_reachable_and_stops_on_sigterm() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut child = bin()
        .args(["serve", "--config"])
        .arg(config_path("reference.json"))
        .args(["--port", &port.to_string()])
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let body = r#"{"seed": 1}"#;
    let request = format!(
        "POST /v1/reset HTTP/1.1\r\nHost: localhost\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    let deadline = Instant::now() + Duration::from_secs(20);
    let response = loop {
        if let Some(r) = http(port, &request) {
            break r;
        }
        assert!(Instant::now() < deadline, "gateway never became reachable");
        std::thread::sleep(Duration::from_millis(50));
    };
    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    assert!(response.contains("\"plan_shapes\""));

    let busy = bin()
        .args(["serve", "--config"])
        .arg(config_path("reference.json"))
        .args(["--port", &port.to_string()])
        .output()
        .unwrap();
    assert_eq!(busy.status.code(), Some(2));

    let kill = Command::new("kill").args(["-TERM", &child.id().to_string()]).status().unwrap();
    assert!(kill.success());
    let deadline = Instant::now() + Duration::from_secs(20);
    let status = loop {
        if let Some(s) = child.try_wait().unwrap() {
            break s;
        }
        assert!(Instant::now() < deadline, "gateway did not shut down");
        std::thread::sleep(Duration::from_millis(50));
    };
    assert!(status.success());
}
