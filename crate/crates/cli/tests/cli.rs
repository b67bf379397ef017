use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_airan");

fn scenario_path(name: &str) -> String {
    format!("{}/../../scenarios/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn airan(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn text(o: &Output) -> String {
    format!(
        "{}{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    )
}

struct Server {
    child: Child,
    addr: String,
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn serve(dir: &Path, sub: &str, config: &serde_json::Value, name: &str) -> Server {
    let path = dir.join(name);
    std::fs::write(&path, config.to_string()).unwrap();
    let mut child = Command::new(BIN)
        .args([sub, "--config", path.to_str().unwrap()])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = line
        .trim()
        .strip_prefix("listening on ")
        .expect("announces address")
        .to_string();
    Server { child, addr }
}

fn site_config(smo: Option<&str>) -> serde_json::Value {
    serde_json::json!({
        "listen": "127.0.0.1:0",
        "secret": "5a".repeat(32),
        "smo": smo,
        "site": {
            "site_id": "edge1",
            "region": "metro",
            "nodes": [{ "node_id": "gpu0", "capacity": { "accel_milli": 1000 } }],
            "telemetry_period": 0.2
        },
        "ran_demand": { "accel_milli": 300 }
    })
}

fn smo_config() -> serde_json::Value {
    serde_json::json!({
        "listen": "127.0.0.1:0",
        "secret": "5a".repeat(32),
        "intent": {
            "ran_headroom_fraction": 0.1,
            "max_rt_admission_latency": 0.01,
            "ai_enabled_sites": ["edge1"]
        },
        "tenants": [{ "tenant_id": "t1", "credential": "pw", "default_priority": 3 }],
        "sites": [{
            "site_id": "edge1",
            "region": "metro",
            "nodes": [{ "node_id": "gpu0", "capacity": { "accel_milli": 1000 } }]
        }],
        "epoch_period": 0.2
    })
}

#[test]
fn simulate_fig4_is_healthy_and_writes_outputs() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("metrics.csv");
    let o = airan(
        dir.path(),
        &["simulate", &scenario_path("fig4.json"), "--out", out.to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("time,site,ran_milli,ai_milli,capacity_milli\n"));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.summary.json")).unwrap()).unwrap();
    assert_eq!(summary["ran_violations"], 0);
}

#[test]
fn simulate_malformed_scenario_exits_one() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ \"seed\": 1, \"duration\": ").unwrap();
    let o = airan(dir.path(), &["simulate", bad.to_str().unwrap(), "--out", "m.csv"]);
    assert_eq!(o.status.code(), Some(1), "{}", text(&o));
    assert!(text(&o).contains("line"), "{}", text(&o));
}

#[test]
fn simulate_ran_overload_exits_two() {
    let dir = TempDir::new().unwrap();
    let o = airan(
        dir.path(),
        &["simulate", &scenario_path("ran-overload.json"), "--out", "m.csv"],
    );
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
    assert!(text(&o).contains("alarms"), "{}", text(&o));
}

#[test]
fn usage_errors_exit_one() {
    let dir = TempDir::new().unwrap();
    assert_eq!(airan(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(airan(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn unreachable_orchestrator_exits_three() {
    let dir = TempDir::new().unwrap();
    let o = airan(
        dir.path(),
        &[
            "--endpoint",
            "127.0.0.1:1",
            "auth",
            "--tenant",
            "t1",
            "--credential",
            "pw",
            "--sites",
            "edge1",
            "--ceiling",
            "accel=100",
        ],
    );
    assert_eq!(o.status.code(), Some(3), "{}", text(&o));
}

#[test]
fn services_end_to_end() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let smo = serve(d, "serve-smo", &smo_config(), "smo.json");
    let site = serve(d, "serve-site", &site_config(Some(&smo.addr)), "site.json");
    let ep = smo.addr.as_str();

    let bad = airan(
        d,
        &[
            "--endpoint",
            ep,
            "auth",
            "--tenant",
            "t1",
            "--credential",
            "nope",
            "--sites",
            "edge1",
            "--ceiling",
            "accel=100",
        ],
    );
    assert_eq!(bad.status.code(), Some(4), "{}", text(&bad));

    let o = airan(
        d,
        &[
            "--endpoint",
            ep,
            "auth",
            "--tenant",
            "t1",
            "--credential",
            "pw",
            "--sites",
            "edge1",
            "--ceiling",
            "accel=900",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));

    let o = airan(
        d,
        &[
            "--endpoint",
            ep,
            "submit-batch",
            "--id",
            "train-1",
            "--max",
            "accel=200",
            "--duration",
            "600",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "train-1");

    let deadline = Instant::now() + Duration::from_secs(10);
    loop {
        let o = airan(d, &["--endpoint", ep, "status", "train-1"]);
        assert_eq!(o.status.code(), Some(0), "{}", text(&o));
        if String::from_utf8_lossy(&o.stdout)
            .lines()
            .next()
            .is_some_and(|l| l.ends_with(" running"))
        {
            break;
        }
        assert!(Instant::now() < deadline, "batch never ran: {}", text(&o));
        std::thread::sleep(Duration::from_millis(100));
    }

    let o = airan(
        d,
        &[
            "--endpoint",
            ep,
            "submit-rt",
            "--site",
            "edge1",
            "--site-endpoint",
            &site.addr,
            "--id",
            "chat-1",
            "--min",
            "accel=100",
            "--max",
            "accel=200",
            "--duration",
            "60",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    assert!(text(&o).contains("deployed"), "{}", text(&o));

    let o = airan(
        d,
        &[
            "--endpoint",
            ep,
            "submit-rt",
            "--site",
            "edge1",
            "--site-endpoint",
            &site.addr,
            "--id",
            "chat-2",
            "--max",
            "accel=800",
            "--duration",
            "60",
        ],
    );
    assert_eq!(o.status.code(), Some(4), "{}", text(&o));
    assert!(text(&o).contains("RESUBMIT_AS_BATCH"), "{}", text(&o));

    let o = airan(d, &["--endpoint", ep, "--format", "csv", "capacity"]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    assert!(
        String::from_utf8_lossy(&o.stdout).contains("edge1,gpu0,"),
        "{}",
        text(&o)
    );
}

#[test]
fn site_without_orchestrator_has_no_quota() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let smo = serve(d, "serve-smo", &smo_config(), "smo.json");
    let site = serve(d, "serve-site", &site_config(None), "site.json");
    let ep = smo.addr.as_str();
    let o = airan(
        d,
        &[
            "--endpoint",
            ep,
            "auth",
            "--tenant",
            "t1",
            "--credential",
            "pw",
            "--sites",
            "edge1",
            "--ceiling",
            "accel=900",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let o = airan(
        d,
        &[
            "--endpoint",
            ep,
            "submit-rt",
            "--site",
            "edge1",
            "--site-endpoint",
            &site.addr,
            "--max",
            "accel=100",
            "--duration",
            "5",
        ],
    );
    assert_eq!(o.status.code(), Some(4), "{}", text(&o));
    assert!(text(&o).contains("insufficient-quota"), "{}", text(&o));
}

#[test]
fn occupied_port_exits_one() {
    let dir = TempDir::new().unwrap();
    let held = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let mut cfg = smo_config();
    cfg["listen"] = held.local_addr().unwrap().to_string().into();
    let path = dir.path().join("smo.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let o = airan(dir.path(), &["serve-smo", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", text(&o));
}

#[test]
fn expired_token_is_refused_by_the_site() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let smo = serve(d, "serve-smo", &smo_config(), "smo.json");
    let site = serve(d, "serve-site", &site_config(Some(&smo.addr)), "site.json");
    let ep = smo.addr.as_str();
    let o = airan(
        d,
        &[
            "--endpoint",
            ep,
            "auth",
            "--tenant",
            "t1",
            "--credential",
            "pw",
            "--sites",
            "edge1",
            "--ceiling",
            "accel=900",
            "--duration",
            "0.3",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    std::thread::sleep(Duration::from_millis(1200));
    let o = airan(
        d,
        &[
            "--endpoint",
            ep,
            "submit-rt",
            "--site",
            "edge1",
            "--site-endpoint",
            &site.addr,
            "--max",
            "accel=100",
            "--duration",
            "5",
        ],
    );
    assert_eq!(o.status.code(), Some(4), "{}", text(&o));
    assert!(text(&o).contains("expired-token"), "{}", text(&o));
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let fig4 = scenario_path("fig4.json");
    for out in ["a.csv", "b.csv"] {
        let o = airan(d, &["simulate", &fig4, "--out", out, "--seed", "42"]);
        assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    }
    assert_eq!(
        std::fs::read(d.join("a.csv")).unwrap(),
        std::fs::read(d.join("b.csv")).unwrap()
    );
}
