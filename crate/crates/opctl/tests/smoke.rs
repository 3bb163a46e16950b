//! Broker, service and simulator as three real processes on one machine.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc;
use std::time::{Duration, Instant};

const LOT: &str = r#"{"lot_id":"L1","name":"Smoke","lat":30.0,"lon":31.0,"slots":["S1","S2","S3","S4"],"gates":[{"gate_id":"G-IN","kind":"entry"},{"gate_id":"G-OUT","kind":"exit"}]}"#;
const SCENARIO: &str = r#"{"at_ms":100,"action":"car_arrives","plate":"A-1","slot":"S1"}
{"at_ms":200,"action":"car_arrives","plate":"B-2","slot":"any"}
{"at_ms":300,"action":"car_departs","plate":"A-1"}
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_opctl"));
    c.env_remove("SPMS_DATA_DIR").env_remove("SPMS_LOG");
    c
}

/// Kills the child if the test panics before it is stopped.
struct Proc(Child);

impl Drop for Proc {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

impl Proc {
    fn interrupt_and_wait(mut self) -> i32 {
        let pid = self.0.id().to_string();
        assert!(Command::new("kill").args(["-INT", &pid]).status().unwrap().success());
        let deadline = Instant::now() + Duration::from_secs(10);
        loop {
            if let Some(s) = self.0.try_wait().unwrap() {
                return s.code().unwrap_or(-1);
            }
            assert!(Instant::now() < deadline, "process ignored the interrupt");
            std::thread::sleep(Duration::from_millis(20));
        }
    }
}

/// Forwards every line of a pipe to a channel.
fn lines(pipe: impl Read + Send + 'static) -> mpsc::Receiver<String> {
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        for line in BufReader::new(pipe).lines().map_while(Result::ok) {
            if tx.send(line).is_err() {
                break;
            }
        }
    });
    rx
}

fn wait_for(rx: &mpsc::Receiver<String>, needle: &str) -> String {
    let deadline = Instant::now() + Duration::from_secs(10);
    loop {
        let left = deadline.saturating_duration_since(Instant::now());
        match rx.recv_timeout(left) {
            Ok(line) if line.contains(needle) => return line,
            Ok(_) => {}
            Err(e) => panic!("waiting for {needle:?}: {e}"),
        }
    }
}

fn http_get(addr: &str, path: &str) -> (u16, serde_json::Value) {
    let mut s = TcpStream::connect(addr).unwrap();
    write!(s, "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut text = String::new();
    s.read_to_string(&mut text).unwrap();
    let status = text.split_whitespace().nth(1).unwrap().parse().unwrap();
    let body = text.split_once("\r\n\r\n").unwrap().1;
    (status, serde_json::from_str(body).unwrap())
}

#[test]
fn broker_service_and_sim_run_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let file = |name: &str, text: &str| {
        std::fs::write(root.join(name), text).unwrap();
        root.join(name).display().to_string()
    };
    let lot = file("lot.jsonl", LOT);
    let scenario = file("scenario.jsonl", SCENARIO);
    let cfg = file("svc.toml", "password_rounds = 1000\ntick_interval_s = 1\n");
    let data = root.join("data").display().to_string();

    let seeded = bin().args(["seed", "--data", &data, "--config", &cfg, "--lot-config", &lot]).output().unwrap();
    assert!(seeded.status.success());

    let mut broker = bin().args(["broker", "--bind", "127.0.0.1:0"]).stdout(Stdio::piped()).spawn().unwrap();
    let broker_out = lines(broker.stdout.take().unwrap());
    let broker = Proc(broker);
    let broker_addr = wait_for(&broker_out, "listening on").rsplit(' ').next().unwrap().to_owned();

    let mut service = bin()
        .args(["--log", "info", "service", "--config", &cfg, "--data", &data, "--listen", "127.0.0.1:0"])
        .args(["--broker", &broker_addr])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let service_out = lines(service.stdout.take().unwrap());
    let service_err = lines(service.stderr.take().unwrap());
    let service = Proc(service);
    let line = wait_for(&service_out, "service listening on");
    let api_addr = line.split_whitespace().nth(3).unwrap().trim_end_matches(',').to_owned();
    wait_for(&service_err, "connected to broker");

    let publish = root.join("publish.log");
    let sim = bin()
        .args(["sim", "--broker", &broker_addr, "--lot-config", &lot, "--scenario", &scenario])
        .args(["--heartbeat-ms", "0", "--rate", "0", "--publish-log", &publish.display().to_string()])
        .output()
        .unwrap();
    assert!(sim.status.success(), "{}", String::from_utf8_lossy(&sim.stderr));
    let published = std::fs::read_to_string(&publish).unwrap();
    assert!(published.contains("lot/L1/slot/S1/ir"));
    assert!(published.contains("lot/L1/gate/G-IN/piezo"));

    // A-1 left and was billed; B-2 took the lowest free slot and stays
    let deadline = Instant::now() + Duration::from_secs(10);
    loop {
        let (status, slots) = http_get(&api_addr, "/api/v1/lots/L1/slots");
        assert_eq!(status, 200);
        let states: Vec<&str> = slots.as_array().unwrap().iter().map(|s| s["state"].as_str().unwrap()).collect();
        let report = bin().args(["report", "billing", "--data", &data, "--csv"]).output().unwrap();
        let bills = String::from_utf8_lossy(&report.stdout).lines().count().saturating_sub(1);
        if states == ["FREE", "OCCUPIED", "FREE", "FREE"] && bills == 1 {
            break;
        }
        assert!(Instant::now() < deadline, "service never caught up: {states:?}, {bills} bills");
        std::thread::sleep(Duration::from_millis(50));
    }
    let (status, _) = http_get(&api_addr, "/api/v1/lots/L9/slots");
    assert_eq!(status, 404);

    assert_eq!(service.interrupt_and_wait(), 0);
    assert_eq!(broker.interrupt_and_wait(), 0);

    // the log the service left behind replays cleanly
    let replayed = bin().args(["replay", "--data", &data]).output().unwrap();
    assert!(replayed.status.success());
    assert!(Path::new(&data).join("events.log").metadata().unwrap().len() > 0);
}
