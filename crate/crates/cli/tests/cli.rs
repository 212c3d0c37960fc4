use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::process::{Child, Command, Output, Stdio};
use std::time::Duration;

use serde_json::{json, Value};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_endoscope"));
    c.env_remove("ENDOSCOPE_CONFIG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is json")
}

fn temp_dir(tag: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("endoscope-cli-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn fk_zero_currents_is_straight_and_repeatable() {
    let a = run(&["fk"]);
    assert!(a.status.success());
    let text = String::from_utf8(a.stdout.clone()).unwrap();
    assert!(text.starts_with("# rodstate/1"));
    let last: Vec<f64> = text.lines().last().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert!(last[1].abs() < 1e-15 && last[2].abs() < 1e-15);
    assert!((last[3] - 0.02).abs() < 1e-12);
    assert_eq!(run(&["fk"]).stdout, a.stdout);
}

#[test]
fn fk_table1_axial_current_bends_about_ninety_degrees() {
    let out = run(&["fk", "--currents", "0,0,-0.213", "--format", "json"]);
    assert!(out.status.success());
    let bend = stdout_json(&out)["tip_pose"]["bend_deg"].as_f64().unwrap();
    assert!((bend - 90.0).abs() < 5.0, "{bend}");
}

#[test]
fn fk_writes_both_artifacts() {
    let dir = temp_dir("fk");
    let out = run(&["fk", "--out", dir.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(dir.join("rod_state.csv").is_file());
    let pose: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("tip_pose.json")).unwrap()).unwrap();
    assert_eq!(pose["schema"], "fk/1");
}

#[test]
fn config_errors_exit_two() {
    assert_eq!(run(&["--config", "/definitely/missing.json", "fk"]).status.code(), Some(2));
    assert_eq!(run(&["fk", "--currents", "0.1"]).status.code(), Some(2));
    assert_eq!(run(&["fk", "--currents", "0,0,0.9"]).status.code(), Some(2));
}

#[test]
fn config_path_from_environment() {
    let dir = temp_dir("env");
    let path = dir.join("bad.json");
    std::fs::write(&path, "{\"schema\":\"nope\"}").unwrap();
    let out = bin().env("ENDOSCOPE_CONFIG", &path).arg("ablation").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.json"));
}

#[test]
fn ik_reports_table1_currents() {
    let out = run(&["ik", "--angle-deg", "90", "--format", "json"]);
    assert!(out.status.success());
    let v = stdout_json(&out);
    assert_eq!(v["converged"], true);
    let axial = v["currents_a"]["axial"].as_f64().unwrap();
    assert!((axial.abs() - 0.213).abs() < 0.2 * 0.213, "{axial}");
    assert!(v["currents_a"]["saddle_x"].as_f64().unwrap().abs() < 5e-3);
    assert!(v["currents_a"]["saddle_y"].as_f64().unwrap().abs() < 5e-3);
}

#[test]
fn ik_hundred_degrees_within_rating_and_zero_is_zero() {
    let v = stdout_json(&run(&["ik", "--angle-deg", "100", "--format", "json"]));
    for (_, i) in v["currents_a"].as_object().unwrap() {
        assert!(i.as_f64().unwrap().abs() <= 0.3);
    }
    let z = stdout_json(&run(&["ik", "--angle-deg", "0", "--format", "json"]));
    assert!(z["currents_a"].as_object().unwrap().values().all(|i| i.as_f64().unwrap() == 0.0));
    assert_eq!(run(&["ik", "--angle-deg", "130"]).status.code(), Some(2));
}

#[test]
fn ik_saturated_target_exits_four_with_partial_result() {
    let dir = temp_dir("ik4");
    let mut cfg: Value = serde_json::from_str(endoscope_core::config::Config::table1_json()).unwrap();
    cfg["safety"]["power_cap_w"] = json!(0.2);
    let path = dir.join("capped.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let out = run(&["--config", path.to_str().unwrap(), "ik", "--angle-deg", "90", "--format", "json"]);
    assert_eq!(out.status.code(), Some(4));
    let v = stdout_json(&out);
    assert_eq!(v["converged"], false);
    assert_eq!(v["saturated"], true);
}

#[test]
fn ablation_table_in_watts() {
    let out = run(&["ablation", "--format", "json"]);
    let rows = stdout_json(&out)["rows"].as_array().unwrap().clone();
    let powers: Vec<f64> = rows.iter().map(|r| r["power"].as_f64().unwrap()).collect();
    for (p, want) in powers.iter().zip([0.0275, 0.110, 0.440, 0.6875]) {
        assert!((p - want).abs() < 1e-6);
    }
    assert_eq!(rows[3]["ablation_capable"], true);
}

#[test]
fn design_curve_has_interior_optimum() {
    let out = run(&["design-curve", "--format", "json"]);
    assert!(out.status.success());
    let r = stdout_json(&out)["optimum_ratio"].as_f64().unwrap();
    assert!(r > 0.1 && r < 0.9);
    let tight = run(&["design-curve", "--ceiling-a", "0.3"]);
    assert_eq!(tight.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&tight.stderr).contains("infeasible ratios"));
}

#[test]
fn grasper_reports_force_and_flags_over_limit() {
    let v = stdout_json(&run(&["grasper", "--format", "json"]));
    assert!((v["ideal_force_at_limit_n"].as_f64().unwrap() - 0.217).abs() < 0.02 * 0.217);
    assert_eq!(run(&["grasper", "--currents", "0.1,0.6"]).status.code(), Some(5));
}

#[test]
fn workspace_summary_reports_max_bend() {
    let out = run(&["workspace", "--grid", "8", "--segments", "30", "--format", "json"]);
    assert!(out.status.success());
    let v = stdout_json(&out);
    assert!(v["max_bend_deg"].as_f64().unwrap() >= 100.0);
    assert!(!v["hull"].as_array().unwrap().is_empty());
    assert_eq!(run(&["workspace", "--grid", "4"]).status.code(), Some(2));
}

#[test]
fn serve_scenario_replays_deterministically() {
    let a = run(&["serve", "--scenario", "fig8-navigation"]);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    let text = String::from_utf8(a.stdout.clone()).unwrap();
    let summary: Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert_eq!(summary["type"], "summary");
    assert_eq!(summary["tumor_reached"], true);
    assert_eq!(summary["collision_ticks"], 0);
    assert_eq!(text.lines().count(), 422);
    assert_eq!(run(&["serve", "--scenario", "fig8-navigation"]).stdout, a.stdout);
}

#[test]
fn serve_rejects_bad_inputs() {
    assert_eq!(run(&["serve", "--scenario", "nowhere"]).status.code(), Some(2));
    let dir = temp_dir("phantom");
    let path = dir.join("bad.json");
    std::fs::write(&path, r#"{"schema":"phantom/9","name":"x"}"#).unwrap();
    let out = run(&["serve", "--scenario", "empty", "--phantom", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.json"));
}

#[test]
fn serve_port_busy_exits_six() {
    let held = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = held.local_addr().unwrap().to_string();
    let out = run(&["serve", "--bind", &addr, "--no-ws", "--max-ticks", "1"]);
    assert_eq!(out.status.code(), Some(6));
}

struct Server {
    child: Child,
    tcp: String,
    ws: String,
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn start_server() -> Server {
    let mut child = bin()
        .args(["serve", "--bind", "127.0.0.1:0", "--ws-bind", "127.0.0.1:0", "--max-ticks", "1500"])
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stderr = BufReader::new(child.stderr.take().unwrap());
    let (mut tcp, mut ws) = (String::new(), String::new());
    while tcp.is_empty() || ws.is_empty() {
        let mut line = String::new();
        assert!(stderr.read_line(&mut line).unwrap() > 0, "server exited early");
        if let Some(a) = line.trim().strip_prefix("listening tcp ") {
            tcp = a.to_string();
        } else if let Some(a) = line.trim().strip_prefix("listening ws ") {
            ws = a.to_string();
        }
    }
    std::thread::spawn(move || std::io::copy(&mut stderr, &mut std::io::sink()));
    Server { child, tcp, ws }
}

struct LineClient {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl LineClient {
    fn connect(addr: &str) -> Self {
        let s = TcpStream::connect(addr).unwrap();
        s.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
        Self { reader: BufReader::new(s.try_clone().unwrap()), writer: s }
    }

    fn send(&mut self, v: Value) {
        writeln!(self.writer, "{v}").unwrap();
    }

    /// Next message of the given type, skipping others.
    fn next(&mut self, kind: &str) -> Value {
        loop {
            let mut line = String::new();
            assert!(self.reader.read_line(&mut line).unwrap() > 0, "connection closed");
            let v: Value = serde_json::from_str(&line).unwrap();
            if v["type"] == kind {
                return v;
            }
        }
    }
}

#[test]
fn live_tcp_session_clamps_locks_and_streams() {
    let server = start_server();
    let mut op = LineClient::connect(&server.tcp);
    op.send(json!({"type": "hello", "schema": "teleop/1", "client_id": "op"}));
    let welcome = op.next("welcome");
    assert_eq!(welcome["caps"]["power_cap_w"], 1.2);
    assert_eq!(welcome["phantom"]["schema"], "phantom/1");

    op.send(json!({"type": "cmd", "client_id": "op", "sequence_number": 1, "target_bend": 150f64.to_radians(), "insert_velocity": 5.0}));
    let ack = op.next("ack");
    assert_eq!(ack["status"], "clamped");
    assert_eq!(ack["clamped"], json!(["target_bend"]));
    assert!((ack["applied"]["target_bend"].as_f64().unwrap() - 120f64.to_radians()).abs() < 1e-12);

    op.send(json!({"type": "cmd", "client_id": "op", "sequence_number": 1}));
    assert_eq!(op.next("ack")["status"], "stale");

    let mut other = LineClient::connect(&server.tcp);
    other.send(json!({"type": "cmd", "client_id": "intruder", "sequence_number": 1}));
    let rejected = other.next("ack");
    assert_eq!(rejected["status"], "rejected");
    assert_eq!(rejected["reason"], "operator lock held");

    let t = op.next("telemetry");
    assert!(t["total_power_w"].as_f64().unwrap() <= 1.2);
    assert_eq!(t["polyline_mm"].as_array().unwrap().len(), 41);

    other.send(json!({"type": "nonsense"}));
    assert!(other.next("error")["message"].as_str().unwrap().contains("teleop/1"));
}

#[test]
fn live_websocket_observer_is_read_only() {
    let server = start_server();
    let url = format!("ws://{}/teleop", server.ws.trim_start_matches("ws://").trim_end_matches("/teleop"));
    let (mut socket, _) = tungstenite::connect(url).unwrap();
    let next = |socket: &mut tungstenite::WebSocket<_>, kind: &str| loop {
        let msg = socket.read().unwrap();
        if let tungstenite::Message::Text(text) = msg {
            let v: Value = serde_json::from_str(text.as_str()).unwrap();
            if v["type"] == kind {
                return v;
            }
        }
    };
    let hello = json!({"type": "hello", "client_id": "watcher", "role": "observer"}).to_string();
    socket.send(tungstenite::Message::Text(hello.into())).unwrap();
    assert_eq!(next(&mut socket, "welcome")["role"], "observer");
    assert!(next(&mut socket, "telemetry")["tick"].is_u64());
    let cmd = json!({"type": "cmd", "client_id": "watcher", "sequence_number": 1}).to_string();
    socket.send(tungstenite::Message::Text(cmd.into())).unwrap();
    let ack = next(&mut socket, "ack");
    assert_eq!(ack["status"], "rejected");
    assert_eq!(ack["reason"], "observer role is read-only");
}
