//! Command-line behavior: outputs, determinism and exit codes.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};
use std::thread;

fn fly0(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fly0"))
        .args(args)
        .env_remove("FLY0_GROUNDER_URL")
        .env_remove("FLY0_GROUNDER_TOKEN")
        .env_remove("FLY0_GROUNDER_TIMEOUT")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// An open 40 m world with the goal 8 m along the start heading (`yaw` 0)
/// or behind it (`yaw` π).
fn open_scenario(dir: &Path, name: &str, yaw: f64) -> String {
    let doc = serde_json::json!({
        "world": {"bounds": [[0, 0, 0], [40, 40, 40]], "obstacles": []},
        "start": {"position": [5, 20, 10], "yaw": yaw},
        "goal": [13, 20, 10],
        "instruction": "fly to the red beacon",
        "delta": 5.0,
        "seed": 1
    });
    let path = dir.join(name);
    fs::write(&path, doc.to_string()).unwrap();
    path_str(&path).to_string()
}

#[test]
fn gen_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = fly0(&["gen", "--seed", "4", "--count", "2", "--out", path_str(dir.path())]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["scenario_4.json", "scenario_5.json"] {
        let x = fs::read(a.path().join(name)).unwrap();
        assert_eq!(x, fs::read(b.path().join(name)).unwrap());
        let doc: serde_json::Value = serde_json::from_slice(&x).unwrap();
        assert!(doc["world"]["obstacles"].as_array().unwrap().len() >= 5);
    }
}

#[test]
fn run_and_batch_reports_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let scenarios = dir.path().join("scenarios");
    let out = fly0(&["gen", "--seed", "2", "--out", path_str(&scenarios)]);
    assert_eq!(code(&out), 0);
    let scenario = scenarios.join("scenario_2.json");
    let report = |name: &str| dir.path().join(name);

    for name in ["run_a.json", "run_b.json"] {
        let out = fly0(&["run", "--scenario", path_str(&scenario), "--seed", "6", "--report", path_str(&report(name))]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["batch_a.json", "batch_b.json"] {
        let out = fly0(&[
            "batch", "--scenarios", path_str(&scenarios), "--trials", "1", "--base-seed", "6", "--report",
            path_str(&report(name)),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let run_a = fs::read(report("run_a.json")).unwrap();
    assert_eq!(run_a, fs::read(report("run_b.json")).unwrap());
    assert_eq!(run_a, fs::read(report("batch_a.json")).unwrap());
    assert_eq!(run_a, fs::read(report("batch_b.json")).unwrap());
    let doc: serde_json::Value = serde_json::from_slice(&run_a).unwrap();
    assert_eq!(doc["sr"], 100.0);
    assert_eq!(doc["rows"][0]["name"], "scenario_2");
}

#[test]
fn run_writes_trace_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = open_scenario(dir.path(), "open.json", 0.0);
    let trace = dir.path().join("ticks.csv");
    let export = dir.path().join("traj.csv");
    let out = fly0(&[
        "run", "--scenario", &scenario, "--pixel-noise", "0", "--depth-noise", "0", "--trace", path_str(&trace),
        "--export", path_str(&export), "--export-rate", "20",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["ne_mean"].as_f64().unwrap() < 0.5);

    let ticks = fs::read_to_string(&trace).unwrap();
    assert!(ticks.starts_with("time,x,y,z,goal_x,goal_y,goal_z,J,status\n"));
    assert!(ticks.trim_end().ends_with(",succeeded"));
    let plans = fs::read_to_string(dir.path().join("ticks.plans.csv")).unwrap();
    assert!(plans.starts_with("plan,time,run,iteration,J,Js,Jc,Jd,step\n"));
    let traj = fs::read_to_string(&export).unwrap();
    assert!(traj.starts_with("t,x,y,z,vx,vy,vz\n"));
    assert!(traj.lines().count() > 2);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    assert_eq!(code(&fly0(&["run", "--scenario", path_str(&missing)])), 2);
    assert_eq!(code(&fly0(&["run", "--bogus-flag"])), 2);

    let ok = open_scenario(dir.path(), "ok.json", 0.0);
    assert_eq!(code(&fly0(&["run", "--scenario", &ok, "--depth-noise", "-1"])), 2);

    let broken = dir.path().join("broken.json");
    fs::write(&broken, r#"{"world": {"bounds": [[0,0,0],[10,10,10]]}, "start": {"position": [1,1,1]}}"#).unwrap();
    let out = fly0(&["run", "--scenario", path_str(&broken)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("`goal`"));

    // Facing away, the target is never seen: an evaluation failure.
    let lost = open_scenario(dir.path(), "lost.json", std::f64::consts::PI);
    let out = fly0(&["run", "--scenario", &lost]);
    assert_eq!(code(&out), 1);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["rows"][0]["episodes"][0]["status"], "grounding_failed");
}

#[test]
fn gradcheck_reports_errors() {
    let out = fly0(&["gradcheck", "--instances", "3", "--seed", "1"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    for term in ["smoothness", "collision", "feasibility", "total"] {
        assert!(text.contains(term), "{text}");
    }
    assert!(text.contains("3 instances"));
    assert!(text.trim_end().ends_with("pass"));
}

#[test]
fn ablate_prints_each_variant() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = open_scenario(dir.path(), "open.json", 0.0);
    let report = dir.path().join("ablate.json");
    let out = fly0(&["ablate", "--scenarios", &scenario, "--trials", "1", "--no-opt", "--report", path_str(&report)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().any(|l| l.starts_with("full")));
    assert!(text.lines().any(|l| l.starts_with("no_opt")));
    assert!(!text.contains("no_depth"));
    let doc: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(doc["no_opt"]["config"]["planner"]["optimize"], false);
    assert_eq!(doc["full"]["config"]["planner"]["optimize"], true);
}

/// Answers every request with the image center, which is where the goal
/// of the open scenario appears from anywhere on the start heading.
fn center_endpoint() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/ground", listener.local_addr().unwrap());
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            let mut authorized = false;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    break;
                }
                let line = line.trim_end().to_ascii_lowercase();
                if line.is_empty() {
                    break;
                }
                if let Some(v) = line.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                authorized |= line == "authorization: bearer t0ken";
            }
            let mut body = vec![0u8; len];
            let _ = reader.read_exact(&mut body);
            let doc: serde_json::Value = serde_json::from_slice(&body).unwrap_or_default();
            let reply = if authorized && doc["width"] == 640 {
                r#"{"found": true, "x": 320, "y": 240}"#
            } else {
                r#"{"found": false}"#
            };
            let mut stream = stream;
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            );
        }
    });
    url
}

#[test]
fn remote_grounder_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = open_scenario(dir.path(), "open.json", 0.0);
    let out = Command::new(env!("CARGO_BIN_EXE_fly0"))
        .args(["run", "--scenario", &scenario, "--depth-noise", "0"])
        .env("FLY0_GROUNDER_URL", center_endpoint())
        .env("FLY0_GROUNDER_TOKEN", "t0ken")
        .env("FLY0_GROUNDER_TIMEOUT", "5")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["sr"], 100.0);
    assert!(report["ne_mean"].as_f64().unwrap() < 0.5);
}
