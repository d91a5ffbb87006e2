//! End-to-end tests of the `empower` binary.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_empower"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn build(out: &Path) -> Output {
    let corpus = fixture("toy_corpus.jsonl");
    run(&[
        "build-dataset",
        "--corpus",
        path_str(&corpus),
        "--out",
        path_str(out),
        "--selector",
        "empower",
        "--eta",
        "0.32",
        "--mock",
        "ngram",
        "--seed",
        "7",
    ])
}

#[test]
fn build_dataset_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ds");
    let files = ["train.jsonl", "manifest.json", "config.resolved.toml"];
    assert!(build(&out).status.success());
    let first: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(out.join(f)).unwrap()).collect();
    assert!(build(&out).status.success());
    let second: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(out.join(f)).unwrap()).collect();
    assert_eq!(first, second);
    assert!(!first[0].is_empty());

    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["eta"], 0.32);
    assert_eq!(manifest["base_of_log"], "natural");
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["counts"]["documents"], 20);
}

#[test]
fn resolved_config_reloads_and_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ds");
    assert!(build(&out).status.success());
    let again = dir.path().join("again");
    let status = run(&[
        "build-dataset",
        "--config",
        path_str(&out.join("config.resolved.toml")),
        "--out",
        path_str(&again),
    ])
    .status;
    assert!(status.success());
    for f in ["train.jsonl", "manifest.json"] {
        assert_eq!(std::fs::read(out.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn unknown_flag_is_a_usage_error_with_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ds");
    let corpus = fixture("toy_corpus.jsonl");
    let o = run(&["build-dataset", "--corpus", path_str(&corpus), "--out", path_str(&out), "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert!(!out.exists());
}

#[test]
fn inapplicable_selector_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ds");
    let corpus = fixture("toy_corpus.jsonl");
    let o = run(&[
        "build-dataset",
        "--corpus",
        path_str(&corpus),
        "--out",
        path_str(&out),
        "--selector",
        "sft-n",
        "--eta",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn runtime_failure_exits_2_with_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ds");
    let missing = dir.path().join("missing.jsonl");
    let o = run(&["build-dataset", "--corpus", path_str(&missing), "--out", path_str(&out), "--mock", "ngram"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn help_documents_flags_and_exits_0() {
    for cmd in ["build-dataset", "simulate", "score", "serve", "report", "split"] {
        let o = run(&[cmd, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{cmd}");
        let text = String::from_utf8_lossy(&o.stdout);
        assert!(text.contains("--config"), "{cmd}");
    }
    let text = String::from_utf8_lossy(&run(&["build-dataset", "--help"]).stdout).to_string();
    for flag in ["--selector", "--eta", "--n-tokens", "--seed", "--mock"] {
        assert!(text.contains(flag), "{flag}");
    }
    let text = String::from_utf8_lossy(&run(&["serve", "--help"]).stdout).to_string();
    for flag in ["--config", "--port", "--seed", "--log-path"] {
        assert!(text.contains(flag), "{flag}");
    }
}

#[test]
fn score_two_episode_fixture_matches_hand_values() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("score");
    let o = run(&[
        "score",
        "--corpus",
        path_str(&fixture("toy_corpus.jsonl")),
        "--transcripts",
        path_str(&fixture("two_episodes.jsonl")),
        "--out",
        path_str(&out),
        "--judge-cmd",
        "sh {program}",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&out.join("report.json"));
    let arm = &report["arms"]["fixture"];
    assert_eq!(arm["n_episodes"], 2);

    // Episode 1 passes and read 9, wrote 20; episode 2 fails.
    // Pass@1 over {1, 0}: sd = 0.7071, stderr = 0.5.
    let close = |v: &Value, x: f64| (v.as_f64().unwrap() - x).abs() < 1e-12;
    assert!(close(&arm["pass_at_1"]["mean"], 0.5));
    assert!(close(&arm["pass_at_1"]["stderr"], 0.5));
    // DPR over {x, 0} with x = 0.999^(0.1*9 + 0.5*20): mean x/2, stderr x/2.
    let x = 0.999f64.powf(10.9);
    assert!(close(&arm["dpr"]["mean"], x / 2.0));
    assert!(close(&arm["dpr"]["stderr"], x / 2.0));
    // Episode 2 never showed a suggestion, so only episode 1 (1 of 2) counts.
    assert!(close(&arm["accept_ratio"]["mean"], 0.5));
    assert_eq!(arm["accept_ratio"]["n"], 1);
    assert!(close(&arm["accept_ratio"]["stderr"], 0.0));
    assert!(arm["accept_ratio"]["note"].is_string());

    let table = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert_eq!(
        table,
        format!(
            "| Name | Pass@1 | Accept Ratio | Discounted Pass Rate |\n|---|---|---|---|\n| fixture | 0.500 (±0.500) | 0.500 (±0.000) | {:.3} (±{:.3}) |\n",
            x / 2.0,
            x / 2.0
        )
    );
    let verdicts: Vec<Value> = std::fs::read_to_string(out.join("verdicts.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(verdicts[0]["per_test"], serde_json::json!([true, true, true]));
    assert_eq!(verdicts[1]["per_test"], serde_json::json!([false, false]));
}

#[test]
fn split_partitions_the_corpus_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture("toy_corpus.jsonl");
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = run(&["split", "--corpus", path_str(&corpus), "--out", path_str(&out), "--test-fraction", "0.25", "--seed", "1"]);
        assert!(o.status.success());
        let train = std::fs::read_to_string(out.join("train.jsonl")).unwrap();
        let test = std::fs::read_to_string(out.join("test.jsonl")).unwrap();
        outputs.push((train, test));
    }
    assert_eq!(outputs[0], outputs[1]);
    let (train, test) = &outputs[0];
    assert_eq!(test.lines().count(), 5);
    assert_eq!(train.lines().count(), 15);
    let ids = |s: &str| -> Vec<String> {
        s.lines().map(|l| serde_json::from_str::<Value>(l).unwrap()["problem_id"].as_str().unwrap().to_string()).collect()
    };
    let train_ids = ids(train);
    assert!(ids(test).iter().all(|id| !train_ids.contains(id)));
}

#[test]
fn simulate_then_score_reports_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture("toy_corpus.jsonl");
    let sim = dir.path().join("sim");
    let o = run(&[
        "simulate",
        "--corpus",
        path_str(&corpus),
        "--out",
        path_str(&sim),
        "--mock",
        "ngram",
        "--mode",
        "next-n",
        "--n-tokens",
        "4",
        "--problems",
        "sum,count,greet",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let score = dir.path().join("score");
    let o = run(&[
        "score",
        "--corpus",
        path_str(&corpus),
        "--transcripts",
        path_str(&sim.join("transcripts.jsonl")),
        "--out",
        path_str(&score),
        "--judge-cmd",
        "sh {program}",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&score.join("report.json"));
    let arm = &report["arms"]["reference-next-4"];
    assert_eq!(arm["n_episodes"], 3);
    assert_eq!(arm["pass_at_1"]["mean"], 1.0);
}

#[test]
fn simulate_unknown_problem_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let o = run(&[
        "simulate",
        "--corpus",
        path_str(&fixture("toy_corpus.jsonl")),
        "--out",
        path_str(&sim),
        "--mock",
        "ngram",
        "--problems",
        "nope",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!sim.exists());
}

fn http(port: u16, method: &str, path: &str, body: Option<&Value>) -> (u16, String) {
    let body = body.map(|b| b.to_string()).unwrap_or_default();
    let mut stream = TcpStream::connect(("127.0.0.1", port)).unwrap();
    write!(
        stream,
        "{method} {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut response = String::new();
    stream.read_to_string(&mut response).unwrap();
    let status = response[9..12].parse().unwrap();
    let body = response.split_once("\r\n\r\n").map(|(_, b)| b.to_string()).unwrap_or_default();
    (status, body)
}

struct Server(std::process::Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn serve_and_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("serve.toml");
    std::fs::write(
        &config,
        "seed = 3\n[[service.arms]]\nkind = \"reference\"\nmode = \"next-n\"\nn_tokens = 5\n[[service.arms]]\nkind = \"null\"\n",
    )
    .unwrap();
    let ui = dir.path().join("ui");
    std::fs::create_dir(&ui).unwrap();
    std::fs::write(ui.join("index.html"), "<html>editor</html>").unwrap();
    let log = dir.path().join("logs/events.jsonl");
    std::fs::create_dir(dir.path().join("logs")).unwrap();
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();

    let server = Server(
        bin()
            .args(["serve", "--config", path_str(&config), "--corpus", path_str(&fixture("toy_corpus.jsonl"))])
            .args(["--port", &port.to_string(), "--log-path", path_str(&log), "--ui-dir", path_str(&ui)])
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .unwrap(),
    );
    let start = Instant::now();
    while TcpStream::connect(("127.0.0.1", port)).is_err() {
        assert!(start.elapsed() < Duration::from_secs(20), "server did not start");
        std::thread::sleep(Duration::from_millis(50));
    }

    let (status, body) = http(port, "GET", "/v1/problems/sum", None);
    assert_eq!(status, 200);
    let problem: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(problem["id"], "sum");
    assert!(problem.get("testcases").is_none());
    assert_eq!(http(port, "GET", "/v1/problems/nope", None).0, 404);
    let (status, body) = http(port, "GET", "/ui/index.html", None);
    assert_eq!((status, body.as_str()), (200, "<html>editor</html>"));

    let (status, body) =
        http(port, "POST", "/v1/sessions", Some(&serde_json::json!({"participant_label": "p1", "problem_id": "sum"})));
    assert_eq!(status, 201);
    assert!(!body.contains("reference") && !body.contains("none"));
    let session: Value = serde_json::from_str(&body).unwrap();
    let sid = session["session_id"].as_str().unwrap().to_string();
    let mut shown = None;
    for label in session["labels"].as_array().unwrap() {
        let req = serde_json::json!({"session_id": sid, "arm_label": label, "buffer": "read ", "cursor": 5});
        let (status, body) = http(port, "POST", "/v1/suggest", Some(&req));
        assert_eq!(status, 200);
        let resp: Value = serde_json::from_str(&body).unwrap();
        if let Some(id) = resp["suggestion_id"].as_str() {
            assert_eq!(resp["text"], "a b\ne");
            shown = Some(id.to_string());
        }
    }
    let shown = shown.expect("the reference arm suggests");
    let batch = serde_json::json!({"session_id": sid, "events": [
        {"seq": 1, "timestamp": 10, "kind": "ACCEPTED", "payload": {"suggestion_id": shown}},
        {"seq": 2, "timestamp": 11, "kind": "CHARS_DELETED", "payload": {"position": 6, "count": 2}},
    ]});
    assert_eq!(http(port, "POST", "/v1/events", Some(&batch)).0, 200);
    drop(server);

    let o = run(&["report", "--log-path", path_str(&log), "--participant", "p1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    let arm = &report["arms"]["reference-next-5"];
    assert_eq!(arm["suggestions_shown"], 1);
    assert_eq!(arm["accepted"], 1);
    assert_eq!(arm["deleted_chars"], 2);
    assert_eq!(report["n_sessions"], 1);
    assert!(dir.path().join("logs/config.resolved.toml").exists());
}

#[test]
fn invalid_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "sed = 3\n").unwrap();
    let o = run(&["--config", path_str(&config), "report", "--log-path", "x"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sed"));
}

#[test]
fn report_on_missing_log_is_a_runtime_error() {
    let o = run(&["report", "--log-path", "/nonexistent/events.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
}
