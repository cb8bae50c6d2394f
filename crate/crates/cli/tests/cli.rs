use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/mini").canonicalize().unwrap()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_compass-audit")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Writes a config into `dir` pointing at fixture data, with `patch` merged on top.
fn config_with(dir: &Path, base: &str, patch: Value) -> PathBuf {
    let mut config: Value = serde_json::from_str(&fs::read_to_string(fixtures().join(base)).unwrap()).unwrap();
    let f = fixtures();
    config["prompts"] = json!(f.join("prompts.jsonl"));
    config["responses"] = json!([f.join("responses.jsonl")]);
    for spec in config["backends"].as_array_mut().unwrap() {
        if spec.get("cache_path").is_some() {
            spec["cache_path"] = json!(f.join("cache"));
        }
    }
    config["output_dir"] = json!(dir.join("out"));
    for (k, v) in patch.as_object().unwrap() {
        config[k] = v.clone();
    }
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

#[test]
fn replay_scoring_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("scores.jsonl");
    let res = run(&["score", "--config", s(&fixtures().join("replay.json")), "--out", s(&out)]);
    assert!(res.status.success(), "{}", stderr(&res));
    assert_eq!(fs::read_to_string(&out).unwrap(), fs::read_to_string(fixtures().join("golden/scores.jsonl")).unwrap());
}

#[test]
fn cache_miss_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let extra = dir.path().join("extra.jsonl");
    fs::write(
        &extra,
        r#"{"prompt_id":"p01","model_id":"newcomer","text":"An answer nobody has scored yet.","collected_at":"2025-03-01T00:00:00Z"}
"#,
    )
    .unwrap();
    let config = config_with(dir.path(), "replay.json", json!({}));
    let res = run(&["score", "--config", s(&config), "--in", s(&extra), "--out", s(&dir.path().join("s.jsonl"))]);
    assert_eq!(res.status.code(), Some(3), "{}", stderr(&res));
    let err = stderr(&res);
    assert!(err.contains("cache miss"), "{err}");
    assert!(err.contains("key "), "{err}");
    assert!(err.contains("p01") && err.contains("newcomer"), "{err}");
}

#[test]
fn refusal_only_corpus_scores_topicality_alone() {
    let dir = tempfile::tempdir().unwrap();
    let responses = dir.path().join("refusals.jsonl");
    fs::write(
        &responses,
        [
            r#"{"prompt_id":"p01","model_id":"quiet","text":"I cannot discuss this topic.","collected_at":"2025-03-01T00:00:00Z"}"#,
            r#"{"prompt_id":"p02","model_id":"quiet","text":"","refusal":"api_error","collected_at":"2025-03-01T00:00:00Z"}"#,
        ]
        .join("\n"),
    )
    .unwrap();
    let config = config_with(dir.path(), "reference.json", json!({"responses": [responses]}));
    let scores = dir.path().join("scores.jsonl");
    let res = run(&["score", "--config", s(&config), "--out", s(&scores)]);
    assert!(res.status.success(), "{}", stderr(&res));
    let lines: Vec<Value> =
        fs::read_to_string(&scores).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["refusal"], json!("flat_refusal"));
    assert_eq!(lines[1]["refusal"], json!("api_error"));
    assert_eq!(lines[1]["T"], json!(0.0));
    for line in &lines {
        for key in ["A", "B", "P", "S", "omega", "composite"] {
            assert!(line[key].is_null(), "{key} in {line}");
        }
    }
    // Summaries still come out; composite statistics are null.
    let summaries = dir.path().join("summaries.json");
    let res = run(&["aggregate", "--config", s(&config), "--in", s(&scores), "--out", s(&summaries)]);
    assert!(res.status.success(), "{}", stderr(&res));
    let bundle: Value = serde_json::from_str(&fs::read_to_string(&summaries).unwrap()).unwrap();
    assert!(bundle["models"][0]["composite"].is_null());
    assert_eq!(bundle["models"][0]["answered"], json!(0));
}

#[test]
fn empty_scores_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("scores.jsonl");
    fs::write(&scores, "").unwrap();
    let res = run(&["aggregate", "--config", s(&fixtures().join("replay.json")), "--in", s(&scores), "--out", s(&dir.path().join("x.json"))]);
    assert_eq!(res.status.code(), Some(1));
    assert!(stderr(&res).contains("no scores"));
}

#[test]
fn report_without_summaries_fails() {
    let dir = tempfile::tempdir().unwrap();
    let res = run(&[
        "report",
        "--config",
        s(&fixtures().join("replay.json")),
        "--in",
        s(&dir.path().join("missing.json")),
        "--scores",
        s(&fixtures().join("golden/scores.jsonl")),
        "--out",
        s(&dir.path().join("report")),
    ]);
    assert_eq!(res.status.code(), Some(1));
    assert!(stderr(&res).contains("missing.json"));
    assert!(!dir.path().join("report").exists());
}

#[test]
fn non_default_weights_are_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixtures().join("replay.json");
    let scores = dir.path().join("scores.jsonl");
    let summaries = dir.path().join("summaries.json");
    let report = dir.path().join("report");
    let weights = "0.25,0.25,0.25,0.25";
    for args in [
        vec!["score", "--config", s(&config), "--weights", weights, "--out", s(&scores)],
        vec!["aggregate", "--config", s(&config), "--weights", weights, "--in", s(&scores), "--out", s(&summaries)],
        vec!["report", "--config", s(&config), "--in", s(&summaries), "--scores", s(&scores), "--out", s(&report)],
    ] {
        let res = run(&args);
        assert!(res.status.success(), "{args:?}: {}", stderr(&res));
    }
    let md = fs::read_to_string(report.join("summary.md")).unwrap();
    assert!(md.contains("Non-default weights"), "{md}");
    assert_ne!(fs::read_to_string(&scores).unwrap(), fs::read_to_string(fixtures().join("golden/scores.jsonl")).unwrap());
}

#[test]
fn bad_weights_are_a_config_error() {
    let res = run(&["score", "--config", s(&fixtures().join("replay.json")), "--weights", "0.5,0.5,0.5,0"]);
    assert_eq!(res.status.code(), Some(2), "{}", stderr(&res));
}

#[test]
fn corpus_violation_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let extra = dir.path().join("dup.jsonl");
    let first = fs::read_to_string(fixtures().join("responses.jsonl")).unwrap().lines().next().unwrap().to_string();
    fs::write(&extra, first + "\n").unwrap();
    let res = run(&["validate", "--config", s(&fixtures().join("replay.json")), "--in", s(&extra)]);
    assert_eq!(res.status.code(), Some(1));
    let out = stdout(&res);
    assert!(out.contains("calibration: 12/12"), "{out}");
    assert!(out.contains("violation"), "{out}");
}

#[test]
fn validate_passes_on_the_fixture() {
    let res = run(&["validate", "--config", s(&fixtures().join("replay.json"))]);
    assert!(res.status.success(), "{}{}", stdout(&res), stderr(&res));
    let out = stdout(&res);
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS")).count(), 12);
    assert!(out.contains("0 violations"));
}

#[test]
fn unreachable_remote_backend_names_the_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let endpoint = format!("http://{}/classify", listener.local_addr().unwrap());
    drop(listener);
    let prompts = dir.path().join("prompts.jsonl");
    fs::write(&prompts, r#"{"prompt_id":"q1","text":"Is tax policy fair?","category":"subjective"}"#).unwrap();
    let responses = dir.path().join("responses.jsonl");
    fs::write(&responses, r#"{"prompt_id":"q1","model_id":"m","text":"Taxes should be lower.","collected_at":"2025-03-01T00:00:00Z"}"#)
        .unwrap();
    let config = config_with(
        dir.path(),
        "reference.json",
        json!({"prompts": prompts, "responses": [responses], "parallelism": 1}),
    );
    let mut value: Value = serde_json::from_str(&fs::read_to_string(&config).unwrap()).unwrap();
    value["backends"][0] = json!({"kind": "remote", "role": "partisanship", "endpoint_url": endpoint});
    fs::write(&config, value.to_string()).unwrap();
    let res = run(&["score", "--config", s(&config), "--out", s(&dir.path().join("s.jsonl"))]);
    assert_eq!(res.status.code(), Some(3), "{}", stderr(&res));
    assert!(stderr(&res).contains(&endpoint), "{}", stderr(&res));
}

#[test]
fn collect_without_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = config_with(
        dir.path(),
        "replay.json",
        json!({"providers": [{"model_id": "m", "base_url": "http://127.0.0.1:9", "api_key_env": "CLI_TEST_KEY_NEVER_SET"}]}),
    );
    let out = dir.path().join("responses.jsonl");
    let res = run(&["collect", "--config", s(&config), "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(stderr(&res).contains("CLI_TEST_KEY_NEVER_SET"));
    assert!(!out.exists());
}

#[test]
fn collect_is_idempotent_against_a_live_server() {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let addr = server.server_addr().to_ip().unwrap();
    let handle = std::thread::spawn(move || {
        for _ in 0..3 {
            let request = server.recv().unwrap();
            let body = json!({"id": "r", "choices": [{"message": {"content": "A plain factual answer."}}]});
            request.respond(tiny_http::Response::from_string(body.to_string())).unwrap();
        }
    });
    let dir = tempfile::tempdir().unwrap();
    let prompts = dir.path().join("prompts.jsonl");
    let lines: Vec<String> = (1..=3)
        .map(|i| json!({"prompt_id": format!("q{i}"), "text": format!("Question {i}?"), "category": "objective"}).to_string())
        .collect();
    fs::write(&prompts, lines.join("\n")).unwrap();
    let config = config_with(
        dir.path(),
        "replay.json",
        json!({
            "prompts": prompts,
            "providers": [{"model_id": "local", "base_url": format!("http://{addr}"), "api_key_env": "PATH", "requests_per_minute": 6000}]
        }),
    );
    let out = dir.path().join("responses.jsonl");
    let res = run(&["collect", "--config", s(&config), "--out", s(&out)]);
    assert!(res.status.success(), "{}", stderr(&res));
    handle.join().unwrap();
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 3);
    // The server is gone: a second run must not need it.
    let res = run(&["collect", "--config", s(&config), "--out", s(&out)]);
    assert!(res.status.success(), "{}", stderr(&res));
    assert!(stdout(&res).contains("wrote 0, skipped 3"), "{}", stdout(&res));
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 3);
}
