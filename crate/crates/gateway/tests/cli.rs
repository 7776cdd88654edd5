use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use axum::body::Body;
use axum::http::Request;
use moods_core::platform::{Platform, PlatformConfig};
use moods_gateway::api::{router, system_clock, AppState};
use moods_gateway::config::GatewayConfig;
use serde_json::Value;
use tower::ServiceExt;

fn moods(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_moods")).args(args).env_remove("MOODS_DATA_DIR").output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn small_cohort(root: &Path) -> std::path::PathBuf {
    let cfg = root.join("sim.toml");
    std::fs::write(&cfg, "seed = 5\nn_participants = 8\nn_weeks = 14\n").unwrap();
    let data = root.join("data");
    let stdout = ok(&moods(&["simulate", "--config", cfg.to_str().unwrap(), "--out", data.to_str().unwrap()]));
    assert!(stdout.contains("simulated 8 participants"), "{stdout}");
    data
}

#[test]
fn unknown_subcommand_fails_with_usage() {
    let out = moods(&["frobnicate"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = moods(&["analyze", "forecast", "--in", "."]);
    assert!(!out.status.success());
}

#[test]
fn analyze_documents_match_the_api() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_cohort(tmp.path());
    assert!(data.join("truth.json").is_file());

    let report = tmp.path().join("reports/trends.json");
    ok(&moods(&["analyze", "trends", "--in", data.to_str().unwrap(), "--out", report.to_str().unwrap(), "--metric", "frequency"]));
    let cli: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(cli["analysis"], "trends");
    assert_eq!(cli["params"]["metric"], "frequency");

    let stdout = ok(&Command::new(env!("CARGO_BIN_EXE_moods"))
        .args(["analyze", "retention"])
        .env("MOODS_DATA_DIR", &data)
        .output()
        .unwrap());
    let retention: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(retention["participants"], 8);

    let cfg = GatewayConfig { analyst_tokens: vec!["a".into()], ..Default::default() };
    let platform = Arc::new(Platform::open(&data, PlatformConfig::default()).unwrap());
    let app = router(AppState::new(platform, &cfg, system_clock()).unwrap());
    let rt = tokio::runtime::Runtime::new().unwrap();
    let fetch = |uri: &str| {
        let req = Request::get(uri).header("authorization", "Bearer a").body(Body::empty()).unwrap();
        rt.block_on(async {
            let resp = app.clone().oneshot(req).await.unwrap();
            let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
            serde_json::from_slice::<Value>(&bytes).unwrap()
        })
    };
    assert_eq!(fetch("/v1/reports/trends?metric=frequency"), cli);
    assert_eq!(fetch("/v1/reports/retention"), retention);

    let lmm_cli: Value = serde_json::from_str(&ok(&moods(&["analyze", "lmm", "--in", data.to_str().unwrap()]))).unwrap();
    assert_eq!(fetch("/v1/reports/lmm"), lmm_cli);
}

#[test]
fn viz_build_writes_sixteen_charts_in_week_fourteen() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_cohort(tmp.path());
    for (week, expected) in [(1, 2), (14, 16)] {
        let out = tmp.path().join(format!("week-{week}"));
        let stdout = ok(&moods(&[
            "viz", "build", "--participant", "P001", "--week", &week.to_string(), "--out", out.to_str().unwrap(), "--data",
            data.to_str().unwrap(),
        ]));
        assert!(stdout.contains(&format!("wrote {expected} charts")), "{stdout}");
        let manifest: Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
        let entries = manifest["charts"].as_array().unwrap();
        assert_eq!(entries.len(), expected);
        for e in entries {
            assert!(out.join(e["file"].as_str().unwrap()).is_file());
        }
        assert_eq!(std::fs::read_dir(&out).unwrap().count(), expected + 1);
    }
    let missing = moods(&["viz", "build", "--participant", "nobody", "--week", "1", "--out", "x", "--data", data.to_str().unwrap()]);
    assert!(!missing.status.success());
}

#[test]
fn calibrated_simulation_trends_down() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&moods(&["simulate", "--out", data.to_str().unwrap()]));
    for metric in ["intensity", "frequency"] {
        let doc: Value =
            serde_json::from_str(&ok(&moods(&["analyze", "trends", "--in", data.to_str().unwrap(), "--metric", metric]))).unwrap();
        let r = &doc["result"]["report"];
        assert!(r["slope"].as_f64().unwrap() < 0.0, "{metric}: {r}");
        assert!(r["p_value"].as_f64().unwrap() < 0.05, "{metric}: {r}");
    }
}

#[test]
fn replay_study_reports_matching_state() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("sim.toml");
    std::fs::write(&cfg, "seed = 9\nn_participants = 5\nn_weeks = 4\n").unwrap();
    let out = tmp.path().join("outcome.json");
    let stdout = ok(&moods(&["replay-study", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]));
    assert!(stdout.contains("state hash matches"), "{stdout}");
    let outcome: Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(outcome["participants"], 5);
    assert_eq!(outcome["simulated_hash"], outcome["reloaded_hash"]);

    let data = tmp.path().join("kept");
    ok(&moods(&["replay-study", "--config", cfg.to_str().unwrap(), "--data", data.to_str().unwrap()]));
    assert!(data.join("P001/profile.json").is_file());
    // The target must be empty.
    assert!(!moods(&["replay-study", "--config", cfg.to_str().unwrap(), "--data", data.to_str().unwrap()]).status.success());
}

#[test]
fn serve_answers_over_tcp() {
    use std::io::{BufRead, BufReader, Read, Write};

    let tmp = tempfile::tempdir().unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_moods"))
        .args(["serve", "--port", "0"])
        .env("MOODS_DATA_DIR", tmp.path())
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on http://").expect("listening line").to_string();

    let mut stream = std::net::TcpStream::connect(&addr).unwrap();
    stream.write_all(b"GET /v1/health HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").unwrap();
    let mut resp = String::new();
    stream.read_to_string(&mut resp).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    assert!(resp.contains(r#"{"status":"ok"}"#), "{resp}");
}
