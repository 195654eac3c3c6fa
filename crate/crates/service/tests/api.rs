mod common;

use std::sync::Arc;

use common::{replay_fixtures, scripted_frames, start, Server};
use reqwest::Method;
use serde_json::{json, Value};
use structpolicy::restructure::ScriptedBackend;
use structpolicy_service::{app_state_with, ServiceConfig};

async fn with_demo(srv: &Server, id: &str, mode: &str) -> Value {
    srv.create(id, mode).await;
    let (s, v) = srv.post(&format!("/sessions/{id}/demos"), scripted_frames(120)).await;
    assert_eq!(s, 201, "{v}");
    v
}

#[tokio::test(flavor = "multi_thread")]
async fn create_list_and_fetch() {
    let srv = start(replay_fixtures()).await;
    let (s, v) = srv.get("/health").await;
    assert_eq!((s, v["status"].as_str()), (200, Some("ok")));

    let v = srv.create("alpha", "structured").await;
    assert_eq!((v["version"].as_u64(), v["tests"].as_u64(), v["required_tests"].as_u64()), (Some(1), Some(0), Some(4)));
    let (s, _) = srv.post("/sessions", json!({ "id": "alpha" })).await;
    assert_eq!(s, 409);
    let (s, v) = srv.post("/sessions", json!({ "mode": "dense" })).await;
    assert_eq!(s, 201);
    let generated = v["id"].as_str().unwrap().to_string();

    let (_, v) = srv.get("/sessions").await;
    let ids: Vec<&str> = v["sessions"].as_array().unwrap().iter().map(|x| x.as_str().unwrap()).collect();
    assert!(ids.contains(&"alpha") && ids.contains(&generated.as_str()));
    let (s, v) = srv.get("/sessions/alpha").await;
    assert_eq!((s, v["mode"].as_str()), (200, Some("structured")));
}

#[tokio::test(flavor = "multi_thread")]
async fn errors_use_the_envelope() {
    let srv = start(replay_fixtures()).await;
    let (s, v) = srv.get("/sessions/nobody").await;
    assert_eq!((s, v["error"]["rule"].as_str()), (404, Some("unknown-id")));
    let (s, v) = srv.get("/sessions/..%2Fetc").await;
    assert_eq!((s, v["error"]["rule"].as_str()), (400, Some("bad-request")));
    let resp = srv.client.post(srv.url("/sessions")).header("content-type", "application/json").body("{oops").send().await.unwrap();
    assert_eq!(resp.status().as_u16(), 400);
    let v: Value = resp.json().await.unwrap();
    assert_eq!(v["error"]["rule"], "bad-request");
    let (s, v) = srv.get("/nowhere").await;
    assert_eq!((s, v["error"]["rule"].as_str()), (404, Some("no-route")));
}

#[tokio::test(flavor = "multi_thread")]
async fn training_without_demos_is_an_empty_dataset_error() {
    let srv = start(replay_fixtures()).await;
    srv.create("e", "structured").await;
    let (s, v) = srv.post("/sessions/e/train", json!({})).await;
    assert_eq!(s, 422, "{v}");
    assert_eq!(v["error"]["rule"], "empty-dataset");
    assert!(v["error"]["message"].as_str().unwrap().contains("no frames"));
}

#[tokio::test(flavor = "multi_thread")]
async fn dense_sessions_have_no_structured_summary() {
    let srv = start(replay_fixtures()).await;
    srv.create("d", "dense").await;
    let (s, v) = srv.get("/sessions/d/summary").await;
    assert_eq!(s, 200);
    assert_eq!(v["structured"], false);
    assert!(v["summary"].is_null());
    assert!(v["message"].as_str().unwrap().starts_with("no structured summary"));

    let (s, v) = srv.post("/sessions/d/instructions", json!({ "text": "stay on the road" })).await;
    assert_eq!((s, v["error"]["rule"].as_str()), (400, Some("mode")));

    srv.create("st", "structured").await;
    let (_, v) = srv.get("/sessions/st/summary").await;
    assert_eq!(v["structured"], true);
    assert!(!v["summary"].as_str().unwrap().is_empty());
    assert!(v["source"].as_str().unwrap().contains("action"));
}

#[tokio::test(flavor = "multi_thread")]
async fn submit_is_gated_on_four_tests() {
    let srv = start(replay_fixtures()).await;
    with_demo(&srv, "g", "structured").await;
    for n in 1..=3 {
        let (s, v) = srv.post("/sessions/g/rollouts", json!({ "cutoff_steps": 50 })).await;
        assert_eq!((s, v["tests"].as_u64()), (201, Some(n)), "{v}");
    }
    let (s, v) = srv.post("/sessions/g/submit", json!({})).await;
    assert_eq!(s, 409);
    assert_eq!(v["error"]["rule"], "submit-gate");
    assert_eq!(v["error"]["detail"], json!({ "tests": 3, "required": 4 }));
    assert!(v["error"]["message"].as_str().unwrap().contains("have 3"));

    // An empty body means a default rollout.
    let resp = srv.client.post(srv.url("/sessions/g/rollouts")).send().await.unwrap();
    assert_eq!(resp.status().as_u16(), 201);
    let (s, v) = srv.post("/sessions/g/submit", json!({})).await;
    assert_eq!((s, v["submitted"].as_bool()), (200, Some(true)), "{v}");

    let (s, v) = srv.post("/sessions/g/rollouts", json!({})).await;
    assert_eq!((s, v["error"]["rule"].as_str()), (409, Some("locked")));
    let (s, v) = srv.post("/sessions/g/demos", scripted_frames(20)).await;
    assert_eq!((s, v["error"]["rule"].as_str()), (409, Some("locked")));
}

#[tokio::test(flavor = "multi_thread")]
async fn rollout_frames_are_contiguous() {
    let srv = start(replay_fixtures()).await;
    with_demo(&srv, "r", "structured").await;
    let (s, v) = srv
        .post("/sessions/r/rollouts", json!({ "cutoff_steps": 80, "frames": true, "start": { "tile": 5, "lateral_offset": 0.0, "heading_offset": 0.0, "speed": 10.0 } }))
        .await;
    assert_eq!(s, 201, "{v}");
    let frames = v["frames"].as_array().unwrap();
    assert_eq!(frames.len() as u64, v["steps"].as_u64().unwrap());
    for (i, f) in frames.iter().enumerate() {
        assert_eq!(f["step"].as_u64(), Some(i as u64 + 1));
        assert_eq!(f["mode"], "rollout");
        assert_eq!(f["nearby"].as_array().unwrap().len(), 12);
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn failed_mutations_change_nothing() {
    let srv = start(replay_fixtures()).await;
    let v = with_demo(&srv, "a", "structured").await;
    let did = v["result"]["id"].as_str().unwrap().to_string();
    let before = srv.get("/sessions/a").await.1;
    let log_before = srv.get("/sessions/a/log").await.1;

    // Only demo: turning it off would leave nothing to train on.
    let (s, v) = srv.call(Method::PATCH, &format!("/sessions/a/demos/{did}"), Some(json!({ "used": false }))).await;
    assert_eq!((s, v["error"]["rule"].as_str()), (422, Some("empty-dataset")));
    let (s, _) = srv.call(Method::DELETE, "/sessions/a/demos/d99", None).await;
    assert_eq!(s, 404);
    // No replay entry for this text.
    let (s, v) = srv.post("/sessions/a/instructions", json!({ "text": "please drive perfectly" })).await;
    assert_eq!((s, v["error"]["rule"].as_str()), (502, Some("restructure-failed")));
    let (s, v) = srv.post("/sessions/a/demos", json!({ "frames": [{ "obs": [0.0, 1.0], "action": [0.0, 0.0, 0.0] }] })).await;
    assert_eq!((s, v["error"]["rule"].as_str()), (400, Some("schema")));

    assert_eq!(srv.get("/sessions/a").await.1, before);
    assert_eq!(srv.get("/sessions/a/log").await.1, log_before);
    // And on disk.
    let config = ServiceConfig { session_root: srv.state.config.session_root.clone(), ..ServiceConfig::default() };
    let fresh = app_state_with(config, replay_fixtures());
    assert_eq!(serde_json::to_value(&*fresh.get("a").unwrap().view()).unwrap(), before);
}

#[tokio::test(flavor = "multi_thread")]
async fn restructure_failure_returns_every_transcript() {
    let srv = start(Arc::new(ScriptedBackend::new(["", "not pgdl", "still not"]))).await;
    srv.create("f", "structured").await;
    let (s, v) = srv.post("/sessions/f/instructions", json!({ "text": "stay on the road" })).await;
    assert_eq!(s, 502);
    let err = &v["error"];
    assert_eq!(err["rule"], "restructure-failed");
    let t = err["transcripts"].as_array().unwrap();
    assert_eq!(t.len(), 3);
    assert_eq!(t[1]["response"], "not pgdl");
    assert_eq!(err["detail"]["errors"].as_array().unwrap().len(), 3);
    let (_, v) = srv.get("/sessions/f").await;
    assert_eq!((v["version"].as_u64(), v["instructions"].as_array().unwrap().len()), (Some(1), 0));
}

#[tokio::test(flavor = "multi_thread")]
async fn instructions_restructure_and_toggle_through_the_cache() {
    let srv = start(replay_fixtures()).await;
    with_demo(&srv, "i", "structured").await;
    let h0 = srv.get("/sessions/i").await.1["structure_hash"].clone();

    let (s, v) = srv.post("/sessions/i/instructions", json!({ "text": "stay on the road", "created_at": 1_700_000_000u64 })).await;
    assert_eq!(s, 201, "{v}");
    let iid = v["result"]["id"].as_str().unwrap().to_string();
    let h1 = v["session"]["structure_hash"].clone();
    assert_ne!(h0, h1);
    assert_eq!(v["session"]["instructions"][0]["text"], "stay on the road");

    let (s, _) = srv.call(Method::PATCH, &format!("/sessions/i/instructions/{iid}"), Some(json!({ "used": false }))).await;
    assert_eq!(s, 200);
    let (s, v) = srv.call(Method::PATCH, &format!("/sessions/i/instructions/{iid}"), Some(json!({ "used": true }))).await;
    assert_eq!(s, 200);
    assert_eq!(v["session"]["structure_hash"], h1);
    let (_, t) = srv.get("/sessions/i/transcripts").await;
    assert_eq!(t["transcripts"].as_array().unwrap().len(), 2, "toggling back reuses the cached structure");

    let (s, v) = srv.call(Method::DELETE, &format!("/sessions/i/instructions/{iid}"), None).await;
    assert_eq!(s, 200, "{v}");
    assert!(v["session"]["instructions"].as_array().unwrap().is_empty());
}

#[tokio::test(flavor = "multi_thread")]
async fn training_runs_as_a_job() {
    let srv = start(replay_fixtures()).await;
    with_demo(&srv, "t", "structured").await;
    let before = srv.get("/sessions/t").await.1;

    let (s, job) = srv.post("/sessions/t/train", json!({})).await;
    assert_eq!((s, job["kind"].as_str()), (202, Some("train")));
    let done = srv.wait_job("t", job["id"].as_str().unwrap()).await;
    assert_eq!(done["state"], "done", "{done}");
    assert_eq!(done["batch"].as_u64(), Some(20));
    let after = srv.get("/sessions/t").await.1;
    assert_eq!(after["version"].as_u64(), before["version"].as_u64().map(|v| v + 1));
    assert_eq!(done["version"], after["version"]);
    assert_eq!(after["trial"].as_u64(), before["trial"].as_u64().map(|v| v + 1));
    assert_eq!(after["last_train"]["batches"].as_u64(), Some(20));

    let (s, job) = srv.post("/sessions/t/demos?wait=false", scripted_frames(60)).await;
    assert_eq!(s, 202);
    let done = srv.wait_job("t", job["id"].as_str().unwrap()).await;
    assert_eq!(done["state"], "done");
    assert_eq!(srv.get("/sessions/t/demos").await.1["demos"].as_array().unwrap().len(), 2);
    let (_, jobs) = srv.get("/sessions/t/jobs").await;
    assert_eq!(jobs["jobs"].as_array().unwrap().len(), 2);
}

#[tokio::test(flavor = "multi_thread")]
async fn cancelled_training_keeps_the_old_policy() {
    let srv = start(replay_fixtures()).await;
    srv.create("c", "structured").await;
    srv.post("/sessions/c/demos", scripted_frames(100)).await;
    // Make the next run long enough to cancel.
    srv.state
        .get("c")
        .unwrap()
        .mutate(|a| {
            a.train_config.total_batches = 1_000_000;
            Ok(())
        })
        .await
        .unwrap();
    let before = srv.get("/sessions/c").await.1;
    let (_, job) = srv.post("/sessions/c/train", json!({})).await;
    let jid = job["id"].as_str().unwrap();
    for _ in 0..1000 {
        let (_, j) = srv.get(&format!("/sessions/c/jobs/{jid}")).await;
        if j["batch"].as_u64().unwrap_or(0) > 0 {
            break;
        }
        tokio::time::sleep(std::time::Duration::from_millis(5)).await;
    }
    let (s, _) = srv.call(Method::DELETE, &format!("/sessions/c/jobs/{jid}"), None).await;
    assert_eq!(s, 202);
    let done = srv.wait_job("c", jid).await;
    assert_eq!(done["state"], "cancelled");
    assert_eq!(srv.get("/sessions/c").await.1, before);
}

#[tokio::test(flavor = "multi_thread")]
async fn battery_appends_a_history_row() {
    let srv = start(replay_fixtures()).await;
    with_demo(&srv, "b", "dense").await;
    let spec = json!({ "spec": {
        "seen_track": 0, "unseen_tracks": [1001], "noise_levels": [1], "noise_seed": 7,
        "cutoff_steps": 40, "edge_cases": false
    }});
    let (s, v) = srv.post("/sessions/b/battery", spec).await;
    assert_eq!(s, 201, "{v}");
    let cells = v["row"]["cells"].as_array().unwrap().len();
    assert_eq!(cells, v["columns"].as_array().unwrap().len());
    assert_eq!(cells, 47 + 1);
    let (_, view) = srv.get("/sessions/b").await;
    assert_eq!(view["battery_history"].as_array().unwrap().len(), 1);
    let (_, eval) = srv.get("/sessions/b/eval").await;
    assert_eq!(eval["rows"].as_array().unwrap().len(), 1);
}

#[tokio::test(flavor = "multi_thread")]
async fn sessions_survive_a_restart() {
    let srv = start(replay_fixtures()).await;
    with_demo(&srv, "p", "structured").await;
    srv.post("/sessions/p/instructions", json!({ "text": "stay on the road", "created_at": 5 })).await;
    srv.post("/sessions/p/rollouts", json!({ "cutoff_steps": 30 })).await;
    let view = srv.get("/sessions/p").await.1;

    let config = ServiceConfig { session_root: srv.state.config.session_root.clone(), ..ServiceConfig::default() };
    let fresh = app_state_with(config, replay_fixtures());
    let h = fresh.get("p").unwrap();
    let (s, loaded) = srv.post("/sessions/p/load", json!({})).await;
    assert_eq!((s, &loaded), (200, &view));
    assert_eq!(serde_json::to_value(&*h.view()).unwrap(), view);
    assert_eq!(fresh.list(), vec!["p".to_string()]);
}
