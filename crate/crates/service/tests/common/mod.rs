#![allow(dead_code)]

use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};
use structpolicy::restructure::{fixtures, LlmBackend, ReplayBackend, ReplayFile};
use structpolicy::sim::{generate_track, run_rollout, ScriptedDriver, StartConfig, TRACK_TILES};
use structpolicy::trainer::{DemoSource, Demonstration};
use structpolicy_service::{app_state_with, serve_on, AppState, ServiceConfig};

pub struct Server {
    pub base: String,
    pub state: Arc<AppState>,
    pub client: reqwest::Client,
    _root: tempfile::TempDir,
}

pub fn replay_fixtures() -> Arc<dyn LlmBackend> {
    let entries = fixtures::ALL.iter().flat_map(|j| serde_json::from_str::<ReplayFile>(j).unwrap().entries);
    Arc::new(ReplayBackend::new(entries))
}

pub async fn start(backend: Arc<dyn LlmBackend>) -> Server {
    start_with(backend, |_| {}).await
}

pub async fn start_with(backend: Arc<dyn LlmBackend>, tweak: impl FnOnce(&mut ServiceConfig)) -> Server {
    let root = tempfile::tempdir().unwrap();
    let mut config = ServiceConfig { session_root: root.path().to_path_buf(), port: 0, ..ServiceConfig::default() };
    tweak(&mut config);
    let state = app_state_with(config, backend);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(serve_on(listener, state.clone()));
    Server { base: format!("http://{addr}/api/v1"), state, client: reqwest::Client::new(), _root: root }
}

/// Training short enough for tests.
pub fn quick_training() -> Value {
    json!({
        "learning_rate": 0.001, "batch_size": 32, "total_batches": 20,
        "beta1": 0.9, "beta2": 0.999, "epsilon": 1e-8, "seed": 0
    })
}

pub fn scripted_frames(steps: u64) -> Value {
    let track = generate_track(0, TRACK_TILES).unwrap();
    let rec = run_rollout(&ScriptedDriver::default(), &track, &StartConfig::nominal(), None, steps).unwrap();
    let demo = Demonstration::from_rollout("x", DemoSource::Human, &rec);
    json!({ "frames": demo.frames, "track_seed": 0 })
}

impl Server {
    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    pub async fn call(&self, method: reqwest::Method, path: &str, body: Option<Value>) -> (u16, Value) {
        let mut req = self.client.request(method, self.url(path));
        if let Some(b) = body {
            req = req.json(&b);
        }
        let resp = req.send().await.unwrap();
        let status = resp.status().as_u16();
        let text = resp.text().await.unwrap();
        (status, serde_json::from_str(&text).unwrap_or(Value::String(text)))
    }

    pub async fn get(&self, path: &str) -> (u16, Value) {
        self.call(reqwest::Method::GET, path, None).await
    }

    pub async fn post(&self, path: &str, body: Value) -> (u16, Value) {
        self.call(reqwest::Method::POST, path, Some(body)).await
    }

    pub async fn create(&self, id: &str, mode: &str) -> Value {
        let (s, v) = self.post("/sessions", json!({ "id": id, "mode": mode, "train_config": quick_training() })).await;
        assert_eq!(s, 201, "{v}");
        v
    }

    /// Polls a job until it leaves the running state.
    pub async fn wait_job(&self, session: &str, job: &str) -> Value {
        for _ in 0..600 {
            let (s, v) = self.get(&format!("/sessions/{session}/jobs/{job}")).await;
            assert_eq!(s, 200, "{v}");
            if v["state"] != "running" {
                return v;
            }
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
        panic!("job {job} did not finish");
    }
}
