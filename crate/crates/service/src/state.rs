//! Open sessions, their single-writer queues and read snapshots.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use arc_swap::ArcSwap;
use axum::http::StatusCode;
use serde::{Deserialize, Serialize};
use structpolicy::restructure::{Instruction, LlmBackend, RestructureConfig};
use structpolicy::session::{AgentInstance, AgentMode, EventKind, SessionError, SUBMIT_MIN_TESTS};
use structpolicy::sim::{generate_track, Track, TRACK_TILES};
use structpolicy::trainer::DemoMeta;

use crate::config::ServiceConfig;
use crate::error::ApiError;

pub struct AppState {
    pub config: ServiceConfig,
    pub backend: Arc<dyn LlmBackend>,
    pub restructure: RestructureConfig,
    sessions: RwLock<HashMap<String, Arc<SessionHandle>>>,
}

impl AppState {
    pub fn new(config: ServiceConfig, backend: Arc<dyn LlmBackend>) -> Self {
        let restructure = RestructureConfig {
            model: config.llm.model.clone(),
            temperature: config.llm.temperature,
            max_retries: config.llm.max_retries,
            ..RestructureConfig::default()
        };
        Self { config, backend, restructure, sessions: RwLock::default() }
    }

    fn dir(&self, id: &str) -> PathBuf {
        self.config.session_root.join(id)
    }

    pub fn create(&self, agent: AgentInstance) -> Result<Arc<SessionHandle>, ApiError> {
        valid_id(&agent.id)?;
        let dir = self.dir(&agent.id);
        let mut sessions = self.sessions.write().expect("session table poisoned");
        if sessions.contains_key(&agent.id) || dir.join("agent.json").exists() {
            return Err(ApiError::new(StatusCode::CONFLICT, "session-exists", format!("session `{}` exists", agent.id)));
        }
        agent.persist(&dir)?;
        let handle = Arc::new(SessionHandle::new(agent, dir)?);
        sessions.insert(handle.id.clone(), handle.clone());
        Ok(handle)
    }

    /// Returns an open session, loading it from disk on first use.
    pub fn get(&self, id: &str) -> Result<Arc<SessionHandle>, ApiError> {
        if let Some(h) = self.sessions.read().expect("session table poisoned").get(id) {
            return Ok(h.clone());
        }
        valid_id(id)?;
        let mut sessions = self.sessions.write().expect("session table poisoned");
        if let Some(h) = sessions.get(id) {
            return Ok(h.clone());
        }
        let dir = self.dir(id);
        if !dir.join("agent.json").exists() {
            return Err(ApiError::not_found("session", id));
        }
        let agent = AgentInstance::load(&dir)?;
        let handle = Arc::new(SessionHandle::new(agent, dir)?);
        sessions.insert(id.to_string(), handle.clone());
        Ok(handle)
    }

    /// Ids of open sessions and sessions on disk.
    pub fn list(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().expect("session table poisoned").keys().cloned().collect();
        if let Ok(entries) = std::fs::read_dir(&self.config.session_root) {
            for e in entries.flatten() {
                let name = e.file_name().to_string_lossy().into_owned();
                if e.path().join("agent.json").exists() && !ids.contains(&name) {
                    ids.push(name);
                }
            }
        }
        ids.sort();
        ids
    }
}

fn valid_id(id: &str) -> Result<(), ApiError> {
    let ok = !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if ok {
        Ok(())
    } else {
        Err(ApiError::bad_request(format!("session id `{id}` must be 1-64 characters of [A-Za-z0-9_-]")))
    }
}

pub struct SessionHandle {
    pub id: String,
    pub dir: PathBuf,
    pub track: Arc<Track>,
    /// All changes go through this lock; tokio's mutex is FIFO, so it doubles
    /// as the write queue.
    agent: tokio::sync::Mutex<AgentInstance>,
    snapshot: ArcSwap<SessionView>,
    jobs: Mutex<BTreeMap<String, Arc<Job>>>,
    next_job: Mutex<u64>,
    pub stream_open: AtomicBool,
}

impl SessionHandle {
    fn new(agent: AgentInstance, dir: PathBuf) -> Result<Self, ApiError> {
        let track = generate_track(agent.track_seed, TRACK_TILES).map_err(|e| ApiError::internal(e.to_string()))?;
        Ok(Self {
            id: agent.id.clone(),
            dir,
            track: Arc::new(track),
            snapshot: ArcSwap::from_pointee(SessionView::of(&agent)),
            agent: tokio::sync::Mutex::new(agent),
            jobs: Mutex::default(),
            next_job: Mutex::new(0),
            stream_open: AtomicBool::new(false),
        })
    }

    pub fn view(&self) -> Arc<SessionView> {
        self.snapshot.load_full()
    }

    /// Runs `f` on the agent in the write queue. The change is kept only if `f`
    /// succeeds and the result reaches disk.
    pub async fn mutate<T, F>(self: &Arc<Self>, f: F) -> Result<T, ApiError>
    where
        T: Send + 'static,
        F: FnOnce(&mut AgentInstance) -> Result<T, SessionError> + Send + 'static,
    {
        let this = self.clone();
        tokio::task::spawn_blocking(move || this.mutate_blocking(f))
            .await
            .map_err(|e| ApiError::internal(e.to_string()))?
    }

    pub fn mutate_blocking<T>(
        &self,
        f: impl FnOnce(&mut AgentInstance) -> Result<T, SessionError>,
    ) -> Result<T, ApiError> {
        let mut agent = self.agent.blocking_lock();
        let before = agent.clone();
        let out = f(&mut agent)?;
        if let Err(e) = agent.persist(&self.dir) {
            *agent = before;
            let _ = agent.persist(&self.dir);
            return Err(e.into());
        }
        self.snapshot.store(Arc::new(SessionView::of(&agent)));
        Ok(out)
    }

    /// Reads the agent in queue order, for data too large for the snapshot.
    pub async fn read<T: Send + 'static>(
        self: &Arc<Self>,
        f: impl FnOnce(&AgentInstance) -> T + Send + 'static,
    ) -> Result<T, ApiError> {
        let this = self.clone();
        tokio::task::spawn_blocking(move || f(&this.agent.blocking_lock()))
            .await
            .map_err(|e| ApiError::internal(e.to_string()))
    }

    /// Starts `f` as a background mutation and returns its job at once.
    pub fn spawn_job<F>(self: &Arc<Self>, kind: &str, f: F) -> Arc<Job>
    where
        F: FnOnce(&mut AgentInstance, &Job) -> Result<serde_json::Value, SessionError> + Send + 'static,
    {
        let id = {
            let mut n = self.next_job.lock().expect("job counter poisoned");
            *n += 1;
            format!("j{n}")
        };
        let job = Arc::new(Job::new(id.clone(), kind));
        self.jobs.lock().expect("job table poisoned").insert(id, job.clone());
        let (this, j) = (self.clone(), job.clone());
        tokio::task::spawn_blocking(move || {
            let result = this.mutate_blocking(|a| {
                let value = f(a, &j)?;
                Ok((value, a.version))
            });
            j.finish(result);
        });
        job
    }

    pub fn job(&self, id: &str) -> Option<Arc<Job>> {
        self.jobs.lock().expect("job table poisoned").get(id).cloned()
    }

    pub fn jobs(&self) -> Vec<JobStatus> {
        self.jobs.lock().expect("job table poisoned").values().map(|j| j.status()).collect()
    }

    /// Claims the session's only real-time stream.
    pub fn open_stream(&self) -> bool {
        !self.stream_open.swap(true, Ordering::SeqCst)
    }

    pub fn close_stream(&self) {
        self.stream_open.store(false, Ordering::SeqCst);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Running,
    Done,
    Failed,
    Cancelled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub id: String,
    pub kind: String,
    pub state: JobState,
    /// Training batches completed so far.
    pub batch: usize,
    pub loss: Option<f64>,
    /// Agent version after the job, once done.
    pub version: Option<u64>,
    pub result: Option<serde_json::Value>,
    pub error: Option<crate::error::ErrorBody>,
}

pub struct Job {
    status: Mutex<JobStatus>,
    cancel: AtomicBool,
}

impl Job {
    fn new(id: String, kind: &str) -> Self {
        Self {
            status: Mutex::new(JobStatus {
                id,
                kind: kind.into(),
                state: JobState::Running,
                batch: 0,
                loss: None,
                version: None,
                result: None,
                error: None,
            }),
            cancel: AtomicBool::new(false),
        }
    }

    pub fn status(&self) -> JobStatus {
        self.status.lock().expect("job poisoned").clone()
    }

    pub fn cancel(&self) {
        self.cancel.store(true, Ordering::SeqCst);
    }

    /// Training progress callback, given the 0-based batch index. Records it
    /// and says whether to go on.
    pub fn progress(&self, batch: usize, loss: f64) -> bool {
        let mut s = self.status.lock().expect("job poisoned");
        s.batch = batch + 1;
        s.loss = Some(loss);
        !self.cancel.load(Ordering::SeqCst)
    }

    fn finish(&self, result: Result<(serde_json::Value, u64), ApiError>) {
        let mut s = self.status.lock().expect("job poisoned");
        match result {
            Ok((value, version)) => {
                s.state = JobState::Done;
                s.version = Some(version);
                s.result = Some(value);
            }
            Err(e) => {
                s.state = if self.cancel.load(Ordering::SeqCst) { JobState::Cancelled } else { JobState::Failed };
                s.error = Some(e.body);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoView {
    #[serde(flatten)]
    pub meta: DemoMeta,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainView {
    pub final_loss: f64,
    pub batches: usize,
    pub checksum: String,
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestView {
    pub version: u64,
    pub trial: u32,
    pub eas: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialView {
    pub version: u64,
    pub trial: u32,
    /// Mean EAS per battery group.
    pub groups: BTreeMap<String, f64>,
}

/// What read endpoints see; replaced wholesale after every change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub mode: AgentMode,
    pub version: u64,
    pub trial: u32,
    pub submitted: bool,
    pub tests: usize,
    pub required_tests: usize,
    pub track_seed: u64,
    pub instructions: Vec<Instruction>,
    pub demos: Vec<DemoView>,
    pub summary: Option<String>,
    pub structure_hash: Option<String>,
    pub weight_checksum: String,
    pub last_train: Option<TrainView>,
    pub test_history: Vec<TestView>,
    pub battery_history: Vec<TrialView>,
}

impl SessionView {
    pub fn of(a: &AgentInstance) -> Self {
        let test_history = a
            .log
            .events
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::Rollout { trial, eas, .. } => Some(TestView { version: e.version, trial, eas }),
                _ => None,
            })
            .collect();
        let battery_history = a
            .eval
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| TrialView { version: r.version, trial: r.trial, groups: a.eval.group_means(i).into_iter().collect() })
            .collect();
        Self {
            id: a.id.clone(),
            mode: a.mode,
            version: a.version,
            trial: a.trial,
            submitted: a.submitted,
            tests: a.log.tests(),
            required_tests: SUBMIT_MIN_TESTS,
            track_seed: a.track_seed,
            instructions: a.instructions.items.clone(),
            demos: a.demos.iter().map(|d| DemoView { meta: d.meta.clone(), frames: d.frames.len() }).collect(),
            summary: a.summary.clone(),
            structure_hash: a.structure_hash(),
            weight_checksum: a.weight_hash(),
            last_train: a.last_report.as_ref().map(|r| TrainView {
                final_loss: r.final_loss,
                batches: r.losses.len(),
                checksum: r.checksum.clone(),
                wall_time_ms: r.wall_time_ms,
            }),
            test_history,
            battery_history,
        }
    }
}
