//! The agent being taught: instructions, demonstrations, structure and weights,
//! plus the history of how they changed.

mod battery;
mod log;
mod store;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::graph::DensePolicy;
use crate::pgdl::{self, compile_source, render_summary, CompiledPolicy};
use crate::policy::{PolicyDriver, PolicyModel};
use crate::restructure::{build_prompt, restructure, InstructionSet, LlmBackend, LlmTranscript, RestructureConfig, RestructureFailure};
use crate::sim::{generate_track, run_rollout, ActionVector, ObservationSchema, RolloutRecord, StartConfig, FLAT_WIDTH, TRACK_TILES};
use crate::trainer::{train_with, weight_checksum, Dataset, Demonstration, NormalizationSpec, TrainConfig, TrainError, TrainReport};

pub use battery::{run_battery, BatterySpec, Condition, EvalMatrix, EvalRow};
pub use log::{EventKind, LogEvent, SessionLog};
pub use store::{read_weights, write_weights, FORMAT_VERSION};

/// Tests required before a policy may be submitted.
pub const SUBMIT_MIN_TESTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentMode {
    /// Graph policy shaped by instructions.
    Structured,
    /// Fully connected baseline taught by demonstrations only.
    Dense,
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("no frames in demonstrations marked for training")]
    EmptyDataset,
    #[error("unknown id `{0}`")]
    UnknownId(String),
    #[error(transparent)]
    Restructure(#[from] RestructureFailure),
    #[error("training failed: {0}")]
    Train(TrainError),
    #[error("{0}")]
    Mode(String),
    #[error("demonstration does not match the observation schema: {0}")]
    Schema(String),
    #[error("submit needs at least {required} test rollouts, have {tests}")]
    SubmitGate { tests: usize, required: usize },
    #[error("session was submitted and is read-only")]
    Locked,
    #[error("no trained policy yet")]
    NoPolicy,
    #[error("rollout failed: {0}")]
    Rollout(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt session file {file}: {detail}")]
    Corrupt { file: String, detail: String },
    #[error("session format {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
}

impl SessionError {
    /// Stable identifier used in API error envelopes.
    pub fn rule(&self) -> &'static str {
        match self {
            SessionError::EmptyDataset => "empty-dataset",
            SessionError::UnknownId(_) => "unknown-id",
            SessionError::Restructure(_) => "restructure-failed",
            SessionError::Train(_) => "train-failed",
            SessionError::Mode(_) => "mode",
            SessionError::Schema(_) => "schema",
            SessionError::SubmitGate { .. } => "submit-gate",
            SessionError::Locked => "locked",
            SessionError::NoPolicy => "no-policy",
            SessionError::Rollout(_) => "rollout-failed",
            SessionError::Io(_) => "io",
            SessionError::Corrupt { .. } => "corrupt",
            SessionError::Version { .. } => "format-version",
        }
    }
}

impl From<TrainError> for SessionError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::EmptyDataset => SessionError::EmptyDataset,
            e => SessionError::Train(e),
        }
    }
}

/// Result of an earlier restructure, keyed by prompt hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedStructure {
    pub source: String,
    pub summary: String,
}

#[derive(Debug, Clone)]
pub struct AgentInstance {
    pub id: String,
    pub mode: AgentMode,
    pub instructions: InstructionSet,
    pub demos: Vec<Demonstration>,
    /// Structure with its initial weights, before any training.
    pub base: PolicyModel,
    /// Structure with the current weights.
    pub current: PolicyModel,
    pub summary: Option<String>,
    pub version: u64,
    /// Number of policies produced so far.
    pub trial: u32,
    pub train_config: TrainConfig,
    pub log: SessionLog,
    pub transcripts: Vec<LlmTranscript>,
    pub eval: EvalMatrix,
    pub cache: BTreeMap<String, CachedStructure>,
    pub last_report: Option<TrainReport>,
    pub submitted: bool,
    pub next_demo: u64,
    /// Track used for teaching and for test rollouts.
    pub track_seed: u64,
}

impl PartialEq for AgentInstance {
    fn eq(&self, o: &Self) -> bool {
        self.id == o.id
            && self.mode == o.mode
            && self.instructions == o.instructions
            && self.demos == o.demos
            && self.source() == o.source()
            && self.base.params() == o.base.params()
            && self.current.params() == o.current.params()
            && self.summary == o.summary
            && self.version == o.version
            && self.trial == o.trial
            && self.train_config == o.train_config
            && self.log == o.log
            && self.transcripts == o.transcripts
            && self.eval == o.eval
            && self.cache == o.cache
            && self.submitted == o.submitted
            && self.next_demo == o.next_demo
            && self.track_seed == o.track_seed
    }
}

fn derive_seed(id: &str, version: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(id.as_bytes());
    h.update(version.to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

fn compile_racing(source: &str) -> Result<CompiledPolicy, SessionError> {
    compile_source(source, &ObservationSchema::racing())
        .map(|(c, _)| c)
        .map_err(|d| SessionError::Corrupt { file: "agent.pgdl".into(), detail: pgdl::format_diagnostics(&d) })
}

impl AgentInstance {
    /// A fresh agent at version 1. Structured agents start from the built-in
    /// baseline program until the first restructure.
    pub fn new(id: impl Into<String>, mode: AgentMode) -> Self {
        let id = id.into();
        let base = match mode {
            AgentMode::Structured => {
                PolicyModel::Structured(Box::new(compile_racing(pgdl::fixtures::RACING_BASELINE).expect("baseline compiles")))
            }
            AgentMode::Dense => PolicyModel::Dense(DensePolicy::baseline(derive_seed(&id, 0))),
        };
        let summary = match &base {
            PolicyModel::Structured(c) => Some(render_summary(c)),
            PolicyModel::Dense(_) => None,
        };
        Self {
            train_config: TrainConfig::with_seed(derive_seed(&id, 1)),
            id,
            mode,
            instructions: InstructionSet::default(),
            demos: Vec::new(),
            current: base.clone(),
            base,
            summary,
            version: 1,
            trial: 0,
            log: SessionLog::default(),
            transcripts: Vec::new(),
            eval: EvalMatrix::default(),
            cache: BTreeMap::new(),
            last_report: None,
            submitted: false,
            next_demo: 0,
            track_seed: 0,
        }
    }

    /// PGDL text of the current structure with its initial weights.
    pub fn source(&self) -> Option<String> {
        match &self.base {
            PolicyModel::Structured(c) => Some(c.program.to_string()),
            PolicyModel::Dense(_) => None,
        }
    }

    pub fn compiled(&self) -> Option<&CompiledPolicy> {
        match &self.current {
            PolicyModel::Structured(c) => Some(c),
            PolicyModel::Dense(_) => None,
        }
    }

    pub fn structure_hash(&self) -> Option<String> {
        self.source().map(|s| hex::encode(Sha256::digest(s.as_bytes())))
    }

    pub fn weight_hash(&self) -> String {
        weight_checksum(self.current.params())
    }

    pub fn driver(&self) -> PolicyDriver {
        PolicyDriver::new(self.current.clone(), NormalizationSpec::racing())
    }

    pub fn demo(&self, id: &str) -> Option<&Demonstration> {
        self.demos.iter().find(|d| d.meta.id == id)
    }

    pub fn dataset(&self) -> Result<Dataset, SessionError> {
        Ok(Dataset::from_demos(&self.demos, &NormalizationSpec::racing())?)
    }

    /// Applies `f` to a copy and keeps it only if `f` succeeds.
    fn mutate(&mut self, f: impl FnOnce(&mut Self) -> Result<(), SessionError>) -> Result<(), SessionError> {
        if self.submitted {
            return Err(SessionError::Locked);
        }
        let mut next = self.clone();
        next.version += 1;
        f(&mut next)?;
        *self = next;
        Ok(())
    }

    /// Cold-starts from the initial weights and trains on the used frames.
    /// With no frames, either resets to the initial weights or fails.
    fn retrain(&mut self, empty_ok: bool, progress: &mut dyn FnMut(usize, f64) -> bool) -> Result<(), SessionError> {
        let data = match self.dataset() {
            Ok(d) => d,
            Err(SessionError::EmptyDataset) if empty_ok => {
                self.current = self.base.clone();
                self.trial += 1;
                self.last_report = None;
                self.log.push(self.version, EventKind::WeightsReset { trial: self.trial });
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        let config = TrainConfig { seed: derive_seed(&self.id, self.version), ..self.train_config.clone() };
        let mut model = self.base.clone();
        let report = train_with(&mut model, &data, &config, |b, l| progress(b, l))?;
        if report.cancelled {
            return Err(SessionError::Train(TrainError::Config("training cancelled".into())));
        }
        self.current = model;
        self.trial += 1;
        self.log.push(
            self.version,
            EventKind::Trained {
                trial: self.trial,
                seed: config.seed,
                frames: data.len(),
                final_loss: report.final_loss,
                checksum: report.checksum.clone(),
            },
        );
        self.last_report = Some(report);
        Ok(())
    }

    fn check_demo(demo: &Demonstration) -> Result<(), SessionError> {
        demo.validate().map_err(|e| SessionError::Schema(e.to_string()))?;
        if demo.meta.action_names != ActionVector::NAMES {
            return Err(SessionError::Schema(format!("action names {:?}", demo.meta.action_names)));
        }
        if let Some(w) = demo.obs_width() {
            if w != FLAT_WIDTH {
                return Err(SessionError::Schema(format!("observation width {w}, expected {FLAT_WIDTH}")));
            }
        }
        Ok(())
    }

    /// Adds a demonstration under a fresh id and retrains. Returns the id.
    pub fn add_demonstration(&mut self, demo: Demonstration) -> Result<String, SessionError> {
        self.add_demonstration_with(demo, &mut |_, _| true)
    }

    pub fn add_demonstration_with(
        &mut self,
        mut demo: Demonstration,
        progress: &mut dyn FnMut(usize, f64) -> bool,
    ) -> Result<String, SessionError> {
        Self::check_demo(&demo)?;
        let mut id = String::new();
        self.mutate(|a| {
            a.next_demo += 1;
            id = format!("d{}", a.next_demo);
            demo.meta.id = id.clone();
            a.log.push(a.version, EventKind::DemoAdded { id: id.clone(), frames: demo.frames.len() });
            a.demos.push(demo);
            a.retrain(false, progress)
        })?;
        Ok(id)
    }

    pub fn remove_demonstration(&mut self, id: &str) -> Result<(), SessionError> {
        self.mutate(|a| {
            let pos = a.demos.iter().position(|d| d.meta.id == id).ok_or_else(|| SessionError::UnknownId(id.into()))?;
            a.demos.remove(pos);
            a.log.push(a.version, EventKind::DemoRemoved { id: id.into() });
            a.retrain(true, &mut |_, _| true)
        })
    }

    pub fn toggle_demonstration(&mut self, id: &str, used: bool) -> Result<(), SessionError> {
        self.mutate(|a| {
            let d = a.demos.iter_mut().find(|d| d.meta.id == id).ok_or_else(|| SessionError::UnknownId(id.into()))?;
            d.meta.used = used;
            a.log.push(a.version, EventKind::DemoToggled { id: id.into(), used });
            a.retrain(false, &mut |_, _| true)
        })
    }

    /// Retrains on the current demonstrations without changing anything else.
    pub fn train(&mut self, progress: &mut dyn FnMut(usize, f64) -> bool) -> Result<(), SessionError> {
        self.mutate(|a| a.retrain(false, progress))
    }

    fn require_structured(&self) -> Result<(), SessionError> {
        match self.mode {
            AgentMode::Structured => Ok(()),
            AgentMode::Dense => Err(SessionError::Mode("instructions are not used by the dense baseline".into())),
        }
    }

    /// Regenerates the structure from the used instructions, reusing an earlier
    /// result for an identical prompt, then retrains.
    fn restructure_now(&mut self, backend: &dyn LlmBackend, config: &RestructureConfig) -> Result<(), SessionError> {
        let hash = build_prompt(&self.instructions).hash();
        let (source, summary, attempts, cached) = match self.cache.get(&hash) {
            Some(c) => (c.source.clone(), c.summary.clone(), 0, true),
            None => {
                let out = restructure(&self.instructions, backend, config)?;
                let source = out.compiled.program.to_string();
                let attempts = out.transcripts.len();
                self.transcripts.extend(out.transcripts);
                self.cache.insert(hash.clone(), CachedStructure { source: source.clone(), summary: out.summary.clone() });
                (source, out.summary, attempts, false)
            }
        };
        let compiled = compile_racing(&source)?;
        self.base = PolicyModel::Structured(Box::new(compiled));
        self.current = self.base.clone();
        self.summary = Some(summary);
        self.log.push(self.version, EventKind::Restructured { bundle_hash: hash, attempts, cached });
        self.retrain(true, &mut |_, _| true)
    }

    pub fn add_instruction(
        &mut self,
        text: &str,
        created_at: u64,
        backend: &dyn LlmBackend,
        config: &RestructureConfig,
    ) -> Result<String, SessionError> {
        self.require_structured()?;
        let mut id = String::new();
        self.mutate(|a| {
            id = a.instructions.add(text, created_at);
            a.log.push(a.version, EventKind::InstructionAdded { id: id.clone(), text: text.into() });
            a.restructure_now(backend, config)
        })?;
        Ok(id)
    }

    pub fn remove_instruction(
        &mut self,
        id: &str,
        backend: &dyn LlmBackend,
        config: &RestructureConfig,
    ) -> Result<(), SessionError> {
        self.require_structured()?;
        self.mutate(|a| {
            a.instructions.remove(id).ok_or_else(|| SessionError::UnknownId(id.into()))?;
            a.log.push(a.version, EventKind::InstructionRemoved { id: id.into() });
            a.restructure_now(backend, config)
        })
    }

    pub fn toggle_instruction(
        &mut self,
        id: &str,
        used: bool,
        backend: &dyn LlmBackend,
        config: &RestructureConfig,
    ) -> Result<(), SessionError> {
        self.require_structured()?;
        self.mutate(|a| {
            if !a.instructions.set_used(id, used) {
                return Err(SessionError::UnknownId(id.into()));
            }
            a.log.push(a.version, EventKind::InstructionToggled { id: id.into(), used });
            a.restructure_now(backend, config)
        })
    }

    /// Runs the current policy once on the teaching track and counts it as a test.
    pub fn test_rollout(&mut self, start: &StartConfig, cutoff_steps: u64) -> Result<RolloutRecord, SessionError> {
        if self.submitted {
            return Err(SessionError::Locked);
        }
        let track = generate_track(self.track_seed, TRACK_TILES).map_err(|e| SessionError::Rollout(e.to_string()))?;
        let rec = run_rollout(&self.driver(), &track, start, None, cutoff_steps)
            .map_err(|e| SessionError::Rollout(e.to_string()))?;
        self.log.push(self.version, EventKind::Rollout { trial: self.trial, track: self.track_seed, eas: rec.eas });
        Ok(rec)
    }

    /// Evaluates the current policy and appends one row to the matrix.
    pub fn run_battery(&mut self, spec: &BatterySpec) -> Result<&EvalRow, SessionError> {
        let cells = run_battery(&self.driver(), spec).map_err(SessionError::Rollout)?;
        let absent = cells.iter().filter(|(_, v)| v.is_none()).count();
        self.eval
            .push(self.version, self.trial, &cells)
            .map_err(SessionError::Mode)?;
        self.log.push(self.version, EventKind::Battery { trial: self.trial, cells: cells.len(), absent });
        Ok(self.eval.rows.last().expect("row just pushed"))
    }

    pub fn submit(&mut self) -> Result<(), SessionError> {
        if self.submitted {
            return Err(SessionError::Locked);
        }
        let tests = self.log.tests();
        if tests < SUBMIT_MIN_TESTS {
            return Err(SessionError::SubmitGate { tests, required: SUBMIT_MIN_TESTS });
        }
        self.log.push(self.version, EventKind::Submitted { trial: self.trial });
        self.submitted = true;
        Ok(())
    }
}
