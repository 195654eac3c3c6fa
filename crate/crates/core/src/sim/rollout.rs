use serde::{Deserialize, Serialize};

use super::car::{step, ActionVector, CarState, Dynamics, NoiseSpec, StartConfig, DT};
use super::observe::{observe, Observation};
use super::track::Track;
use super::{Policy, SimError};

/// 40 seconds.
pub const DEFAULT_CUTOFF_STEPS: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Finished,
    Cutoff,
    Stopped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutStep {
    pub observation: Observation,
    pub action: ActionVector,
    pub state: CarState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub track_seed: u64,
    pub start: StartConfig,
    pub noise: Option<NoiseSpec>,
    pub cutoff_steps: u64,
    pub n_total: usize,
    /// Tiles covered when the rollout ended.
    pub n_covered: usize,
    /// Steps taken.
    pub steps: u64,
    pub termination: Termination,
    pub eas: f64,
    /// Empty unless frames were requested.
    pub frames: Vec<RolloutStep>,
}

impl RolloutRecord {
    /// Recomputes EAS from the recorded counts.
    pub fn recompute_eas(&self) -> f64 {
        let cutoff = self.cutoff_steps as f64 * DT;
        match self.termination {
            Termination::Finished => {
                eas(self.n_covered, self.n_total, self.steps as f64 * DT, cutoff).unwrap_or(0.0)
            }
            Termination::Cutoff => eas(self.n_covered, self.n_total, f64::INFINITY, cutoff).unwrap_or(0.0),
            Termination::Stopped => {
                eas(self.n_covered, self.n_total, self.steps as f64 * DT, cutoff).unwrap_or(0.0)
            }
        }
    }
}

/// Effective average speed: `min(N_total, N_cutoff) / min(t_total, t_cutoff)`.
pub fn eas(n_cutoff: usize, n_total: usize, t_total: f64, t_cutoff: f64) -> Result<f64, SimError> {
    let t = t_total.min(t_cutoff);
    if !(t > 0.0) {
        return Err(SimError::ZeroTime);
    }
    Ok(n_total.min(n_cutoff) as f64 / t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutOptions {
    pub cutoff_steps: u64,
    pub record_frames: bool,
    pub dynamics: Dynamics,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        Self { cutoff_steps: DEFAULT_CUTOFF_STEPS, record_frames: true, dynamics: Dynamics::default() }
    }
}

pub fn run_rollout(
    policy: &dyn Policy,
    track: &Track,
    start: &StartConfig,
    noise: Option<NoiseSpec>,
    cutoff_steps: u64,
) -> Result<RolloutRecord, SimError> {
    let opts = RolloutOptions { cutoff_steps, ..RolloutOptions::default() };
    run_rollout_with(policy, track, start, noise, &opts, |_| false)
}

/// Observe → act → step until the loop is complete, the cutoff is reached, or
/// `stop(step)` returns true.
pub fn run_rollout_with(
    policy: &dyn Policy,
    track: &Track,
    start: &StartConfig,
    noise: Option<NoiseSpec>,
    opts: &RolloutOptions,
    mut stop: impl FnMut(u64) -> bool,
) -> Result<RolloutRecord, SimError> {
    let mut state = CarState::start(track, start);
    let mut frames = Vec::new();
    let n_total = track.len();
    let termination = loop {
        if state.covered_count == n_total {
            break Termination::Finished;
        }
        if state.steps >= opts.cutoff_steps {
            break Termination::Cutoff;
        }
        if stop(state.steps) {
            break Termination::Stopped;
        }
        let obs = observe(track, &state);
        let action = policy
            .act(&obs)
            .map_err(|message| SimError::Policy { step: state.steps, message })?;
        let next = step(track, &state, action, noise.as_ref(), &opts.dynamics)?;
        if opts.record_frames {
            frames.push(RolloutStep { observation: obs, action, state: next.clone() });
        }
        state = next;
    };
    let mut rec = RolloutRecord {
        track_seed: track.seed,
        start: *start,
        noise,
        cutoff_steps: opts.cutoff_steps,
        n_total,
        n_covered: state.covered_count,
        steps: state.steps,
        termination,
        eas: 0.0,
        frames,
    };
    rec.eas = rec.recompute_eas();
    Ok(rec)
}
