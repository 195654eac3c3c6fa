//! Top-down racing environment: procedural loop tracks, a kinematic car, the
//! structured tile observation, rollouts and the effective-average-speed metric.

mod car;
mod driver;
mod observe;
mod rollout;
mod starts;
mod track;

pub use car::{step, ActionVector, CarState, Dynamics, NoiseSpec, StartConfig, DT};
pub use driver::{ConstantPolicy, ScriptedDriver};
pub use observe::{
    observe, Observation, ObservationSchema, SchemaEntry, COL_BORDER, COL_THETA, COL_X, COL_Y,
    FLAT_WIDTH, INDICATORS, TILES_AHEAD, TILE_FEATURES,
};
pub use rollout::{
    eas, run_rollout, run_rollout_with, RolloutOptions, RolloutRecord, RolloutStep, Termination,
    DEFAULT_CUTOFF_STEPS,
};
pub use starts::{edge_case_starts, unseen_battery_starts, EDGE_CASE_COUNT, UNSEEN_START_COUNT};
pub use track::{
    generate_track, generate_track_with, turn_at, wrap_angle, Tile, Track, TrackConfig, HALF_WIDTH,
    TRACK_TILES,
};

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum SimError {
    #[error("tracks need at least 50 tiles, got {0}")]
    TooFewTiles(usize),
    #[error("track generation for seed {seed} failed the curvature cap after {attempts} attempts")]
    TrackGeneration { seed: u64, attempts: usize },
    #[error("non-finite action at step {step}")]
    NonFiniteAction { step: u64 },
    #[error("car state became non-finite at step {step}")]
    NonFiniteState { step: u64 },
    #[error("EAS is undefined for a zero time denominator")]
    ZeroTime,
    #[error("policy failed at step {step}: {message}")]
    Policy { step: u64, message: String },
}

/// Anything that maps an observation to an action.
pub trait Policy: Send + Sync {
    fn act(&self, observation: &Observation) -> Result<ActionVector, String>;
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn act(&self, observation: &Observation) -> Result<ActionVector, String> {
        (**self).act(observation)
    }
}

impl<P: Policy + ?Sized> Policy for &P {
    fn act(&self, observation: &Observation) -> Result<ActionVector, String> {
        (**self).act(observation)
    }
}
