//! Real-time channel messages and the demonstration episode they drive.
//!
//! Every WebSocket message is a binary frame holding a 4-byte big-endian
//! length followed by that many bytes of JSON.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use structpolicy::sim::{
    observe, step, ActionVector, CarState, Dynamics, SimError, StartConfig, Termination, Tile, Track,
};
use structpolicy::trainer::{DemoSource, Demonstration, Frame};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FrameError {
    #[error("message shorter than its length prefix")]
    Truncated,
    #[error("length prefix {declared} does not match payload of {actual} bytes")]
    Length { declared: usize, actual: usize },
    #[error("invalid JSON: {0}")]
    Json(String),
}

pub fn encode<T: Serialize>(msg: &T) -> Vec<u8> {
    let body = serde_json::to_vec(msg).expect("protocol messages serialize");
    let mut out = Vec::with_capacity(body.len() + 4);
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    out
}

pub fn decode<T: for<'de> Deserialize<'de>>(bytes: &[u8]) -> Result<T, FrameError> {
    let (head, body) = bytes.split_at_checked(4).ok_or(FrameError::Truncated)?;
    let declared = u32::from_be_bytes(head.try_into().expect("4 bytes")) as usize;
    if declared != body.len() {
        return Err(FrameError::Length { declared, actual: body.len() });
    }
    serde_json::from_slice(body).map_err(|e| FrameError::Json(e.to_string()))
}

/// One controller reading. `step` is the last frame the client had seen when
/// it sampled; the server applies samples in arrival order regardless.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlSample {
    #[serde(default)]
    pub step: u64,
    pub steer: f64,
    pub accelerate: f64,
    pub brake: f64,
    /// Restart the episode at the chosen start, discarding recorded frames.
    #[serde(default)]
    pub reset: bool,
    /// End the episode; a demonstration is saved.
    #[serde(default)]
    pub stop: bool,
}

impl ControlSample {
    pub fn action(&self) -> ActionVector {
        ActionVector::new(self.steer, self.accelerate, self.brake)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamMode {
    /// The client drives and the frames become a demonstration.
    Demo,
    /// The agent drives; counts as a test.
    Rollout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Start {
        mode: StreamMode,
        #[serde(default = "StartConfig::nominal")]
        start: StartConfig,
        #[serde(default)]
        max_steps: Option<u64>,
    },
    Control(ControlSample),
}

/// Tiles sent with each frame for rendering, starting at the car's tile.
pub const NEARBY_TILES: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePacket {
    pub version: u64,
    pub mode: StreamMode,
    pub episode: u64,
    pub step: u64,
    pub position: [f64; 2],
    pub heading: f64,
    pub speed: f64,
    pub distance_to_center: f64,
    pub angle_to_track: f64,
    pub tile: usize,
    pub covered: usize,
    pub total: usize,
    pub on_road: bool,
    /// Action applied on the step that produced this frame.
    pub action: [f64; 3],
    pub nearby: Vec<Tile>,
}

impl FramePacket {
    pub fn new(
        version: u64,
        mode: StreamMode,
        episode: u64,
        track: &Track,
        state: &CarState,
        action: ActionVector,
    ) -> Self {
        Self {
            version,
            mode,
            episode,
            step: state.steps,
            position: state.position,
            heading: state.heading,
            speed: state.speed,
            distance_to_center: state.lateral_offset(track),
            angle_to_track: state.angle_to_track(track),
            tile: state.tile,
            covered: state.covered_count,
            total: track.len(),
            on_road: state.on_road(track),
            action: action.to_array(),
            nearby: (0..NEARBY_TILES).map(|k| *track.tile(state.tile + k)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    EpisodeStarted { episode: u64, mode: StreamMode, start: StartConfig },
    Frame(FramePacket),
    EpisodeEnded { episode: u64, steps: u64, termination: Termination, dropped_frames: u64 },
    DemoSaved { id: String, frames: usize, version: u64 },
    RolloutDone { eas: f64, steps: u64, termination: Termination, tests: usize },
    Error { rule: String, message: String },
}

/// A human-driven episode. The simulation, not the wire, decides how many
/// frames exist: every tick records exactly one (observation, action) pair,
/// using the most recent control sample received.
pub struct Episode {
    track: Arc<Track>,
    start: StartConfig,
    dynamics: Dynamics,
    state: CarState,
    held: ActionVector,
    frames: Vec<Frame>,
    pub number: u64,
}

impl Episode {
    pub fn new(track: Arc<Track>, start: StartConfig, number: u64) -> Self {
        let state = CarState::start(&track, &start);
        Self {
            track,
            start,
            dynamics: Dynamics::default(),
            state,
            held: ActionVector::new(0.0, 0.0, 0.0),
            frames: Vec::new(),
            number,
        }
    }

    /// Replaces the held control. Later ticks reuse it until the next sample.
    pub fn receive(&mut self, sample: &ControlSample) {
        self.held = sample.action().clipped();
    }

    pub fn held(&self) -> ActionVector {
        self.held
    }

    pub fn steps(&self) -> u64 {
        self.state.steps
    }

    pub fn start(&self) -> StartConfig {
        self.start
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    /// Same start, fresh car, no frames.
    pub fn reset(&mut self) {
        *self = Self::new(self.track.clone(), self.start, self.number + 1);
    }

    pub fn tick(&mut self) -> Result<FramePacket, SimError> {
        let obs = observe(&self.track, &self.state).flatten();
        let next = step(&self.track, &self.state, self.held, None, &self.dynamics)?;
        self.frames.push(Frame { obs, action: self.held.to_array().to_vec() });
        self.state = next;
        Ok(FramePacket::new(0, StreamMode::Demo, self.number, &self.track, &self.state, self.held))
    }

    pub fn termination(&self, max_steps: u64) -> Option<Termination> {
        if self.state.covered_count == self.track.len() {
            Some(Termination::Finished)
        } else if self.state.steps >= max_steps {
            Some(Termination::Cutoff)
        } else {
            None
        }
    }

    pub fn into_demonstration(self) -> Demonstration {
        let names = ActionVector::NAMES.iter().map(|s| s.to_string()).collect();
        let mut d = Demonstration::new("pending", DemoSource::Human, names, self.frames);
        d.meta.track_seed = Some(self.track.seed);
        d.meta.start = Some(self.start);
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use structpolicy::sim::{generate_track, TRACK_TILES};

    #[test]
    fn framing_round_trip_and_errors() {
        let m = ClientMessage::Control(ControlSample { step: 3, steer: 0.1, accelerate: 1.0, brake: 0.0, reset: false, stop: false });
        let bytes = encode(&m);
        assert_eq!(u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize, bytes.len() - 4);
        assert_eq!(decode::<ClientMessage>(&bytes).unwrap(), m);
        assert_eq!(decode::<ClientMessage>(&bytes[..2]), Err(FrameError::Truncated));
        assert!(matches!(decode::<ClientMessage>(&bytes[..bytes.len() - 1]), Err(FrameError::Length { .. })));
    }

    #[test]
    fn start_defaults_to_nominal() {
        let m: ClientMessage = serde_json::from_str(r#"{"type":"start","mode":"demo"}"#).unwrap();
        assert_eq!(m, ClientMessage::Start { mode: StreamMode::Demo, start: StartConfig::nominal(), max_steps: None });
    }

    #[test]
    fn reset_discards_frames() {
        let track = Arc::new(generate_track(0, TRACK_TILES).unwrap());
        let mut e = Episode::new(track, StartConfig::nominal(), 1);
        for _ in 0..10 {
            e.tick().unwrap();
        }
        assert_eq!(e.frames().len(), 10);
        e.reset();
        assert_eq!((e.frames().len(), e.steps(), e.number), (0, 0, 2));
    }
}
