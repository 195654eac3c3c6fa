//! The per-session real-time stream.
//!
//! A [`StreamDriver`] owns the episode and is advanced once per tick; the
//! socket code around it only moves messages. Control samples that arrive
//! between ticks are applied at the next tick, so network delay shifts which
//! sample a step uses but never how many steps are recorded.

use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use futures_util::{SinkExt, StreamExt};
use structpolicy::sim::{StartConfig, Termination, Track, DEFAULT_CUTOFF_STEPS};
use structpolicy::trainer::Demonstration;
use tokio::sync::mpsc;
use tokio::sync::mpsc::error::TryRecvError;

use crate::error::ApiError;
use crate::protocol::{decode, encode, ClientMessage, ControlSample, Episode, FramePacket, ServerMessage, StreamMode};
use crate::routes::session;
use crate::state::{AppState, SessionHandle};

/// Longest human demonstration unless the client asks otherwise (two minutes).
pub const DEFAULT_DEMO_STEPS: u64 = 3000;

/// Work the driver asks its host to do.
#[derive(Debug, Clone, PartialEq)]
pub enum Effect {
    /// Display only; may be dropped.
    Frame(FramePacket),
    /// Must be delivered.
    Send(ServerMessage),
    SaveDemo(Demonstration),
    RunRollout { start: StartConfig, cutoff_steps: u64 },
}

/// A finished agent rollout, ready to be played back.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutPlayback {
    pub frames: Vec<FramePacket>,
    pub eas: f64,
    pub steps: u64,
    pub termination: Termination,
    pub tests: usize,
}

enum Active {
    Idle,
    Demo { episode: Episode, max_steps: u64 },
    Pending { start: StartConfig },
    Playback { run: RolloutPlayback, start: StartConfig, pos: usize, episode: u64 },
}

pub struct StreamDriver {
    track: Arc<Track>,
    active: Active,
    episodes: u64,
    /// Stamped on outgoing frames.
    pub version: u64,
    /// Display frames dropped in the current episode.
    pub dropped: u64,
}

impl StreamDriver {
    pub fn new(track: Arc<Track>, version: u64) -> Self {
        Self { track, active: Active::Idle, episodes: 0, version, dropped: 0 }
    }

    pub fn is_idle(&self) -> bool {
        matches!(self.active, Active::Idle)
    }

    /// Steps recorded so far in the current demonstration.
    pub fn demo_steps(&self) -> Option<u64> {
        match &self.active {
            Active::Demo { episode, .. } => Some(episode.steps()),
            _ => None,
        }
    }

    fn next_episode(&mut self) -> u64 {
        self.episodes += 1;
        self.dropped = 0;
        self.episodes
    }

    fn started(&self, episode: u64, mode: StreamMode, start: StartConfig) -> Effect {
        Effect::Send(ServerMessage::EpisodeStarted { episode, mode, start })
    }

    fn ended(&self, episode: u64, steps: u64, termination: Termination) -> Effect {
        Effect::Send(ServerMessage::EpisodeEnded { episode, steps, termination, dropped_frames: self.dropped })
    }

    pub fn handle(&mut self, msg: ClientMessage) -> Vec<Effect> {
        match msg {
            ClientMessage::Start { mode: StreamMode::Demo, start, max_steps } => {
                let n = self.next_episode();
                self.active = Active::Demo {
                    episode: Episode::new(self.track.clone(), start, n),
                    max_steps: max_steps.unwrap_or(DEFAULT_DEMO_STEPS),
                };
                vec![self.started(n, StreamMode::Demo, start)]
            }
            ClientMessage::Start { mode: StreamMode::Rollout, start, max_steps } => {
                self.active = Active::Pending { start };
                vec![Effect::RunRollout { start, cutoff_steps: max_steps.unwrap_or(DEFAULT_CUTOFF_STEPS) }]
            }
            ClientMessage::Control(sample) => self.control(&sample),
        }
    }

    fn control(&mut self, sample: &ControlSample) -> Vec<Effect> {
        match &mut self.active {
            Active::Demo { episode, .. } => {
                if sample.reset {
                    let start = episode.start();
                    episode.reset();
                    self.episodes = episode.number;
                    self.dropped = 0;
                    return vec![self.started(self.episodes, StreamMode::Demo, start)];
                }
                episode.receive(sample);
                if sample.stop {
                    return self.finish_demo(Termination::Stopped);
                }
                Vec::new()
            }
            Active::Playback { .. } if sample.reset => {
                let n = self.next_episode();
                let Active::Playback { pos, episode, start, .. } = &mut self.active else { unreachable!() };
                (*pos, *episode) = (0, n);
                let start = *start;
                vec![self.started(n, StreamMode::Rollout, start)]
            }
            Active::Playback { pos, .. } if sample.stop => {
                let steps = *pos as u64;
                self.finish_playback(steps, Termination::Stopped)
            }
            // Samples are sent continuously; outside a demo they mean nothing.
            _ => Vec::new(),
        }
    }

    fn finish_demo(&mut self, termination: Termination) -> Vec<Effect> {
        let Active::Demo { episode, .. } = std::mem::replace(&mut self.active, Active::Idle) else {
            return Vec::new();
        };
        let mut out = vec![self.ended(episode.number, episode.steps(), termination)];
        if !episode.frames().is_empty() {
            out.push(Effect::SaveDemo(episode.into_demonstration()));
        }
        out
    }

    fn finish_playback(&mut self, steps: u64, termination: Termination) -> Vec<Effect> {
        let Active::Playback { run, episode, .. } = std::mem::replace(&mut self.active, Active::Idle) else {
            return Vec::new();
        };
        vec![
            self.ended(episode, steps, termination),
            Effect::Send(ServerMessage::RolloutDone {
                eas: run.eas,
                steps: run.steps,
                termination: run.termination,
                tests: run.tests,
            }),
        ]
    }

    /// Result of a [`Effect::RunRollout`] request.
    pub fn rollout_ready(&mut self, result: Result<RolloutPlayback, ApiError>) -> Vec<Effect> {
        let Active::Pending { start } = self.active else {
            return Vec::new();
        };
        match result {
            Ok(run) => {
                let n = self.next_episode();
                self.active = Active::Playback { run, start, pos: 0, episode: n };
                vec![self.started(n, StreamMode::Rollout, start)]
            }
            Err(e) => {
                self.active = Active::Idle;
                vec![Effect::Send(ServerMessage::Error { rule: e.body.rule, message: e.body.message })]
            }
        }
    }

    /// Advances one simulation step.
    pub fn tick(&mut self) -> Vec<Effect> {
        let version = self.version;
        match &mut self.active {
            Active::Idle | Active::Pending { .. } => Vec::new(),
            Active::Demo { episode, max_steps } => match episode.tick() {
                Ok(mut packet) => {
                    packet.version = version;
                    let mut out = vec![Effect::Frame(packet)];
                    if let Some(t) = episode.termination(*max_steps) {
                        out.extend(self.finish_demo(t));
                    }
                    out
                }
                Err(e) => {
                    self.active = Active::Idle;
                    vec![Effect::Send(ServerMessage::Error { rule: "simulation".into(), message: e.to_string() })]
                }
            },
            Active::Playback { run, pos, episode, .. } => {
                if *pos >= run.frames.len() {
                    let (steps, t) = (*pos as u64, run.termination);
                    return self.finish_playback(steps, t);
                }
                let mut packet = run.frames[*pos].clone();
                packet.episode = *episode;
                *pos += 1;
                vec![Effect::Frame(packet)]
            }
        }
    }
}

/// `GET /sessions/{id}/stream`: one stream per session at a time.
pub async fn stream(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    ws: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    let handle = session(&app, id).await?;
    if !handle.open_stream() {
        return Err(ApiError::new(StatusCode::CONFLICT, "stream-busy", "this session already has an open stream"));
    }
    let guard = StreamGuard(handle.clone());
    let period = Duration::from_secs_f64(1.0 / app.config.tick_hz);
    let buffer = app.config.stream_buffer.max(1);
    Ok(ws
        .on_upgrade(move |socket| async move {
            run(socket, guard.0.clone(), period, buffer).await;
            drop(guard);
        })
        .into_response())
}

/// Releases the stream slot even if the upgrade never happens.
struct StreamGuard(Arc<SessionHandle>);

impl Drop for StreamGuard {
    fn drop(&mut self) {
        self.0.close_stream();
    }
}

enum Out {
    Frame(FramePacket),
    Event(ServerMessage),
}

enum Completion {
    Rollout(Result<RolloutPlayback, ApiError>),
    Event(ServerMessage),
}

async fn run(socket: WebSocket, handle: Arc<SessionHandle>, period: Duration, buffer: usize) {
    let (mut sink, mut source) = socket.split();
    let (out_tx, mut out_rx) = mpsc::channel::<Out>(buffer);
    let writer = tokio::spawn(async move {
        while let Some(out) = out_rx.recv().await {
            let bytes = match out {
                Out::Frame(p) => encode(&ServerMessage::Frame(p)),
                Out::Event(e) => encode(&e),
            };
            if sink.send(Message::Binary(bytes.into())).await.is_err() {
                break;
            }
        }
    });

    let (in_tx, mut in_rx) = mpsc::unbounded_channel::<Result<ClientMessage, String>>();
    let reader = tokio::spawn(async move {
        while let Some(Ok(msg)) = source.next().await {
            let parsed = match msg {
                Message::Binary(b) => decode::<ClientMessage>(&b).map_err(|e| e.to_string()),
                Message::Text(_) => Err("messages must be binary length-prefixed JSON".to_string()),
                Message::Close(_) => break,
                _ => continue,
            };
            if in_tx.send(parsed).is_err() {
                break;
            }
        }
    });

    let (done_tx, mut done_rx) = mpsc::unbounded_channel::<Completion>();
    let mut driver = StreamDriver::new(handle.track.clone(), handle.view().version);
    let mut interval = tokio::time::interval(period);
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);

    'outer: loop {
        let effects = tokio::select! {
            _ = interval.tick() => {
                let mut effects = Vec::new();
                loop {
                    match in_rx.try_recv() {
                        Ok(Ok(msg)) => effects.extend(driver.handle(msg)),
                        Ok(Err(message)) => effects.push(Effect::Send(ServerMessage::Error { rule: "bad-message".into(), message })),
                        Err(TryRecvError::Empty) => break,
                        // Client gone: an unfinished demo is discarded with the driver.
                        Err(TryRecvError::Disconnected) => break 'outer,
                    }
                }
                driver.version = handle.view().version;
                effects.extend(driver.tick());
                effects
            }
            Some(done) = done_rx.recv() => match done {
                Completion::Rollout(r) => driver.rollout_ready(r),
                Completion::Event(e) => vec![Effect::Send(e)],
            },
        };
        for effect in effects {
            match effect {
                Effect::Frame(p) => {
                    if out_tx.try_send(Out::Frame(p)).is_err() {
                        driver.dropped += 1;
                    }
                }
                Effect::Send(m) => {
                    if out_tx.send(Out::Event(m)).await.is_err() {
                        break 'outer;
                    }
                }
                Effect::SaveDemo(demo) => {
                    let (h, tx) = (handle.clone(), done_tx.clone());
                    tokio::spawn(async move {
                        let frames = demo.frames.len();
                        let msg = match h.mutate(move |a| Ok((a.add_demonstration(demo)?, a.version))).await {
                            Ok((id, version)) => ServerMessage::DemoSaved { id, frames, version },
                            Err(e) => ServerMessage::Error { rule: e.body.rule, message: e.body.message },
                        };
                        let _ = tx.send(Completion::Event(msg));
                    });
                }
                Effect::RunRollout { start, cutoff_steps } => {
                    let (h, tx) = (handle.clone(), done_tx.clone());
                    tokio::spawn(async move {
                        let track = h.track.clone();
                        let r = h
                            .mutate(move |a| {
                                let rec = a.test_rollout(&start, cutoff_steps)?;
                                let frames = rec
                                    .frames
                                    .iter()
                                    .map(|s| {
                                        FramePacket::new(a.version, StreamMode::Rollout, 0, &track, &s.state, s.action.clipped())
                                    })
                                    .collect();
                                Ok(RolloutPlayback {
                                    frames,
                                    eas: rec.eas,
                                    steps: rec.steps,
                                    termination: rec.termination,
                                    tests: a.log.tests(),
                                })
                            })
                            .await;
                        let _ = tx.send(Completion::Rollout(r));
                    });
                }
            }
        }
    }
    reader.abort();
    drop(out_tx);
    let _ = writer.await;
}
