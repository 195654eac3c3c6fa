mod common;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use common::{replay_fixtures, start};
use futures::{SinkExt, StreamExt};
use serde_json::Value;
use structpolicy::sim::{generate_track, StartConfig, TRACK_TILES};
use structpolicy::trainer::Demonstration;
use structpolicy_service::protocol::{decode, encode, ClientMessage, ControlSample, ServerMessage, StreamMode};
use structpolicy_service::realtime::{Effect, StreamDriver};
use tokio_tungstenite::tungstenite::Message;

fn sample(step: u64, steer: f64, reset: bool, stop: bool) -> ClientMessage {
    ClientMessage::Control(ControlSample { step, steer, accelerate: 0.8, brake: 0.0, reset, stop })
}

/// Steering value the simulated client sends after seeing frame `step`.
fn steer_for(step: u64) -> f64 {
    ((step as f64) / 7.0).sin() * 0.9
}

/// Replays a client whose samples reach the server `latency_ms` after the
/// frame they answer was produced. Ticks happen every `period_ms`; samples
/// delivered by a tick's time are applied before that tick's step.
fn simulate(latency_ms: u64, period_ms: u64, steps: u64, lost: impl Fn(u64) -> bool) -> (Demonstration, Vec<(u64, u64)>) {
    let track = Arc::new(generate_track(0, TRACK_TILES).unwrap());
    let mut d = StreamDriver::new(track, 1);
    d.handle(ClientMessage::Start { mode: StreamMode::Demo, start: StartConfig::nominal(), max_steps: Some(10_000) });
    // arrival time -> samples
    let mut pending: BTreeMap<u64, Vec<ClientMessage>> = BTreeMap::new();
    let mut sent = Vec::new();
    for tick in 0..steps {
        let now = tick * period_ms;
        let due: Vec<u64> = pending.range(..=now).map(|(t, _)| *t).collect();
        for t in due {
            for m in pending.remove(&t).unwrap() {
                d.handle(m);
            }
        }
        for e in d.tick() {
            if let Effect::Frame(p) = e {
                if !lost(p.step) {
                    pending.entry(now + latency_ms).or_default().push(sample(p.step, steer_for(p.step), false, false));
                    sent.push((p.step, now + latency_ms));
                }
            }
        }
    }
    let out = d.handle(sample(0, 0.0, false, true));
    let Some(Effect::SaveDemo(demo)) = out.into_iter().last() else { panic!("stop did not save") };
    (demo, sent)
}

#[test]
fn latency_shifts_actions_by_whole_steps_and_holds_the_last_sample() {
    let (period, latency, steps) = (40, 100, 200);
    let (demo, sent) = simulate(latency, period, steps, |_| false);
    assert_eq!(demo.frames.len() as u64, steps);
    for (k, frame) in demo.frames.iter().enumerate() {
        let t = k as u64 * period;
        // Oracle: the newest sample that had arrived when tick k ran.
        let expected = sent.iter().filter(|(_, arrival)| *arrival <= t).map(|(s, _)| steer_for(*s)).last().unwrap_or(0.0);
        assert_eq!(frame.action[0], expected, "tick {k}");
        // With 100 ms at 40 ms ticks that is the answer to frame k-2,
        // i.e. the sample produced three ticks earlier.
        if k >= 3 {
            assert_eq!(frame.action[0], steer_for(k as u64 - 2));
        } else {
            assert_eq!(frame.action[0], 0.0);
        }
    }
}

#[test]
fn lost_samples_hold_the_previous_value() {
    let lost = |step: u64| step % 5 == 0 || (40..60).contains(&step);
    let (demo, sent) = simulate(100, 40, 150, lost);
    assert_eq!(demo.frames.len(), 150, "frame count comes from the simulation, not the wire");
    for (k, frame) in demo.frames.iter().enumerate() {
        let t = k as u64 * 40;
        let expected = sent.iter().filter(|(_, a)| *a <= t).map(|(s, _)| steer_for(*s)).last().unwrap_or(0.0);
        assert_eq!(frame.action[0], expected, "tick {k}");
    }
    // Through the 20-step gap the action stays at the answer to frame 39.
    for k in 43..=62 {
        assert_eq!(demo.frames[k].action[0], steer_for(39));
    }
}

type Ws = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

async fn connect(base: &str, session: &str) -> Ws {
    let url = format!("{}/sessions/{session}/stream", base.replacen("http", "ws", 1));
    tokio_tungstenite::connect_async(url).await.unwrap().0
}

async fn send(ws: &mut Ws, m: &ClientMessage) {
    ws.send(Message::Binary(encode(m).into())).await.unwrap();
}

async fn recv(ws: &mut Ws) -> ServerMessage {
    loop {
        let m = tokio::time::timeout(Duration::from_secs(60), ws.next()).await.expect("stream timed out").unwrap().unwrap();
        if let Message::Binary(b) = m {
            return decode(&b).unwrap();
        }
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn websocket_demo_is_saved_with_one_frame_per_step() {
    let srv = start(replay_fixtures()).await;
    srv.create("ws", "structured").await;
    let mut ws = connect(&srv.base, "ws").await;

    // A second stream on the same session is refused.
    let url = format!("{}/sessions/ws/stream", srv.base.replacen("http", "ws", 1));
    match tokio_tungstenite::connect_async(url).await {
        Err(tokio_tungstenite::tungstenite::Error::Http(resp)) => assert_eq!(resp.status().as_u16(), 409),
        other => panic!("expected 409, got {:?}", other.map(|_| ())),
    }

    send(&mut ws, &ClientMessage::Start { mode: StreamMode::Demo, start: StartConfig::nominal(), max_steps: None }).await;
    assert!(matches!(recv(&mut ws).await, ServerMessage::EpisodeStarted { episode: 1, mode: StreamMode::Demo, .. }));

    let mut last_step = 0;
    let mut reset_done = false;
    let (steps, dropped) = loop {
        match recv(&mut ws).await {
            ServerMessage::Frame(p) => {
                assert!(p.step > last_step || p.step == 1, "steps go forward within an episode");
                last_step = p.step;
                if !reset_done && p.step >= 10 {
                    send(&mut ws, &sample(p.step, 0.0, true, false)).await;
                    reset_done = true;
                } else if p.episode == 2 && p.step >= 30 {
                    send(&mut ws, &sample(p.step, 0.1, false, true)).await;
                } else {
                    send(&mut ws, &sample(p.step, 0.1, false, false)).await;
                }
            }
            ServerMessage::EpisodeStarted { episode, .. } => assert_eq!(episode, 2),
            ServerMessage::EpisodeEnded { episode, steps, termination, dropped_frames } => {
                assert_eq!((episode, termination), (2, structpolicy::sim::Termination::Stopped));
                break (steps, dropped_frames);
            }
            other => panic!("unexpected {other:?}"),
        }
    };
    assert!(steps >= 30);
    let saved = loop {
        match recv(&mut ws).await {
            ServerMessage::DemoSaved { id, frames, version } => break (id, frames, version),
            ServerMessage::Frame(_) => {}
            other => panic!("unexpected {other:?}"),
        }
    };
    assert_eq!(saved.1 as u64, steps);
    assert_eq!(saved.2, 2);
    let _ = dropped;

    let (_, view) = srv.get("/sessions/ws").await;
    let demos = view["demos"].as_array().unwrap();
    assert_eq!(demos.len(), 1, "the episode cut short by reset is not kept");
    assert_eq!((demos[0]["id"].as_str(), demos[0]["frames"].as_u64()), (Some(saved.0.as_str()), Some(steps)));
    let (_, demo) = srv.get(&format!("/sessions/ws/demos/{}", saved.0)).await;
    let frames: &Vec<Value> = demo["frames"].as_array().unwrap();
    assert_eq!(frames.len() as u64, steps);
    assert_eq!(frames[0]["action"][0].as_f64(), Some(0.0), "nothing received before the first step");

    drop(ws);
    // The slot frees once the server notices the close.
    let mut reopened = false;
    for _ in 0..100 {
        let url = format!("{}/sessions/ws/stream", srv.base.replacen("http", "ws", 1));
        if tokio_tungstenite::connect_async(url).await.is_ok() {
            reopened = true;
            break;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    assert!(reopened);
}

#[tokio::test(flavor = "multi_thread")]
async fn websocket_rollout_counts_as_a_test() {
    let srv = start(replay_fixtures()).await;
    srv.create("wr", "structured").await;
    srv.post("/sessions/wr/demos", common::scripted_frames(100)).await;
    let mut ws = connect(&srv.base, "wr").await;
    send(&mut ws, &ClientMessage::Start { mode: StreamMode::Rollout, start: StartConfig::nominal(), max_steps: Some(60) })
        .await;
    let mut frames = 0;
    let tests = loop {
        match recv(&mut ws).await {
            ServerMessage::EpisodeStarted { mode, .. } => assert_eq!(mode, StreamMode::Rollout),
            ServerMessage::Frame(p) => {
                frames += 1;
                assert_eq!(p.step, frames);
                assert_eq!(p.mode, StreamMode::Rollout);
            }
            ServerMessage::EpisodeEnded { steps, .. } => assert_eq!(steps, 60),
            ServerMessage::RolloutDone { tests, steps, .. } => {
                assert_eq!(steps, 60);
                break tests;
            }
            other => panic!("unexpected {other:?}"),
        }
    };
    assert_eq!((frames, tests), (60, 1));
    assert_eq!(srv.get("/sessions/wr").await.1["tests"].as_u64(), Some(1));
}

#[tokio::test(flavor = "multi_thread")]
async fn text_messages_are_rejected_without_closing() {
    let srv = start(replay_fixtures()).await;
    srv.create("wt", "structured").await;
    let mut ws = connect(&srv.base, "wt").await;
    ws.send(Message::Text("{\"type\":\"start\",\"mode\":\"demo\"}".into())).await.unwrap();
    assert!(matches!(recv(&mut ws).await, ServerMessage::Error { ref rule, .. } if rule == "bad-message"));
    ws.send(Message::Binary(vec![0, 0, 0, 9, b'{'].into())).await.unwrap();
    assert!(matches!(recv(&mut ws).await, ServerMessage::Error { .. }));
    send(&mut ws, &ClientMessage::Start { mode: StreamMode::Demo, start: StartConfig::nominal(), max_steps: Some(3) }).await;
    assert!(matches!(recv(&mut ws).await, ServerMessage::EpisodeStarted { .. }));
}
