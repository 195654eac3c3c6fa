//! Rebuilds the saved session under `fixtures/session` that the load test reads.
//!
//! `cargo run -p structpolicy-core --example build_session_fixture`

use std::path::Path;

use structpolicy::restructure::{ReplayBackend, ReplayFile, RestructureConfig};
use structpolicy::session::{AgentInstance, AgentMode};
use structpolicy::sim::{generate_track, run_rollout, ScriptedDriver, StartConfig, TRACK_TILES};
use structpolicy::trainer::{DemoSource, Demonstration};

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let replay: ReplayFile =
        serde_json::from_str(&std::fs::read_to_string(root.join("llm/stay_on_road.json")).unwrap()).unwrap();
    let backend = ReplayBackend::new(replay.entries);

    let mut a = AgentInstance::new("fixture", AgentMode::Structured);
    a.train_config.total_batches = 100;
    a.train_config.batch_size = 64;
    let track = generate_track(0, TRACK_TILES).unwrap();
    let rec = run_rollout(&ScriptedDriver::default(), &track, &StartConfig::nominal(), None, 150).unwrap();
    a.add_demonstration(Demonstration::from_rollout("tmp", DemoSource::Human, &rec)).unwrap();
    a.add_instruction("stay on the road", 1_700_000_000, &backend, &RestructureConfig::default()).unwrap();
    for _ in 0..2 {
        a.test_rollout(&StartConfig::nominal(), 200).unwrap();
    }

    let out = root.join("session");
    let _ = std::fs::remove_dir_all(&out);
    a.persist(&out.join("agent")).unwrap();
    let expected = serde_json::json!({
        "version": a.version,
        "trial": a.trial,
        "weight_checksum": a.weight_hash(),
    });
    std::fs::write(out.join("expected.json"), serde_json::to_string_pretty(&expected).unwrap() + "\n").unwrap();
    println!("{} at version {} trial {}", out.display(), a.version, a.trial);
}
