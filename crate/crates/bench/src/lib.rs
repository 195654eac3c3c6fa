//! Inputs shared by the benchmarks.

use structpolicy::pgdl::{compile_source, fixtures, CompiledPolicy};
use structpolicy::sim::{generate_track, run_rollout, ObservationSchema, ScriptedDriver, StartConfig, Track, TRACK_TILES};
use structpolicy::trainer::{Dataset, DemoSource, Demonstration, NormalizationSpec};

pub fn baseline() -> CompiledPolicy {
    compile_source(fixtures::RACING_BASELINE, &ObservationSchema::racing()).expect("baseline compiles").0
}

pub fn track() -> Track {
    generate_track(0, TRACK_TILES).expect("track 0 generates")
}

/// Scripted-driver frames from a few starts on track 0.
pub fn dataset() -> Dataset {
    let track = track();
    let demos: Vec<Demonstration> = [0, 60, 120, 180]
        .into_iter()
        .map(|tile| {
            let start = StartConfig { tile, ..StartConfig::nominal() };
            let rec = run_rollout(&ScriptedDriver::default(), &track, &start, None, 500).expect("scripted rollout");
            Demonstration::from_rollout(format!("t{tile}"), DemoSource::Policy, &rec)
        })
        .collect();
    Dataset::from_demos(&demos, &NormalizationSpec::racing()).expect("frames")
}
