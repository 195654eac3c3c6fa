//! Regenerates the replay recordings in `fixtures/llm` from the authored
//! responses in `fixtures/llm/responses`. Run after changing any prompt text.
//!
//! `cargo run -p structpolicy-core --example record_fixtures`

use std::path::Path;

use structpolicy::restructure::{restructure, InstructionSet, RecordingBackend, RestructureConfig, ScriptedBackend};

const CASES: &[(&str, &str, &[&str], usize)] = &[
    ("stay_on_road", "single instruction, valid on the first try", &["stay on the road"], 1),
    ("shape_error_then_valid", "first answer has a shape error, second is valid", &["follow the center line"], 2),
    ("slow_in_corners", "corner-aware target speed", &["slow down in front of curves"], 1),
    ("no_instructions", "empty instruction set", &[], 1),
    ("style_terse_abstract", "terse and abstract", &["Stay within the grey track"], 1),
    ("style_terse_specific", "terse and specific", &["Desired speed is 70."], 1),
    (
        "style_verbose",
        "verbose",
        &["when turning prioritize the middle of the road rather than the inside of the bend. this will limit your chances of hitting grass. in general, try to stay in the middle of the road since you are surrounded by grass"],
        1,
    ),
    ("style_second_person", "second person", &["speed up to go as fast as you can"], 1),
    ("style_third_person", "third person", &["Keep the car straight on a straight road"], 1),
    ("style_typo", "typo", &["Turn a corner"], 1),
];

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/llm");
    for &(name, description, texts, n) in CASES {
        let responses: Vec<String> = (1..=n)
            .map(|i| std::fs::read_to_string(root.join(format!("responses/{name}_{i}.txt"))).unwrap())
            .collect();
        let backend = RecordingBackend::new(ScriptedBackend::new(responses));
        let set = InstructionSet::from_texts(texts);
        let out = restructure(&set, &backend, &RestructureConfig::default());
        assert!(out.is_ok(), "{name}: {:?}", out.err());
        let file = backend.recorded(description, texts.iter().map(|s| s.to_string()).collect());
        let path = root.join(format!("{name}.json"));
        std::fs::write(&path, serde_json::to_string_pretty(&file).unwrap() + "\n").unwrap();
        println!("{} ({} entries)", path.display(), file.entries.len());
    }
}
