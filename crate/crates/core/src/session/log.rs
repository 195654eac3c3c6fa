use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    DemoAdded { id: String, frames: usize },
    DemoRemoved { id: String },
    DemoToggled { id: String, used: bool },
    InstructionAdded { id: String, text: String },
    InstructionRemoved { id: String },
    InstructionToggled { id: String, used: bool },
    Restructured { bundle_hash: String, attempts: usize, cached: bool },
    Trained { trial: u32, seed: u64, frames: usize, final_loss: f64, checksum: String },
    /// Weights went back to the program's initial values because no frames are in use.
    WeightsReset { trial: u32 },
    Rollout { trial: u32, track: u64, eas: f64 },
    Battery { trial: u32, cells: usize, absent: usize },
    Submitted { trial: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEvent {
    pub seq: u64,
    pub version: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Append-only record of everything that happened to an agent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionLog {
    pub events: Vec<LogEvent>,
}

impl SessionLog {
    pub fn push(&mut self, version: u64, kind: EventKind) {
        let seq = self.events.len() as u64 + 1;
        self.events.push(LogEvent { seq, version, kind });
    }

    /// Test rollouts so far; gates submission.
    pub fn tests(&self) -> usize {
        self.events.iter().filter(|e| matches!(e.kind, EventKind::Rollout { .. })).count()
    }

    pub fn to_jsonl(&self) -> String {
        self.events.iter().map(|e| serde_json::to_string(e).expect("log event serializes") + "\n").collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self, String> {
        let events = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(n, l)| serde_json::from_str(l).map_err(|e| format!("log line {}: {e}", n + 1)))
            .collect::<Result<Vec<LogEvent>, _>>()?;
        for (i, e) in events.iter().enumerate() {
            if e.seq != i as u64 + 1 {
                return Err(format!("log sequence gap at line {}", i + 1));
            }
        }
        Ok(Self { events })
    }
}
