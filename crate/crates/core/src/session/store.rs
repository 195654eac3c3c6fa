//! Session directory layout:
//!
//! ```text
//! agent.json          manifest
//! agent.pgdl          structure with initial weights (structured mode)
//! weights.bin         current weights
//! base.bin            initial weights
//! instructions.jsonl
//! demos/<id>.frames
//! transcripts/<n>.json
//! log.jsonl
//! eval.csv
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{compile_racing, AgentInstance, AgentMode, CachedStructure, EvalMatrix, SessionError, SessionLog};
use crate::graph::DensePolicy;
use crate::policy::PolicyModel;
use crate::restructure::{Instruction, InstructionSet, LlmTranscript};
use crate::trainer::{Demonstration, TrainConfig, TrainReport};

pub const FORMAT_VERSION: u32 = 1;
const WEIGHTS_MAGIC: &[u8; 4] = b"SPWT";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: u32,
    id: String,
    mode: AgentMode,
    version: u64,
    trial: u32,
    summary: Option<String>,
    train_config: TrainConfig,
    submitted: bool,
    next_demo: u64,
    next_instruction: u64,
    track_seed: u64,
    dense_sizes: Option<Vec<usize>>,
    demo_order: Vec<String>,
    cache: BTreeMap<String, CachedStructure>,
    last_report: Option<TrainReport>,
}

/// Magic, format version, count, little-endian values, then a SHA-256 of
/// everything before it.
pub fn write_weights(values: &[f64]) -> Vec<u8> {
    let mut b = Vec::with_capacity(16 + values.len() * 8 + 32);
    b.extend_from_slice(WEIGHTS_MAGIC);
    b.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    b.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        b.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&b);
    b.extend_from_slice(&digest);
    b
}

pub fn read_weights(bytes: &[u8]) -> Result<Vec<f64>, SessionError> {
    let corrupt = |detail: &str| SessionError::Corrupt { file: "weights".into(), detail: detail.into() };
    if bytes.len() < 48 || &bytes[..4] != WEIGHTS_MAGIC {
        return Err(corrupt("bad header or truncated"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch"));
    }
    let format = u32::from_le_bytes(body[4..8].try_into().unwrap());
    if format != FORMAT_VERSION {
        return Err(SessionError::Version { found: format, expected: FORMAT_VERSION });
    }
    let n = u64::from_le_bytes(body[8..16].try_into().unwrap()) as usize;
    if body.len() != 16 + n * 8 {
        return Err(corrupt("length does not match count"));
    }
    Ok(body[16..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

fn corrupt(file: &str, detail: impl ToString) -> SessionError {
    SessionError::Corrupt { file: file.into(), detail: detail.to_string() }
}

fn read(dir: &Path, name: &str) -> Result<String, SessionError> {
    fs::read_to_string(dir.join(name)).map_err(|e| corrupt(name, e))
}

impl AgentInstance {
    pub fn persist(&self, dir: &Path) -> Result<(), SessionError> {
        fs::create_dir_all(dir.join("demos"))?;
        fs::create_dir_all(dir.join("transcripts"))?;
        let manifest = Manifest {
            format: FORMAT_VERSION,
            id: self.id.clone(),
            mode: self.mode,
            version: self.version,
            trial: self.trial,
            summary: self.summary.clone(),
            train_config: self.train_config.clone(),
            submitted: self.submitted,
            next_demo: self.next_demo,
            next_instruction: self.instructions.next_id,
            track_seed: self.track_seed,
            dense_sizes: match &self.base {
                PolicyModel::Dense(d) => Some(d.sizes.clone()),
                PolicyModel::Structured(_) => None,
            },
            demo_order: self.demos.iter().map(|d| d.meta.id.clone()).collect(),
            cache: self.cache.clone(),
            last_report: self.last_report.clone(),
        };
        fs::write(dir.join("agent.json"), serde_json::to_string_pretty(&manifest).map_err(std::io::Error::other)?)?;
        if let Some(src) = self.source() {
            fs::write(dir.join("agent.pgdl"), src)?;
        }
        fs::write(dir.join("weights.bin"), write_weights(self.current.params()))?;
        fs::write(dir.join("base.bin"), write_weights(self.base.params()))?;
        let instr: String = self
            .instructions
            .items
            .iter()
            .map(|i| serde_json::to_string(i).expect("instruction serializes") + "\n")
            .collect();
        fs::write(dir.join("instructions.jsonl"), instr)?;
        for entry in fs::read_dir(dir.join("demos"))? {
            fs::remove_file(entry?.path())?;
        }
        for d in &self.demos {
            d.write_frames(fs::File::create(dir.join("demos").join(format!("{}.frames", d.meta.id)))?)?;
        }
        for entry in fs::read_dir(dir.join("transcripts"))? {
            fs::remove_file(entry?.path())?;
        }
        for (n, t) in self.transcripts.iter().enumerate() {
            fs::write(
                dir.join("transcripts").join(format!("{n:04}.json")),
                serde_json::to_string_pretty(t).map_err(std::io::Error::other)?,
            )?;
        }
        fs::write(dir.join("log.jsonl"), self.log.to_jsonl())?;
        fs::write(dir.join("eval.csv"), self.eval.to_csv())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, SessionError> {
        let m: Manifest = serde_json::from_str(&read(dir, "agent.json")?).map_err(|e| corrupt("agent.json", e))?;
        if m.format != FORMAT_VERSION {
            return Err(SessionError::Version { found: m.format, expected: FORMAT_VERSION });
        }
        let weights = |name: &str| -> Result<Vec<f64>, SessionError> {
            let bytes = fs::read(dir.join(name)).map_err(|e| corrupt(name, e))?;
            read_weights(&bytes).map_err(|e| match e {
                SessionError::Corrupt { detail, .. } => corrupt(name, detail),
                e => e,
            })
        };
        let (current_w, base_w) = (weights("weights.bin")?, weights("base.bin")?);
        let mut base = match m.mode {
            AgentMode::Structured => PolicyModel::Structured(Box::new(compile_racing(&read(dir, "agent.pgdl")?)?)),
            AgentMode::Dense => {
                let sizes = m.dense_sizes.clone().ok_or_else(|| corrupt("agent.json", "dense sizes missing"))?;
                PolicyModel::Dense(DensePolicy::zeros(sizes))
            }
        };
        if base.params().len() != base_w.len() || current_w.len() != base_w.len() {
            return Err(corrupt("weights.bin", "weight count does not match the structure"));
        }
        base.set_params(base_w);
        let mut current = base.clone();
        current.set_params(current_w);

        let items = read(dir, "instructions.jsonl")?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str::<Instruction>(l).map_err(|e| corrupt("instructions.jsonl", e)))
            .collect::<Result<Vec<_>, _>>()?;
        let instructions = InstructionSet { items, next_id: m.next_instruction };

        let mut demos = Vec::new();
        for id in &m.demo_order {
            let name = format!("demos/{id}.frames");
            let f = fs::File::open(dir.join(&name)).map_err(|e| corrupt(&name, e))?;
            demos.push(Demonstration::read_frames(std::io::BufReader::new(f)).map_err(|e| corrupt(&name, e))?);
        }

        let mut names: Vec<_> = fs::read_dir(dir.join("transcripts"))
            .map_err(|e| corrupt("transcripts", e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        names.sort();
        let transcripts = names
            .iter()
            .map(|p| {
                let text = fs::read_to_string(p).map_err(|e| corrupt("transcripts", e))?;
                serde_json::from_str::<LlmTranscript>(&text).map_err(|e| corrupt("transcripts", e))
            })
            .collect::<Result<Vec<_>, _>>()?;

        let log = SessionLog::from_jsonl(&read(dir, "log.jsonl")?).map_err(|e| corrupt("log.jsonl", e))?;
        let eval = EvalMatrix::from_csv(&read(dir, "eval.csv")?).map_err(|e| corrupt("eval.csv", e))?;

        Ok(Self {
            id: m.id,
            mode: m.mode,
            instructions,
            demos,
            base,
            current,
            summary: m.summary,
            version: m.version,
            trial: m.trial,
            train_config: m.train_config,
            log,
            transcripts,
            eval,
            cache: m.cache,
            last_report: m.last_report,
            submitted: m.submitted,
            next_demo: m.next_demo,
            track_seed: m.track_seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_round_trip_and_detect_truncation() {
        let w = vec![0.1, -3.5, f64::MIN_POSITIVE, 1e300];
        let b = write_weights(&w);
        assert_eq!(read_weights(&b).unwrap(), w);
        assert!(matches!(read_weights(&b[..b.len() - 9]), Err(SessionError::Corrupt { .. })));
        let mut flipped = b.clone();
        flipped[20] ^= 1;
        assert!(matches!(read_weights(&flipped), Err(SessionError::Corrupt { .. })));
    }
}
