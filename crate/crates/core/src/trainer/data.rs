use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{NormalizationSpec, TrainError};
use crate::sim::{ActionVector, RolloutRecord, StartConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemoSource {
    Human,
    Policy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoMeta {
    pub id: String,
    pub source: DemoSource,
    pub used: bool,
    pub track_seed: Option<u64>,
    pub start: Option<StartConfig>,
    pub action_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub meta: DemoMeta,
    pub frames: Vec<Frame>,
}

impl Demonstration {
    pub fn new(id: impl Into<String>, source: DemoSource, action_names: Vec<String>, frames: Vec<Frame>) -> Self {
        Self {
            meta: DemoMeta { id: id.into(), source, used: true, track_seed: None, start: None, action_names },
            frames,
        }
    }

    /// Flattened observations and clipped actions of every recorded step.
    pub fn from_rollout(id: impl Into<String>, source: DemoSource, rec: &RolloutRecord) -> Self {
        let frames = rec
            .frames
            .iter()
            .map(|s| Frame { obs: s.observation.flatten(), action: s.action.clipped().to_array().to_vec() })
            .collect();
        let mut d = Self::new(id, source, ActionVector::NAMES.iter().map(|s| s.to_string()).collect(), frames);
        d.meta.track_seed = Some(rec.track_seed);
        d.meta.start = Some(rec.start);
        d
    }

    pub fn id(&self) -> &str {
        &self.meta.id
    }

    pub fn obs_width(&self) -> Option<usize> {
        self.frames.first().map(|f| f.obs.len())
    }

    /// Writes a JSON header line then one `id,step,obs…,action…` line per frame.
    pub fn write_frames(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "# {}", serde_json::to_string(&self.meta).map_err(io::Error::other)?)?;
        for (step, f) in self.frames.iter().enumerate() {
            let mut line = format!("{},{step}", self.meta.id);
            for v in f.obs.iter().chain(&f.action) {
                line.push(',');
                line.push_str(&v.to_string());
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_frames(r: impl BufRead) -> Result<Self, TrainError> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| TrainError::Format("empty demonstration file".into()))?
            .map_err(|e| TrainError::Format(e.to_string()))?;
        let meta: DemoMeta = serde_json::from_str(header.trim_start_matches('#').trim())
            .map_err(|e| TrainError::Format(format!("header: {e}")))?;
        let na = meta.action_names.len();
        let mut frames = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line.map_err(|e| TrainError::Format(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let id = parts.next().unwrap_or_default();
            if id != meta.id {
                return Err(TrainError::Format(format!("line {}: demo id `{id}` does not match `{}`", n + 2, meta.id)));
            }
            let step: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| TrainError::Format(format!("line {}: bad step", n + 2)))?;
            if step != frames.len() {
                return Err(TrainError::Format(format!("line {}: expected step {}, got {step}", n + 2, frames.len())));
            }
            let vals: Vec<f64> = parts
                .map(|s| s.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| TrainError::Format(format!("line {}: {e}", n + 2)))?;
            if vals.len() < na {
                return Err(TrainError::Format(format!("line {}: too few values", n + 2)));
            }
            let (obs, action) = vals.split_at(vals.len() - na);
            frames.push(Frame { obs: obs.to_vec(), action: action.to_vec() });
        }
        let d = Self { meta, frames };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let w = self.obs_width();
        for (i, f) in self.frames.iter().enumerate() {
            if Some(f.obs.len()) != w {
                return Err(TrainError::Format(format!("frame {i}: observation width {} differs", f.obs.len())));
            }
            if f.action.len() != self.meta.action_names.len() {
                return Err(TrainError::Format(format!("frame {i}: action width {}", f.action.len())));
            }
        }
        Ok(())
    }
}

/// Normalized frames pooled from the demonstrations marked for training.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub action_names: Vec<String>,
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn from_demos<'a>(
        demos: impl IntoIterator<Item = &'a Demonstration>,
        norm: &NormalizationSpec,
    ) -> Result<Self, TrainError> {
        let mut ds = Dataset { action_names: Vec::new(), obs: Vec::new(), actions: Vec::new() };
        for d in demos.into_iter().filter(|d| d.meta.used) {
            if ds.obs.is_empty() && ds.action_names.is_empty() {
                ds.action_names = d.meta.action_names.clone();
            } else if ds.action_names != d.meta.action_names {
                return Err(TrainError::Format(format!("demo `{}` has different action names", d.meta.id)));
            }
            for f in &d.frames {
                if f.obs.len() != norm.width() {
                    return Err(TrainError::Format(format!(
                        "demo `{}`: observation width {} does not match the schema width {}",
                        d.meta.id,
                        f.obs.len(),
                        norm.width()
                    )));
                }
                ds.obs.push(norm.normalize(&f.obs));
                ds.actions.push(f.action.clone());
            }
        }
        if ds.obs.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }
}
