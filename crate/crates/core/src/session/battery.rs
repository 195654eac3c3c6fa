use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::sim::{
    edge_case_starts, generate_track, run_rollout, unseen_battery_starts, NoiseSpec, Policy, StartConfig,
    Track, DEFAULT_CUTOFF_STEPS, TRACK_TILES,
};

/// Which rollouts make up one evaluation row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatterySpec {
    pub seen_track: u64,
    pub unseen_tracks: Vec<u64>,
    /// Noise levels run from the nominal start on the seen track.
    pub noise_levels: Vec<usize>,
    pub noise_seed: u64,
    pub cutoff_steps: u64,
    pub edge_cases: bool,
}

impl Default for BatterySpec {
    fn default() -> Self {
        Self {
            seen_track: 0,
            unseen_tracks: (1001..=1010).collect(),
            noise_levels: vec![1, 2],
            noise_seed: 7,
            cutoff_steps: DEFAULT_CUTOFF_STEPS,
            edge_cases: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Condition {
    Unseen { track: u64, start: usize },
    Edge { start: usize },
    Noise { level: usize },
}

impl Condition {
    pub fn label(&self) -> String {
        match self {
            Condition::Unseen { track, start } => format!("unseen/{track}/{start}"),
            Condition::Edge { start } => format!("edge/{start}"),
            Condition::Noise { level } => format!("noise/{level}"),
        }
    }

    pub fn group(&self) -> &'static str {
        match self {
            Condition::Unseen { .. } => "unseen",
            Condition::Edge { .. } => "edge",
            Condition::Noise { .. } => "noise",
        }
    }
}

struct Cell {
    condition: Condition,
    track: u64,
    start: StartConfig,
    noise: Option<NoiseSpec>,
}

impl BatterySpec {
    fn cells(&self) -> Result<Vec<Cell>, String> {
        let load = |seed: u64| generate_track(seed, TRACK_TILES).map_err(|e| e.to_string());
        let mut cells = Vec::new();
        for &t in &self.unseen_tracks {
            for (k, start) in unseen_battery_starts(&load(t)?).into_iter().enumerate() {
                cells.push(Cell { condition: Condition::Unseen { track: t, start: k }, track: t, start, noise: None });
            }
        }
        if self.edge_cases {
            for (k, start) in edge_case_starts(&load(self.seen_track)?).into_iter().enumerate() {
                cells.push(Cell { condition: Condition::Edge { start: k }, track: self.seen_track, start, noise: None });
            }
        }
        for &level in &self.noise_levels {
            cells.push(Cell {
                condition: Condition::Noise { level },
                track: self.seen_track,
                start: StartConfig::nominal(),
                noise: NoiseSpec::level(level, self.noise_seed),
            });
        }
        Ok(cells)
    }

    pub fn conditions(&self) -> Result<Vec<Condition>, String> {
        Ok(self.cells()?.into_iter().map(|c| c.condition).collect())
    }
}

/// Runs every cell in parallel. Failed rollouts become `None`.
pub fn run_battery(policy: &dyn Policy, spec: &BatterySpec) -> Result<Vec<(Condition, Option<f64>)>, String> {
    let cells = spec.cells()?;
    let mut seeds: Vec<u64> = cells.iter().map(|c| c.track).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let tracks: Vec<(u64, Track)> = seeds
        .into_iter()
        .map(|s| generate_track(s, TRACK_TILES).map(|t| (s, t)).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    let track = |seed: u64| &tracks.iter().find(|(s, _)| *s == seed).expect("track loaded").1;
    Ok(cells
        .par_iter()
        .map(|c| {
            let eas = run_rollout(policy, track(c.track), &c.start, c.noise, spec.cutoff_steps).ok().map(|r| r.eas);
            (c.condition, eas)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub version: u64,
    pub trial: u32,
    pub cells: Vec<Option<f64>>,
}

/// One row per evaluated policy version, one column per battery condition.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalMatrix {
    pub columns: Vec<String>,
    pub rows: Vec<EvalRow>,
}

impl EvalMatrix {
    pub fn push(&mut self, version: u64, trial: u32, result: &[(Condition, Option<f64>)]) -> Result<(), String> {
        let cols: Vec<String> = result.iter().map(|(c, _)| c.label()).collect();
        if self.columns.is_empty() {
            self.columns = cols;
        } else if self.columns != cols {
            return Err("battery columns differ from earlier rows".into());
        }
        self.rows.push(EvalRow { version, trial, cells: result.iter().map(|(_, v)| *v).collect() });
        Ok(())
    }

    /// Mean EAS per condition group for one row, skipping absent cells.
    pub fn group_means(&self, row: usize) -> Vec<(String, f64)> {
        let mut acc: Vec<(String, f64, usize)> = Vec::new();
        for (label, v) in self.columns.iter().zip(&self.rows[row].cells) {
            let g = label.split('/').next().unwrap_or("").to_string();
            let Some(v) = v else { continue };
            match acc.iter_mut().find(|(n, _, _)| *n == g) {
                Some(e) => {
                    e.1 += v;
                    e.2 += 1;
                }
                None => acc.push((g, *v, 1)),
            }
        }
        acc.into_iter().map(|(g, s, n)| (g, s / n as f64)).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("version,trial");
        for c in &self.columns {
            s.push(',');
            s.push_str(c);
        }
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!("{},{}", r.version, r.trial));
            for v in &r.cells {
                s.push(',');
                if let Some(v) = v {
                    s.push_str(&v.to_string());
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        let Some(header) = lines.next() else { return Ok(Self::default()) };
        let columns: Vec<String> = header.split(',').skip(2).map(str::to_string).collect();
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != columns.len() + 2 {
                return Err(format!("eval row {} has {} fields", n + 1, parts.len()));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| format!("eval row {}: {e}", n + 1));
            rows.push(EvalRow {
                version: parts[0].parse().map_err(|e| format!("eval row {}: {e}", n + 1))?,
                trial: parts[1].parse().map_err(|e| format!("eval row {}: {e}", n + 1))?,
                cells: parts[2..]
                    .iter()
                    .map(|s| if s.is_empty() { Ok(None) } else { num(s).map(Some) })
                    .collect::<Result<_, _>>()?,
            });
        }
        Ok(Self { columns, rows })
    }
}
