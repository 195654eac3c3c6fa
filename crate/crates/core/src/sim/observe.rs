use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::car::CarState;
use super::track::{wrap_angle, Track};

pub const TILES_AHEAD: usize = 8;
pub const TILE_FEATURES: usize = 7;
pub const INDICATORS: usize = 7;
/// 56 tile values followed by normalized speed and heading.
pub const FLAT_WIDTH: usize = TILES_AHEAD * TILE_FEATURES + 2;

/// Column of each tile feature; the remaining columns are reserved and zero.
pub const COL_X: usize = 0;
pub const COL_Y: usize = 1;
pub const COL_THETA: usize = 4;
pub const COL_BORDER: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub tiles: [[f64; TILE_FEATURES]; TILES_AHEAD],
    pub indicators: [f64; INDICATORS],
}

impl Observation {
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(FLAT_WIDTH);
        for t in &self.tiles {
            v.extend_from_slice(t);
        }
        v.push(self.indicators[0]);
        v.push(self.indicators[1]);
        v
    }

    pub fn from_flat(v: &[f64]) -> Option<Self> {
        if v.len() != FLAT_WIDTH {
            return None;
        }
        let mut tiles = [[0.0; TILE_FEATURES]; TILES_AHEAD];
        for (i, t) in tiles.iter_mut().enumerate() {
            t.copy_from_slice(&v[i * TILE_FEATURES..(i + 1) * TILE_FEATURES]);
        }
        let mut indicators = [0.0; INDICATORS];
        indicators[0] = v[FLAT_WIDTH - 2];
        indicators[1] = v[FLAT_WIDTH - 1];
        Some(Self { tiles, indicators })
    }

    /// Speed on the 0..100 scale.
    pub fn speed(&self) -> f64 {
        self.indicators[0] * 100.0
    }
}

/// Nearest tile plus the next seven, seen from the car.
pub fn observe(track: &Track, state: &CarState) -> Observation {
    let mut tiles = [[0.0; TILE_FEATURES]; TILES_AHEAD];
    let (c, s) = (state.heading.cos(), state.heading.sin());
    for (k, row) in tiles.iter_mut().enumerate() {
        let i = state.tile + k;
        let tile = track.tile(i);
        let (lateral, _) = track.tile_frame(i, state.position);
        let (dx, dy) = (tile.center[0] - state.position[0], tile.center[1] - state.position[1]);
        row[COL_X] = lateral;
        row[COL_Y] = c * dx + s * dy;
        row[COL_THETA] = wrap_angle(tile.heading - state.heading);
        row[COL_BORDER] = if tile.border { 1.0 } else { 0.0 };
    }
    let mut indicators = [0.0; INDICATORS];
    indicators[0] = state.speed / 100.0;
    indicators[1] = wrap_angle(state.heading) / PI;
    Observation { tiles, indicators }
}

/// Named views into the flat observation, used to bind PGDL `obs` declarations.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSchema {
    pub entries: Vec<SchemaEntry>,
    pub width: usize,
    /// Accept any name, binding fresh sequential slots.
    pub open: bool,
    /// Allowed action names with their required clip ranges. Empty means any.
    pub actions: Vec<(String, (f64, f64))>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemaEntry {
    pub name: String,
    /// `None` for scalars.
    pub len: Option<usize>,
    pub indices: Vec<usize>,
    pub description: String,
}

impl ObservationSchema {
    /// The racing observation: tile columns as 8-vectors, per-tile scalars, speed, heading.
    pub fn racing() -> Self {
        let mut entries = Vec::new();
        let cols = [
            ("tile_x", COL_X, "signed lateral offset of the car from each tile center, positive when the car is left of center"),
            ("tile_y", COL_Y, "signed longitudinal distance from the car to each tile center"),
            ("tile_theta", COL_THETA, "heading of each tile relative to the car, positive when the road turns left"),
            ("tile_border", COL_BORDER, "1 if the tile is a sharp corner, else 0"),
        ];
        for (name, col, desc) in cols {
            entries.push(SchemaEntry {
                name: name.to_string(),
                len: Some(TILES_AHEAD),
                indices: (0..TILES_AHEAD).map(|t| t * TILE_FEATURES + col).collect(),
                description: desc.to_string(),
            });
        }
        for (name, col, _) in cols {
            for t in 0..TILES_AHEAD {
                entries.push(SchemaEntry {
                    name: format!("{name}_{t}"),
                    len: None,
                    indices: vec![t * TILE_FEATURES + col],
                    description: format!("element {t} of {name}"),
                });
            }
        }
        entries.push(SchemaEntry {
            name: "speed".into(),
            len: None,
            indices: vec![FLAT_WIDTH - 2],
            description: "current speed, 0..100 mapped to 0..1".into(),
        });
        entries.push(SchemaEntry {
            name: "heading".into(),
            len: None,
            indices: vec![FLAT_WIDTH - 1],
            description: "absolute heading, -pi..pi mapped to -1..1".into(),
        });
        Self {
            entries,
            width: FLAT_WIDTH,
            open: false,
            actions: vec![
                ("steer".into(), (-1.0, 1.0)),
                ("accelerate".into(), (0.0, 1.0)),
                ("brake".into(), (0.0, 1.0)),
            ],
        }
    }

    /// Any observation name is accepted and bound to the next free slots.
    pub fn open() -> Self {
        Self { entries: Vec::new(), width: 0, open: true, actions: Vec::new() }
    }

    pub fn get(&self, name: &str) -> Option<&SchemaEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}
