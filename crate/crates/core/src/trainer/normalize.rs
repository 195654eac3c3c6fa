use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::sim::{COL_THETA, FLAT_WIDTH, TILES_AHEAD, TILE_FEATURES};

/// Per-dimension affine map `(x - center) / half_range`, chosen from the
/// observation schema so the physical range of every dimension lands in [-1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub center: Vec<f64>,
    pub half_range: Vec<f64>,
}

impl NormalizationSpec {
    pub fn identity(width: usize) -> Self {
        Self { center: vec![0.0; width], half_range: vec![1.0; width] }
    }

    /// Racing observation: relative tile headings are divided by π. Offsets,
    /// border flags, speed (already 0..1) and heading (already -1..1) pass through.
    pub fn racing() -> Self {
        let mut n = Self::identity(FLAT_WIDTH);
        for t in 0..TILES_AHEAD {
            n.half_range[t * TILE_FEATURES + COL_THETA] = PI;
        }
        n
    }

    pub fn width(&self) -> usize {
        self.center.len()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.center.iter().zip(&self.half_range))
            .map(|(v, (c, h))| (v - c) / h)
            .collect()
    }

    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.center.iter().zip(&self.half_range))
            .map(|(v, (c, h))| v * h + c)
            .collect()
    }
}
