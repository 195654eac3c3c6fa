use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimError;

/// Track half-width in world units.
pub const HALF_WIDTH: f64 = 0.2;
pub const TRACK_TILES: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tile {
    pub center: [f64; 2],
    /// Direction of travel, radians, counter-clockwise from +x.
    pub heading: f64,
    pub half_width: f64,
    pub border: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub seed: u64,
    pub tiles: Vec<Tile>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackConfig {
    pub n_tiles: usize,
    /// Arc length between consecutive tile centers.
    pub tile_spacing: f64,
    pub checkpoints: usize,
    /// Checkpoint radii are drawn from `R * (1 ± radial_noise)`.
    pub radial_noise: f64,
    /// Largest allowed heading change between consecutive tiles.
    pub max_turn_per_tile: f64,
    /// Heading change per tile above which a tile is flagged as a sharp corner.
    pub border_threshold: f64,
    pub max_attempts: usize,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self {
            n_tiles: TRACK_TILES,
            tile_spacing: 0.1,
            checkpoints: 10,
            radial_noise: 0.3,
            max_turn_per_tile: 6.0_f64.to_radians(),
            border_threshold: 2.5_f64.to_radians(),
            max_attempts: 64,
        }
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let mut a = (a + PI).rem_euclid(TAU) - PI;
    if a <= -PI {
        a += TAU;
    }
    a
}

/// Periodic Catmull-Rom interpolation of evenly spaced samples at `t ∈ [0, 1)`.
fn periodic_spline(samples: &[f64], t: f64) -> f64 {
    let n = samples.len();
    let x = t.rem_euclid(1.0) * n as f64;
    let i = x.floor() as usize % n;
    let u = x - x.floor();
    let p = |k: isize| samples[(i as isize + k).rem_euclid(n as isize) as usize];
    let (p0, p1, p2, p3) = (p(-1), p(0), p(1), p(2));
    0.5 * (2.0 * p1
        + (-p0 + p2) * u
        + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * u * u
        + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * u * u * u)
}

pub fn generate_track(seed: u64, n_tiles: usize) -> Result<Track, SimError> {
    generate_track_with(seed, &TrackConfig { n_tiles, ..TrackConfig::default() })
}

/// Random radial checkpoints around a ring, interpolated into a smooth star-shaped
/// loop, resampled at uniform arc length. Retries with fresh checkpoints until the
/// curvature cap holds.
pub fn generate_track_with(seed: u64, cfg: &TrackConfig) -> Result<Track, SimError> {
    if cfg.n_tiles < 50 {
        return Err(SimError::TooFewTiles(cfg.n_tiles));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..cfg.max_attempts {
        let radii: Vec<f64> = (0..cfg.checkpoints)
            .map(|_| {
                if cfg.radial_noise > 0.0 {
                    1.0 + rng.gen_range(-cfg.radial_noise..=cfg.radial_noise)
                } else {
                    1.0
                }
            })
            .collect();
        let tiles = resample(&radii, cfg);
        let max_turn = (0..tiles.len())
            .map(|i| turn_at(&tiles, i).abs())
            .fold(0.0, f64::max);
        if max_turn < cfg.max_turn_per_tile {
            let mut tiles = tiles;
            let turns: Vec<f64> = (0..tiles.len()).map(|i| turn_at(&tiles, i)).collect();
            for (t, turn) in tiles.iter_mut().zip(turns) {
                t.border = turn.abs() > cfg.border_threshold;
            }
            return Ok(Track { seed, tiles });
        }
    }
    Err(SimError::TrackGeneration { seed, attempts: cfg.max_attempts })
}

/// Heading change from tile `i` to tile `i + 1`.
pub fn turn_at(tiles: &[Tile], i: usize) -> f64 {
    let n = tiles.len();
    wrap_angle(tiles[(i + 1) % n].heading - tiles[i].heading)
}

fn resample(radii: &[f64], cfg: &TrackConfig) -> Vec<Tile> {
    let dense = cfg.n_tiles * 16;
    let pts: Vec<[f64; 2]> = (0..dense)
        .map(|k| {
            let t = k as f64 / dense as f64;
            let r = periodic_spline(radii, t);
            let phi = TAU * t;
            [r * phi.cos(), r * phi.sin()]
        })
        .collect();
    let mut cum = vec![0.0; dense + 1];
    for k in 0..dense {
        let (a, b) = (pts[k], pts[(k + 1) % dense]);
        cum[k + 1] = cum[k] + (b[0] - a[0]).hypot(b[1] - a[1]);
    }
    let total = cum[dense];
    let scale = cfg.n_tiles as f64 * cfg.tile_spacing / total;

    let mut centers = Vec::with_capacity(cfg.n_tiles);
    let mut seg = 0;
    for i in 0..cfg.n_tiles {
        let s = total * i as f64 / cfg.n_tiles as f64;
        while cum[seg + 1] < s {
            seg += 1;
        }
        let (a, b) = (pts[seg], pts[(seg + 1) % dense]);
        let len = cum[seg + 1] - cum[seg];
        let u = if len > 0.0 { (s - cum[seg]) / len } else { 0.0 };
        centers.push([
            (a[0] + (b[0] - a[0]) * u) * scale,
            (a[1] + (b[1] - a[1]) * u) * scale,
        ]);
    }
    let n = centers.len();
    (0..n)
        .map(|i| {
            let (p, q) = (centers[(i + n - 1) % n], centers[(i + 1) % n]);
            Tile {
                center: centers[i],
                heading: (q[1] - p[1]).atan2(q[0] - p[0]),
                half_width: HALF_WIDTH,
                border: false,
            }
        })
        .collect()
}

impl Track {
    /// Open straight along +x with regular spacing; handy for dynamics checks.
    pub fn straight(n: usize) -> Self {
        let tiles = (0..n)
            .map(|i| Tile { center: [i as f64 * 0.1, 0.0], heading: 0.0, half_width: HALF_WIDTH, border: false })
            .collect();
        Self { seed: 0, tiles }
    }

    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    pub fn tile(&self, i: usize) -> &Tile {
        &self.tiles[i % self.tiles.len()]
    }

    /// Signed offsets of `pos` in tile `i`'s frame: `(lateral, longitudinal)`,
    /// lateral positive to the left of the direction of travel.
    pub fn tile_frame(&self, i: usize, pos: [f64; 2]) -> (f64, f64) {
        let t = self.tile(i);
        let (dx, dy) = (pos[0] - t.center[0], pos[1] - t.center[1]);
        let (c, s) = (t.heading.cos(), t.heading.sin());
        (-s * dx + c * dy, c * dx + s * dy)
    }

    fn dist2(&self, i: usize, pos: [f64; 2]) -> f64 {
        let c = self.tile(i).center;
        (c[0] - pos[0]).powi(2) + (c[1] - pos[1]).powi(2)
    }

    pub fn nearest_tile(&self, pos: [f64; 2]) -> usize {
        (0..self.len())
            .min_by(|&a, &b| self.dist2(a, pos).total_cmp(&self.dist2(b, pos)))
            .unwrap_or(0)
    }

    /// Nearest tile searched in a window around `hint`, falling back to a full
    /// scan when the window minimum is far away.
    pub fn nearest_tile_near(&self, pos: [f64; 2], hint: usize) -> usize {
        let n = self.len() as isize;
        let best = (-8..=32)
            .map(|k| (hint as isize + k).rem_euclid(n) as usize)
            .min_by(|&a, &b| self.dist2(a, pos).total_cmp(&self.dist2(b, pos)))
            .unwrap_or(0);
        if self.dist2(best, pos) > 1.0 {
            self.nearest_tile(pos)
        } else {
            best
        }
    }

    /// Mean distance between consecutive tile centers.
    pub fn mean_spacing(&self) -> f64 {
        let n = self.len();
        (0..n)
            .map(|i| {
                let (a, b) = (self.tiles[i].center, self.tiles[(i + 1) % n].center);
                (b[0] - a[0]).hypot(b[1] - a[1])
            })
            .sum::<f64>()
            / n as f64
    }

    /// Tile whose surrounding window has the sharpest total turning.
    pub fn corner_tile(&self) -> usize {
        self.window_turn_extreme(true)
    }

    /// Tile whose surrounding window is closest to straight.
    pub fn straight_tile(&self) -> usize {
        self.window_turn_extreme(false)
    }

    fn window_turn_extreme(&self, max: bool) -> usize {
        let n = self.len();
        let score = |i: usize| -> f64 {
            (0..8).map(|k| turn_at(&self.tiles, (i + k) % n).abs()).sum()
        };
        let mut best = 0;
        for i in 1..n {
            let better = if max { score(i) > score(best) } else { score(i) < score(best) };
            if better {
                best = i;
            }
        }
        // Start a few tiles before the corner so the car meets it ahead.
        if max {
            (best + n - 4) % n
        } else {
            best
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(generate_track(7, 300).unwrap(), generate_track(7, 300).unwrap());
        assert_ne!(generate_track(7, 300).unwrap(), generate_track(8, 300).unwrap());
    }

    #[test]
    fn circle_has_constant_curvature() {
        let cfg = TrackConfig { radial_noise: 0.0, ..TrackConfig::default() };
        let t = generate_track_with(1, &cfg).unwrap();
        let turns: Vec<f64> = (0..t.len()).map(|i| turn_at(&t.tiles, i)).collect();
        let expected = TAU / t.len() as f64;
        for turn in &turns {
            assert!((turn - expected).abs() < 1e-6, "{turn} vs {expected}");
        }
        assert!(t.tiles.iter().all(|x| x.border == t.tiles[0].border));
    }

    #[test]
    fn hundred_seeds_close_and_respect_the_cap() {
        let cfg = TrackConfig::default();
        for seed in 0..100 {
            let t = generate_track(seed, 300).unwrap();
            let (a, b) = (t.tiles[t.len() - 1].center, t.tiles[0].center);
            assert!((b[0] - a[0]).hypot(b[1] - a[1]) < cfg.tile_spacing * 1.5, "seed {seed}");
            for i in 0..t.len() {
                assert!(turn_at(&t.tiles, i).abs() < cfg.max_turn_per_tile);
                assert_eq!(t.tiles[i].border, turn_at(&t.tiles, i).abs() > cfg.border_threshold);
            }
            assert!((t.mean_spacing() - cfg.tile_spacing).abs() < 1e-3);
        }
    }

    #[test]
    fn too_few_tiles() {
        assert_eq!(generate_track(1, 49), Err(SimError::TooFewTiles(49)));
    }

    #[test]
    fn impossible_cap_names_the_seed() {
        let cfg = TrackConfig { max_turn_per_tile: 0.001, max_attempts: 3, ..Default::default() };
        assert_eq!(
            generate_track_with(42, &cfg),
            Err(SimError::TrackGeneration { seed: 42, attempts: 3 })
        );
    }

    #[test]
    fn tile_frame_signs() {
        let t = generate_track(3, 300).unwrap();
        let tile = t.tiles[10];
        let left = [-tile.heading.sin(), tile.heading.cos()];
        let pos = [tile.center[0] + 0.1 * left[0], tile.center[1] + 0.1 * left[1]];
        let (lat, lon) = t.tile_frame(10, pos);
        assert!((lat - 0.1).abs() < 1e-12);
        assert!(lon.abs() < 1e-12);
    }

    #[test]
    fn wrap_angle_range() {
        for a in [-10.0, -PI, -1.0, 0.0, 1.0, PI, 10.0] {
            let w = wrap_angle(a);
            assert!(w > -PI - 1e-12 && w <= PI + 1e-12);
            assert!(((w - a) / TAU - ((w - a) / TAU).round()).abs() < 1e-9);
        }
    }
}
