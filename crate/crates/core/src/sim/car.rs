use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::track::{wrap_angle, Track};
use super::SimError;

/// Simulation step in seconds; 1000 steps make 40 s.
pub const DT: f64 = 1.0 / 25.0;

/// Kinematic model constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dynamics {
    pub accel: f64,
    pub brake: f64,
    pub drag: f64,
    /// Yaw rate per unit of steer per unit of speed.
    pub steer: f64,
    /// World units travelled per second per unit of speed.
    pub distance_per_speed: f64,
    /// Speed multiplier applied per step while off the road.
    pub grass_factor: f64,
}

impl Default for Dynamics {
    fn default() -> Self {
        Self {
            accel: 50.0,
            brake: 200.0,
            drag: 0.5,
            steer: 0.25,
            distance_per_speed: 0.1,
            grass_factor: 0.98,
        }
    }
}

impl Dynamics {
    pub fn top_speed(&self) -> f64 {
        self.accel / self.drag
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ActionVector {
    /// -1 full left, +1 full right.
    pub steer: f64,
    pub accelerate: f64,
    pub brake: f64,
}

impl ActionVector {
    pub const NAMES: [&'static str; 3] = ["steer", "accelerate", "brake"];

    pub fn new(steer: f64, accelerate: f64, brake: f64) -> Self {
        Self { steer, accelerate, brake }
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.steer, self.accelerate, self.brake]
    }

    pub fn clipped(self) -> Self {
        Self {
            steer: self.steer.clamp(-1.0, 1.0),
            accelerate: self.accelerate.clamp(0.0, 1.0),
            brake: self.brake.clamp(0.0, 1.0),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.steer.is_finite() && self.accelerate.is_finite() && self.brake.is_finite()
    }
}

/// Seeded additive Gaussian noise on every action dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    /// Noise levels 1 and 2.
    pub const LEVELS: [f64; 2] = [0.05, 0.10];

    pub fn level(level: usize, seed: u64) -> Option<Self> {
        match level {
            0 => None,
            l => Self::LEVELS.get(l - 1).map(|&sigma| Self { sigma, seed }),
        }
    }

    /// Perturbation for step `step`; depends only on `(seed, step)`.
    pub fn sample(&self, step: u64) -> [f64; 3] {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(step);
        let normal = Normal::new(0.0, self.sigma).expect("finite sigma");
        [normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarState {
    pub position: [f64; 2],
    pub heading: f64,
    /// 0..100 scale.
    pub speed: f64,
    /// Index of the tile nearest to the car.
    pub tile: usize,
    pub covered: Vec<bool>,
    pub covered_count: usize,
    pub steps: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StartConfig {
    pub tile: usize,
    /// Positive is left of the centerline.
    pub lateral_offset: f64,
    /// Radians relative to the tile heading, positive to the left.
    pub heading_offset: f64,
    pub speed: f64,
}

impl StartConfig {
    pub fn nominal() -> Self {
        Self { tile: 0, lateral_offset: 0.0, heading_offset: 0.0, speed: 40.0 }
    }
}

impl CarState {
    pub fn start(track: &Track, cfg: &StartConfig) -> Self {
        let tile_index = cfg.tile % track.len();
        let tile = track.tile(tile_index);
        let left = [-tile.heading.sin(), tile.heading.cos()];
        Self {
            position: [
                tile.center[0] + cfg.lateral_offset * left[0],
                tile.center[1] + cfg.lateral_offset * left[1],
            ],
            heading: wrap_angle(tile.heading + cfg.heading_offset),
            speed: cfg.speed.max(0.0),
            tile: tile_index,
            covered: vec![false; track.len()],
            covered_count: 0,
            steps: 0,
        }
    }

    /// Signed lateral offset from the nearest tile center, positive to the left.
    pub fn lateral_offset(&self, track: &Track) -> f64 {
        track.tile_frame(self.tile, self.position).0
    }

    pub fn on_road(&self, track: &Track) -> bool {
        self.lateral_offset(track).abs() <= track.tile(self.tile).half_width
    }

    /// Car heading relative to the nearest tile, positive when the car points left of the road.
    pub fn angle_to_track(&self, track: &Track) -> f64 {
        wrap_angle(self.heading - track.tile(self.tile).heading)
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite()) && self.heading.is_finite() && self.speed.is_finite()
    }
}

/// Advances the car by one step of [`DT`].
pub fn step(
    track: &Track,
    state: &CarState,
    action: ActionVector,
    noise: Option<&NoiseSpec>,
    dynamics: &Dynamics,
) -> Result<CarState, SimError> {
    if !action.is_finite() {
        return Err(SimError::NonFiniteAction { step: state.steps });
    }
    let mut a = action;
    if let Some(n) = noise {
        let e = n.sample(state.steps);
        a = ActionVector::new(a.steer + e[0], a.accelerate + e[1], a.brake + e[2]);
    }
    let a = a.clipped();
    let mut next = state.clone();
    next.steps += 1;

    next.speed += (dynamics.accel * a.accelerate - dynamics.brake * a.brake - dynamics.drag * state.speed) * DT;
    next.speed = next.speed.max(0.0);
    if !state.on_road(track) {
        next.speed *= dynamics.grass_factor;
    }
    // Positive steer turns right, i.e. clockwise.
    next.heading = wrap_angle(state.heading - dynamics.steer * a.steer * next.speed * DT);
    let dist = next.speed * dynamics.distance_per_speed * DT;
    next.position[0] += dist * next.heading.cos();
    next.position[1] += dist * next.heading.sin();

    if !next.is_finite() {
        return Err(SimError::NonFiniteState { step: next.steps });
    }

    next.tile = track.nearest_tile_near(next.position, state.tile);
    update_coverage(track, state.tile, &mut next);
    Ok(next)
}

/// Marks tiles passed while on the road. Forward progress of more than a few tiles
/// in one step (cutting across grass) only credits the landing tile.
fn update_coverage(track: &Track, prev: usize, next: &mut CarState) {
    if !next.on_road(track) {
        return;
    }
    let n = track.len();
    let forward = (next.tile + n - prev) % n;
    let mark = |i: usize, s: &mut CarState| {
        if !s.covered[i] {
            s.covered[i] = true;
            s.covered_count += 1;
        }
    };
    if forward == 0 || forward > n / 2 {
        return;
    }
    if forward <= 8 {
        for k in 1..=forward {
            mark((prev + k) % n, next);
        }
    } else {
        mark(next.tile, next);
    }
}
