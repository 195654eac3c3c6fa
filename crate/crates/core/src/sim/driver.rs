use super::car::ActionVector;
use super::observe::{Observation, COL_BORDER, COL_THETA, COL_X, TILES_AHEAD};
use super::Policy;

/// Reference driver used to produce demonstrations and to calibrate the dynamics.
///
/// Steering is a lateral-offset plus look-ahead-heading controller; throttle tracks a
/// target speed that drops when a sharp corner is in view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScriptedDriver {
    pub lateral_gain: f64,
    pub heading_gain: f64,
    pub cruise_speed: f64,
    pub corner_speed: f64,
    /// Throttle needed to hold a given speed against drag, per unit of speed.
    pub hold_throttle: f64,
    pub speed_gain: f64,
    pub brake_gain: f64,
}

impl Default for ScriptedDriver {
    fn default() -> Self {
        Self {
            lateral_gain: 2.5,
            heading_gain: 2.0,
            cruise_speed: 65.0,
            corner_speed: 45.0,
            hold_throttle: 0.01,
            speed_gain: 0.1,
            brake_gain: 0.05,
        }
    }
}

impl ScriptedDriver {
    pub fn target_speed(&self, obs: &Observation) -> f64 {
        if obs.tiles.iter().any(|t| t[COL_BORDER] > 0.5) {
            self.corner_speed
        } else {
            self.cruise_speed
        }
    }

    pub fn action(&self, obs: &Observation) -> ActionVector {
        let look: f64 = obs.tiles[1..4].iter().map(|t| t[COL_THETA]).sum::<f64>() / 3.0;
        let steer = self.lateral_gain * obs.tiles[0][COL_X] - self.heading_gain * look;

        let v = obs.speed();
        let target = self.target_speed(obs);
        let err = target - v;
        let accelerate = self.hold_throttle * target + self.speed_gain * err;
        let brake = -self.brake_gain * err;
        ActionVector::new(steer, accelerate.max(0.0), brake.max(0.0)).clipped()
    }
}

impl Policy for ScriptedDriver {
    fn act(&self, observation: &Observation) -> Result<ActionVector, String> {
        Ok(self.action(observation))
    }
}

/// Emits the same action regardless of the observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantPolicy(pub ActionVector);

impl ConstantPolicy {
    pub fn full_brake() -> Self {
        Self(ActionVector::new(0.0, 0.0, 1.0))
    }
}

impl Policy for ConstantPolicy {
    fn act(&self, _: &Observation) -> Result<ActionVector, String> {
        Ok(self.0)
    }
}

const _: () = assert!(TILES_AHEAD >= 4);
