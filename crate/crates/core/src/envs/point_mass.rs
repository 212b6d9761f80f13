//! 2D point mass reaching a goal with discretised accelerations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `{-1, 0, 1}²` accelerations; index `4` is zero acceleration.
pub const NUM_ACTIONS: usize = 9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMass {
    pub goal: [f64; 2],
    pub damping: f64,
    pub accel: f64,
    pub dt: f64,
    pub velocity_cost: f64,
}

impl Default for PointMass {
    fn default() -> Self {
        Self {
            goal: [0.5, 0.5],
            damping: 0.9,
            accel: 0.1,
            dt: 0.1,
            velocity_cost: 0.1,
        }
    }
}

impl PointMass {
    pub fn acceleration(action: usize) -> Result<[f64; 2]> {
        if action >= NUM_ACTIONS {
            return Err(Error::InvalidAction {
                action,
                available: NUM_ACTIONS,
            });
        }
        Ok([(action % 3) as f64 - 1.0, (action / 3) as f64 - 1.0])
    }

    /// State `(x, y, vx, vy)` with position uniform in the arena, at rest.
    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0, 0.0]
    }

    pub fn transition(&self, state: &[f64], action: usize) -> Result<(Vec<f64>, f64)> {
        if state.len() != 4 {
            return Err(Error::Dimension {
                what: "point mass state",
                expected: 4,
                actual: state.len(),
            });
        }
        let acc = Self::acceleration(action)?;
        let mut next = vec![0.0; 4];
        for k in 0..2 {
            let v = (self.damping * state[2 + k] + self.accel * acc[k]).clamp(-1.0, 1.0);
            let p = state[k] + self.dt * v;
            if p.abs() > 1.0 {
                next[k] = p.clamp(-1.0, 1.0);
                next[2 + k] = 0.0;
            } else {
                next[k] = p;
                next[2 + k] = v;
            }
        }
        Ok((next.clone(), self.reward(&next)))
    }

    /// Negative distance to the goal minus a small speed cost; maximal (zero)
    /// at the goal at rest.
    pub fn reward(&self, state: &[f64]) -> f64 {
        let dist = (state[0] - self.goal[0]).hypot(state[1] - self.goal[1]);
        let speed = state[2].hypot(state[3]);
        -dist - self.velocity_cost * speed
    }
}
