//! Deterministic 10×10 gridworld with goal, trap and step rewards.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SIZE: usize = 10;
pub const GOAL_REWARD: f64 = 1.0;
pub const TRAP_REWARD: f64 = -1.0;
pub const STEP_PENALTY: f64 = -0.05;

/// Up, down, left, right, stay.
pub const NUM_ACTIONS: usize = 5;
const MOVES: [(i64, i64); NUM_ACTIONS] = [(0, 1), (0, -1), (-1, 0), (1, 0), (0, 0)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gridworld {
    pub size: usize,
    pub goal: (usize, usize),
    pub traps: Vec<(usize, usize)>,
}

impl Default for Gridworld {
    fn default() -> Self {
        Self {
            size: SIZE,
            goal: (8, 8),
            traps: vec![(4, 2), (4, 3), (4, 4), (4, 5), (4, 6), (4, 7), (7, 5), (8, 5), (6, 8)],
        }
    }
}

impl Gridworld {
    pub fn num_states(&self) -> usize {
        self.size * self.size
    }

    pub fn cell_index(&self, cell: (usize, usize)) -> usize {
        cell.1 * self.size + cell.0
    }

    pub fn cell_of(&self, index: usize) -> (usize, usize) {
        (index % self.size, index / self.size)
    }

    /// Normalised coordinates in `[0, 1]²`.
    pub fn encode(&self, cell: (usize, usize)) -> Vec<f64> {
        let scale = (self.size - 1) as f64;
        vec![cell.0 as f64 / scale, cell.1 as f64 / scale]
    }

    pub fn decode(&self, state: &[f64]) -> Option<(usize, usize)> {
        let scale = (self.size - 1) as f64;
        let x = (state.first()? * scale).round();
        let y = (state.get(1)? * scale).round();
        let valid = |v: f64| v >= 0.0 && v < self.size as f64;
        (valid(x) && valid(y)).then_some((x as usize, y as usize))
    }

    pub fn is_trap(&self, cell: (usize, usize)) -> bool {
        self.traps.contains(&cell)
    }

    fn free_cells(&self) -> Vec<(usize, usize)> {
        (0..self.num_states())
            .map(|i| self.cell_of(i))
            .filter(|&c| c != self.goal && !self.is_trap(c))
            .collect()
    }

    /// Start cell drawn uniformly among cells that are neither goal nor trap.
    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let free = self.free_cells();
        free[rng.random_range(0..free.len())]
    }

    /// Next cell and reward. Bumping into a wall leaves the cell unchanged
    /// and costs the step penalty.
    pub fn transition(&self, cell: (usize, usize), action: usize) -> Result<((usize, usize), f64)> {
        let (dx, dy) = *MOVES.get(action).ok_or(Error::InvalidAction {
            action,
            available: NUM_ACTIONS,
        })?;
        let nx = cell.0 as i64 + dx;
        let ny = cell.1 as i64 + dy;
        let limit = self.size as i64;
        if nx < 0 || ny < 0 || nx >= limit || ny >= limit {
            return Ok((cell, STEP_PENALTY));
        }
        let next = (nx as usize, ny as usize);
        let reward = if next == self.goal {
            GOAL_REWARD
        } else if self.is_trap(next) {
            TRAP_REWARD
        } else {
            STEP_PENALTY
        };
        Ok((next, reward))
    }

    /// Finite-horizon optimal values by backward induction:
    /// `values[s]` is the best achievable undiscounted return over `horizon`
    /// steps starting from cell index `s`.
    pub fn optimal_values(&self, horizon: usize) -> Vec<f64> {
        let n = self.num_states();
        let mut values = vec![0.0; n];
        for _ in 0..horizon {
            let next: Vec<f64> = (0..n)
                .map(|s| {
                    (0..NUM_ACTIONS)
                        .map(|a| {
                            let (c, r) = self.transition(self.cell_of(s), a).expect("valid action");
                            r + values[self.cell_index(c)]
                        })
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect();
            values = next;
        }
        values
    }
}
