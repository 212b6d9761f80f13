//! Toy tasks with known rewards, segments, and the replay/preference buffers.

mod buffer;
pub mod export;
pub mod gridworld;
pub mod point_mass;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use buffer::{sample_query_pairs, Label, PreferenceBuffer, PreferenceTriple, QueryPair, ReplayBuffer, ReturnStats};
pub use gridworld::Gridworld;
pub use point_mass::PointMass;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Gridworld,
    PointMass,
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gridworld" => Ok(TaskKind::Gridworld),
            "point_mass" | "point-mass" | "pointmass" => Ok(TaskKind::PointMass),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

/// One environment step. `true_reward` is hidden from the agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub episode: u64,
    pub t: usize,
    pub state: Vec<f64>,
    pub action: usize,
    pub next_state: Vec<f64>,
    pub true_reward: f64,
}

/// A contiguous slice of one episode, `len()` steps long.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub episode: u64,
    pub start: usize,
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub true_rewards: Vec<f64>,
    /// Reward-model inputs, one row of `feature_dim` values per step.
    pub features: Vec<f64>,
    pub feature_dim: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn true_return(&self) -> f64 {
        self.true_rewards.iter().sum()
    }

    pub fn feature_row(&self, t: usize) -> &[f64] {
        &self.features[t * self.feature_dim..(t + 1) * self.feature_dim]
    }
}

/// Static description of a task for renderers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMeta {
    pub task: TaskKind,
    pub state_dim: usize,
    pub num_actions: usize,
    /// State indices that give a 2D position for plotting.
    pub projection: [usize; 2],
    pub bounds: [[f64; 2]; 2],
    pub action_labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Task {
    Gridworld(Gridworld),
    PointMass(PointMass),
}

impl Task {
    pub fn new(kind: TaskKind) -> Self {
        match kind {
            TaskKind::Gridworld => Task::Gridworld(Gridworld::default()),
            TaskKind::PointMass => Task::PointMass(PointMass::default()),
        }
    }

    pub fn kind(&self) -> TaskKind {
        match self {
            Task::Gridworld(_) => TaskKind::Gridworld,
            Task::PointMass(_) => TaskKind::PointMass,
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            Task::Gridworld(_) => 2,
            Task::PointMass(_) => 4,
        }
    }

    pub fn num_actions(&self) -> usize {
        match self {
            Task::Gridworld(_) => gridworld::NUM_ACTIONS,
            Task::PointMass(_) => point_mass::NUM_ACTIONS,
        }
    }

    pub fn action_feature_dim(&self) -> usize {
        match self {
            Task::Gridworld(_) => gridworld::NUM_ACTIONS,
            Task::PointMass(_) => 2,
        }
    }

    /// Width of a reward-model input row: state followed by action features.
    pub fn input_dim(&self) -> usize {
        self.state_feature_dim() + self.action_feature_dim()
    }

    /// Width of the state part of a reward-model input. Gridworld cells are
    /// one-hot encoded; point-mass states are used as is.
    pub fn state_feature_dim(&self) -> usize {
        match self {
            Task::Gridworld(g) => g.num_states(),
            Task::PointMass(_) => self.state_dim(),
        }
    }

    pub fn episode_length(&self) -> usize {
        200
    }

    /// Whether states are drawn from a finite set (enables reward caching
    /// and tabular agents).
    pub fn is_discrete(&self) -> bool {
        matches!(self, Task::Gridworld(_))
    }

    pub fn num_states(&self) -> Option<usize> {
        match self {
            Task::Gridworld(g) => Some(g.num_states()),
            Task::PointMass(_) => None,
        }
    }

    pub fn state_index(&self, state: &[f64]) -> Option<usize> {
        match self {
            Task::Gridworld(g) => g.decode(state).map(|c| g.cell_index(c)),
            Task::PointMass(_) => None,
        }
    }

    pub fn action_features(&self, action: usize) -> Result<Vec<f64>> {
        if action >= self.num_actions() {
            return Err(Error::InvalidAction {
                action,
                available: self.num_actions(),
            });
        }
        Ok(match self {
            Task::Gridworld(_) => {
                let mut v = vec![0.0; gridworld::NUM_ACTIONS];
                v[action] = 1.0;
                v
            }
            Task::PointMass(_) => PointMass::acceleration(action)?.to_vec(),
        })
    }

    /// Reward-model input row for `(state, action)`.
    pub fn features(&self, state: &[f64], action: usize) -> Result<Vec<f64>> {
        if state.len() != self.state_dim() {
            return Err(Error::Dimension {
                what: "state",
                expected: self.state_dim(),
                actual: state.len(),
            });
        }
        let mut row = match self {
            Task::Gridworld(g) => {
                let index = self.state_index(state).ok_or(Error::Dimension {
                    what: "gridworld state",
                    expected: 2,
                    actual: state.len(),
                })?;
                let mut v = vec![0.0; g.num_states()];
                v[index] = 1.0;
                v
            }
            Task::PointMass(_) => state.to_vec(),
        };
        row.extend(self.action_features(action)?);
        Ok(row)
    }

    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Task::Gridworld(g) => g.encode(g.reset(rng)),
            Task::PointMass(p) => p.reset(rng),
        }
    }

    /// Deterministic step; `episode` and `t` are carried into the record.
    pub fn step(&self, state: &[f64], action: usize, episode: u64, t: usize) -> Result<Transition> {
        let (next_state, true_reward) = match self {
            Task::Gridworld(g) => {
                let cell = g.decode(state).ok_or(Error::Dimension {
                    what: "gridworld state",
                    expected: 2,
                    actual: state.len(),
                })?;
                let (next, r) = g.transition(cell, action)?;
                (g.encode(next), r)
            }
            Task::PointMass(p) => p.transition(state, action)?,
        };
        Ok(Transition {
            episode,
            t,
            state: state.to_vec(),
            action,
            next_state,
            true_reward,
        })
    }

    /// Whether a state counts as success for goal tasks.
    pub fn is_success(&self, state: &[f64]) -> bool {
        match self {
            Task::Gridworld(g) => g.decode(state) == Some(g.goal),
            Task::PointMass(p) => (state[0] - p.goal[0]).hypot(state[1] - p.goal[1]) < 0.1,
        }
    }

    /// Every `(state, action)` input for discrete tasks, or a seeded sample of
    /// `count` states crossed with all actions for continuous ones.
    pub fn probe_inputs<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<Vec<f64>> {
        let states: Vec<Vec<f64>> = match self {
            Task::Gridworld(g) => (0..g.num_states()).map(|i| g.encode(g.cell_of(i))).collect(),
            Task::PointMass(_) => (0..count)
                .map(|_| {
                    vec![
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-0.5..0.5),
                        rng.random_range(-0.5..0.5),
                    ]
                })
                .collect(),
        };
        states
            .iter()
            .flat_map(|s| (0..self.num_actions()).map(move |a| (s, a)))
            .map(|(s, a)| self.features(s, a).expect("valid probe input"))
            .collect()
    }

    /// True reward of a probe input produced by [`Task::probe_inputs`].
    pub fn probe_reward(&self, input: &[f64]) -> Result<f64> {
        let sd = self.state_feature_dim();
        if input.len() != self.input_dim() {
            return Err(Error::Dimension {
                what: "probe input",
                expected: self.input_dim(),
                actual: input.len(),
            });
        }
        let hot = |v: &[f64]| {
            v.iter()
                .position(|&x| x == 1.0)
                .ok_or(Error::Config("probe input is not one-hot".into()))
        };
        let (state, action) = match self {
            Task::Gridworld(g) => (g.encode(g.cell_of(hot(&input[..sd])?)), hot(&input[sd..])?),
            Task::PointMass(_) => {
                let ax = (input[sd] + 1.0).round() as usize;
                let ay = (input[sd + 1] + 1.0).round() as usize;
                (input[..sd].to_vec(), ay * 3 + ax)
            }
        };
        Ok(self.step(&state, action, 0, 0)?.true_reward)
    }

    pub fn meta(&self) -> TaskMeta {
        match self {
            Task::Gridworld(_) => TaskMeta {
                task: TaskKind::Gridworld,
                state_dim: 2,
                num_actions: gridworld::NUM_ACTIONS,
                projection: [0, 1],
                bounds: [[0.0, 1.0], [0.0, 1.0]],
                action_labels: ["up", "down", "left", "right", "stay"].map(String::from).to_vec(),
            },
            Task::PointMass(_) => TaskMeta {
                task: TaskKind::PointMass,
                state_dim: 4,
                num_actions: point_mass::NUM_ACTIONS,
                projection: [0, 1],
                bounds: [[-1.0, 1.0], [-1.0, 1.0]],
                action_labels: (0..point_mass::NUM_ACTIONS)
                    .map(|a| {
                        let acc = PointMass::acceleration(a).expect("valid action");
                        format!("({:+},{:+})", acc[0], acc[1])
                    })
                    .collect(),
            },
        }
    }
}
