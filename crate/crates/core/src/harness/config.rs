use std::path::Path;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::agent::AgentConfig;
use crate::annotators::GammaExponent;
use crate::ensemble::EnsembleMode;
use crate::envs::TaskKind;
use crate::error::{Error, Result};
use crate::reward_model::{RewardModelConfig, TrainingConfig};

/// Who labels the queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolSpec {
    /// A sampled pool of scripted annotators.
    Size(usize),
    /// One perfect scripted annotator.
    Oracle,
    /// Labels arrive through the annotation API.
    Human,
}

impl Serialize for PoolSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            PoolSpec::Size(m) => s.serialize_u64(*m as u64),
            PoolSpec::Oracle => s.serialize_str("oracle"),
            PoolSpec::Human => s.serialize_str("human"),
        }
    }
}

impl<'de> Deserialize<'de> for PoolSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Size(usize),
            Name(String),
        }
        match Repr::deserialize(d)? {
            Repr::Size(m) => Ok(PoolSpec::Size(m)),
            Repr::Name(n) => n.parse().map_err(D::Error::custom),
        }
    }
}

impl std::str::FromStr for PoolSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(PoolSpec::Oracle),
            "human" => Ok(PoolSpec::Human),
            other => other
                .parse()
                .map(PoolSpec::Size)
                .map_err(|_| Error::Config(format!("pool must be a size, \"oracle\" or \"human\", got {other:?}"))),
        }
    }
}

/// Where policy-update rewards come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardSource {
    #[default]
    Learned,
    /// Bypass the reward model and train on environment rewards.
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub seed: u64,
    pub phi: f64,
    pub ensemble_size: usize,
    pub ensemble_mode: EnsembleMode,
    /// A feedback session runs when `iteration % feedback_every == 0`.
    pub feedback_every: usize,
    pub queries_per_session: usize,
    pub pool: PoolSpec,
    /// Seed of the sampled annotator pool; defaults to `seed`.
    pub pool_seed: Option<u64>,
    pub iterations: usize,
    /// Iterations at the start that act uniformly at random, so the first
    /// labelled sessions see varied behaviour instead of whatever the
    /// untrained reward model happens to favour.
    pub warmup_iterations: usize,
    pub reward_steps: usize,
    pub policy_steps: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub segment_length: usize,
    pub replay_capacity: usize,
    pub latent_dim: usize,
    pub hidden: usize,
    pub reward_batch_size: usize,
    pub reward_learning_rate: f64,
    pub latent_samples: usize,
    pub agent: AgentConfig,
    pub gamma_exponent: GammaExponent,
    pub reward_source: RewardSource,
    /// Continuous-task probe states (each crossed with every action).
    pub probe_states: usize,
    /// How long a human-labelled session waits for labels.
    pub human_wait_ms: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: TaskKind::Gridworld,
            seed: 0,
            phi: 100.0,
            ensemble_size: 3,
            ensemble_mode: EnsembleMode::KlConfidence,
            feedback_every: 10,
            queries_per_session: 256,
            pool: PoolSpec::Size(100),
            pool_seed: None,
            iterations: 200,
            warmup_iterations: 10,
            reward_steps: 50,
            policy_steps: 200,
            eval_every: 10,
            eval_episodes: 10,
            segment_length: 25,
            replay_capacity: 100_000,
            latent_dim: 16,
            hidden: 32,
            reward_batch_size: 32,
            reward_learning_rate: 1e-3,
            latent_samples: 1,
            agent: AgentConfig::default(),
            gamma_exponent: GammaExponent::default(),
            reward_source: RewardSource::default(),
            probe_states: 100,
            human_wait_ms: 600_000,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("ensemble_size", self.ensemble_size),
            ("feedback_every", self.feedback_every),
            ("queries_per_session", self.queries_per_session),
            ("eval_every", self.eval_every),
            ("eval_episodes", self.eval_episodes),
            ("segment_length", self.segment_length),
            ("replay_capacity", self.replay_capacity),
            ("latent_dim", self.latent_dim),
            ("hidden", self.hidden),
            ("reward_batch_size", self.reward_batch_size),
            ("latent_samples", self.latent_samples),
            ("probe_states", self.probe_states),
            ("agent.batch_size", self.agent.batch_size),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.pool == PoolSpec::Size(0) {
            return Err(Error::Config("pool size must be positive".into()));
        }
        if self.segment_length > 200 {
            return Err(Error::Config("segment_length cannot exceed the episode length".into()));
        }
        self.training().validate()
    }

    pub fn training(&self) -> TrainingConfig {
        TrainingConfig {
            phi: self.phi,
            batch_size: self.reward_batch_size,
            latent_samples: self.latent_samples,
            learning_rate: self.reward_learning_rate,
        }
    }

    pub fn reward_model(&self, input_dim: usize) -> RewardModelConfig {
        RewardModelConfig {
            input_dim,
            latent_dim: self.latent_dim,
            hidden: vec![self.hidden],
        }
    }

    pub fn pool_seed(&self) -> u64 {
        self.pool_seed.unwrap_or(self.seed)
    }
}
