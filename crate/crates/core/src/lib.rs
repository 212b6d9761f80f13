//! Preference-based reinforcement learning from diverse scripted or human
//! annotators, with KL-constrained latent reward models and
//! confidence-weighted ensembles.
//!
//! ```
//! use latentpref::harness::{run_experiment, ExperimentConfig};
//!
//! let config = ExperimentConfig {
//!     iterations: 2,
//!     feedback_every: 1,
//!     queries_per_session: 8,
//!     reward_steps: 2,
//!     policy_steps: 2,
//!     eval_every: 1,
//!     eval_episodes: 1,
//!     ..ExperimentConfig::default()
//! };
//! let out = run_experiment(&config, None).unwrap();
//! assert_eq!(out.feedback_iterations, vec![0, 1]);
//! assert_eq!(out.metrics.len(), 2);
//! ```

pub mod agent;
pub mod annotators;
pub mod ensemble;
pub mod envs;
mod error;
pub mod harness;
pub mod reward_model;

pub use error::{Error, Result};
