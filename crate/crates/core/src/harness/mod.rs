//! Experiment orchestration, metrics, analyses and the annotation endpoint.

pub mod analysis;
pub mod api;
pub mod config;
pub mod metrics;
pub mod runner;
pub mod service;
pub mod sweep;

pub use analysis::{analyze_latents, analyze_reward_range, LatentAnalysis, Pca, RewardRange};
pub use config::{ExperimentConfig, PoolSpec, RewardSource};
pub use metrics::{read_metrics, MetricsRecord};
pub use runner::{eval_starts, run_experiment, run_experiment_with, LabelRecord, RunOutput};
pub use service::AnnotationService;
pub use sweep::{sweep, SweepAxis, SweepResult};
