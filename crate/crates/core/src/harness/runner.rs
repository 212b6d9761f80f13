use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use diffcore::Tensor;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, PoolSpec, RewardSource};
use super::metrics::{EventLog, MetricsRecord, MetricsWriter};
use super::service::AnnotationService;
use crate::agent::{evaluate, relabel, rollout, ActMode, Policy, Relabeled, RewardTable};
use crate::annotators::{label_batch, sample_pool, AnnotatorPool};
use crate::ensemble::{MemberTrace, RewardEnsemble};
use crate::envs::{sample_query_pairs, Label, PreferenceBuffer, ReplayBuffer, ReturnStats, Task};
use crate::error::{Error, Result};
use crate::reward_model::LossBreakdown;

/// Independent random streams of one run.
#[repr(u64)]
enum Stream {
    Policy = 1,
    Queries = 2,
    Labels = 3,
    Ensemble = 4,
    Evaluation = 5,
    Probe = 6,
    Replay = 7,
}

fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// Compact record of one scripted label, enough to audit the label stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub iteration: usize,
    pub annotator: Option<usize>,
    pub label: Label,
    pub episode0: u64,
    pub start0: usize,
    pub episode1: u64,
    pub start1: usize,
}

#[derive(Debug)]
pub struct RunOutput {
    pub metrics: Vec<MetricsRecord>,
    pub feedback_iterations: Vec<usize>,
    pub labels: Vec<LabelRecord>,
    pub ensemble: RewardEnsemble,
    pub policy: Policy,
    pub preferences: PreferenceBuffer,
    pub dir: Option<PathBuf>,
}

impl RunOutput {
    pub fn final_return(&self) -> Option<f64> {
        self.metrics.last().map(|m| m.eval_return)
    }
}

fn mean_losses(traces: &[MemberTrace]) -> Option<LossBreakdown> {
    let last: Vec<LossBreakdown> = traces.iter().filter_map(MemberTrace::last).collect();
    if last.is_empty() {
        return None;
    }
    let n = last.len() as f64;
    Some(LossBreakdown {
        supervised: last.iter().map(|l| l.supervised).sum::<f64>() / n,
        constraint: last.iter().map(|l| l.constraint).sum::<f64>() / n,
        total: last.iter().map(|l| l.total).sum::<f64>() / n,
    })
}

fn evaluation_starts(config: &ExperimentConfig, task: &Task, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..config.eval_episodes).map(|_| task.reset(rng)).collect()
}

/// Start states of the run's evaluation episodes, fixed by the seed.
pub fn eval_starts(config: &ExperimentConfig) -> Vec<Vec<f64>> {
    let task = Task::new(config.task);
    evaluation_starts(config, &task, &mut stream(config.seed, Stream::Evaluation))
}

/// Runs the preference-learning loop with scripted annotators.
pub fn run_experiment(config: &ExperimentConfig, dir: Option<&Path>) -> Result<RunOutput> {
    run_experiment_with(config, dir, None)
}

/// Runs the loop; a `human` pool takes labels from `service`.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    dir: Option<&Path>,
    service: Option<Arc<AnnotationService>>,
) -> Result<RunOutput> {
    config.validate()?;
    if config.pool == PoolSpec::Human && service.is_none() {
        return Err(Error::Config("a human pool needs the annotation service".into()));
    }
    if let Some(d) = dir {
        std::fs::create_dir_all(d)?;
        std::fs::write(d.join("config.json"), serde_json::to_string_pretty(config)?)?;
    }
    let mut events = EventLog::create(dir.map(|d| d.join("events.log")).as_deref())?;
    let mut metrics_file = dir.map(|d| MetricsWriter::create(&d.join("metrics.csv"))).transpose()?;
    let result = run_loop(config, dir, service.as_deref(), &mut events, &mut metrics_file);
    if let Err(e) = &result {
        events.log(format!("error: {e}"));
    }
    result
}

fn run_loop(
    config: &ExperimentConfig,
    dir: Option<&Path>,
    service: Option<&AnnotationService>,
    events: &mut EventLog,
    metrics_file: &mut Option<MetricsWriter>,
) -> Result<RunOutput> {
    let task = Task::new(config.task);
    let pool = match config.pool {
        PoolSpec::Size(m) => Some(sample_pool(m, config.pool_seed())?),
        PoolSpec::Oracle => Some(AnnotatorPool::oracle()),
        PoolSpec::Human => None,
    };
    if let (Some(d), Some(p)) = (dir, &pool) {
        std::fs::write(d.join("pool.json"), p.to_json()?)?;
    }
    events.log(format!(
        "start task={:?} seed={} phi={} n={} mode={} pool={:?}",
        config.task, config.seed, config.phi, config.ensemble_size, config.ensemble_mode, config.pool
    ));

    let mut policy_rng = stream(config.seed, Stream::Policy);
    let mut query_rng = stream(config.seed, Stream::Queries);
    let mut label_rng = stream(config.seed, Stream::Labels);
    let mut eval_rng = stream(config.seed, Stream::Evaluation);
    let mut replay_rng = stream(config.seed, Stream::Replay);
    let ensemble_seed = rand::Rng::random(&mut stream(config.seed, Stream::Ensemble));

    let mut ensemble = RewardEnsemble::new(
        config.ensemble_size,
        &config.reward_model(task.input_dim()),
        config.reward_learning_rate,
        config.ensemble_mode,
        ensemble_seed,
    )?;
    let mut policy = Policy::new(&task, &config.agent, &mut policy_rng);
    let mut preferences = PreferenceBuffer::new();
    let mut replay = ReplayBuffer::new(config.replay_capacity);
    let mut stats = ReturnStats::default();
    let mut table = RewardTable::build(&ensemble, &task)?;

    let probe = Tensor::from_rows(&task.probe_inputs(config.probe_states, &mut stream(config.seed, Stream::Probe)))?;
    let eval_starts = evaluation_starts(config, &task, &mut eval_rng);
    let training = config.training();

    let mut metrics = Vec::new();
    let mut feedback_iterations = Vec::new();
    let mut labels_log = Vec::new();
    let mut last_losses: Option<LossBreakdown> = None;
    let mut env_steps: u64 = 0;

    for it in 0..config.iterations {
        if let Some(s) = service {
            s.set_progress(it, None);
        }
        if it % config.feedback_every == 0 {
            feedback_iterations.push(it);
            let queries = sample_query_pairs(
                &replay,
                &task,
                config.segment_length,
                config.queries_per_session,
                &mut query_rng,
            )?;
            let asked = queries.len();
            let new = match (&pool, service) {
                (Some(p), _) => label_batch(p, queries, &mut stats, config.gamma_exponent, &mut label_rng)?,
                (None, Some(s)) => {
                    let ids = s.submit(queries);
                    if !s.wait_for(&ids, Duration::from_millis(config.human_wait_ms)) {
                        events.log(format!("iteration {it}: timed out waiting for human labels"));
                    }
                    s.drain_labeled()
                }
                (None, None) => unreachable!("checked before the loop"),
            };
            for t in &new {
                labels_log.push(LabelRecord {
                    iteration: it,
                    annotator: t.annotator,
                    label: t.label,
                    episode0: t.segment0.episode,
                    start0: t.segment0.start,
                    episode1: t.segment1.episode,
                    start1: t.segment1.start,
                });
            }
            events.log(format!(
                "iteration {it}: feedback session, {asked} queries, {} labels",
                new.len()
            ));
            preferences.extend(new);
            if !preferences.is_empty() {
                let traces = ensemble.train(&preferences, config.reward_steps, &training)?;
                let skipped: usize = traces.iter().map(|t| t.skipped).sum();
                if skipped > 0 {
                    events.log(format!("iteration {it}: skipped {skipped} non-finite reward steps"));
                }
                last_losses = mean_losses(&traces).or(last_losses);
                table = RewardTable::build(&ensemble, &task)?;
            }
        }

        let start = task.reset(&mut policy_rng);
        let episode = rollout(
            &policy,
            &task,
            &config.agent,
            start,
            it as u64,
            if it < config.warmup_iterations {
                ActMode::Uniform
            } else {
                ActMode::Explore
            },
            &mut policy_rng,
        )?;
        env_steps += episode.len() as u64;
        for tr in episode {
            replay.push(tr);
        }

        let mut skipped = 0usize;
        for _ in 0..config.policy_steps {
            let batch: Vec<_> = if policy_is_tabular(&policy) {
                replay.sample(config.agent.batch_size, &mut replay_rng)
            } else {
                let recent: Vec<_> = replay.recent(task.episode_length()).collect();
                let k = config.agent.batch_size.min(recent.len());
                sample(&mut replay_rng, recent.len(), k)
                    .into_iter()
                    .map(|i| recent[i])
                    .collect()
            };
            let relabeled: Vec<Relabeled<'_>> = match config.reward_source {
                RewardSource::Learned => relabel(&ensemble, &task, &batch, table.as_ref())?,
                RewardSource::GroundTruth => batch
                    .iter()
                    .map(|tr| Relabeled {
                        transition: tr,
                        reward: tr.true_reward,
                    })
                    .collect(),
            };
            if !policy.update(&task, &relabeled, &config.agent)? {
                skipped += 1;
            }
        }
        if skipped > 0 {
            events.log(format!("iteration {it}: skipped {skipped} policy updates"));
        }

        if (it + 1) % config.eval_every == 0 || it + 1 == config.iterations {
            let eval = evaluate(&policy, &task, &config.agent, &eval_starts, &mut eval_rng)?;
            let rewards = ensemble.reward(&probe)?;
            let kls = ensemble.mean_kl(&probe)?;
            let losses = last_losses.unwrap_or(LossBreakdown {
                supervised: f64::NAN,
                constraint: f64::NAN,
                total: f64::NAN,
            });
            let record = MetricsRecord {
                iteration: it,
                env_steps,
                eval_return: eval.mean_return,
                success_rate: eval.success_rate,
                loss_supervised: losses.supervised,
                loss_constraint: losses.constraint,
                loss_total: losses.total,
                member_kl: kls.iter().map(|k| format!("{k}")).collect::<Vec<_>>().join(";"),
                reward_min: rewards.iter().copied().fold(f64::INFINITY, f64::min),
                reward_max: rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                reward_mean: rewards.iter().sum::<f64>() / rewards.len() as f64,
                labels: preferences.len(),
            };
            if let Some(w) = metrics_file.as_mut() {
                w.append(&record)?;
            }
            if let Some(s) = service {
                s.set_progress(it, Some(eval.mean_return));
            }
            events.log(format!("iteration {it}: eval return {:.4}", eval.mean_return));
            metrics.push(record);
        }
    }

    if let Some(d) = dir {
        ensemble.save(&d.join("ensemble"), config.phi)?;
        std::fs::write(d.join("policy.json"), serde_json::to_string(&policy)?)?;
        let mut w = csv::Writer::from_path(d.join("labels.csv"))?;
        for l in &labels_log {
            w.serialize(l)?;
        }
        w.flush()?;
    }
    events.log("done");
    Ok(RunOutput {
        metrics,
        feedback_iterations,
        labels: labels_log,
        ensemble,
        policy,
        preferences,
        dir: dir.map(Path::to_path_buf),
    })
}

fn policy_is_tabular(policy: &Policy) -> bool {
    matches!(policy, Policy::Tabular(_))
}
