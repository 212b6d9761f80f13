//! Policies trained on relabelled rewards: a Q-table for discrete tasks and a
//! small advantage actor-critic for continuous states.

use diffcore::{Activation, Adam, AdamConfig, DiffError, Mlp, Tape, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ensemble::RewardEnsemble;
use crate::envs::{Task, Transition};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActMode {
    Explore,
    Greedy,
    /// Uniform over actions, ignoring the policy.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    /// Tabular step size.
    pub alpha: f64,
    pub discount: f64,
    /// ε-greedy floor for the tabular policy.
    pub exploration: f64,
    pub batch_size: usize,
    pub actor_learning_rate: f64,
    pub critic_learning_rate: f64,
    pub entropy_coef: f64,
    pub hidden: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            discount: 0.97,
            exploration: 0.1,
            batch_size: 32,
            actor_learning_rate: 1e-3,
            critic_learning_rate: 1e-3,
            entropy_coef: 0.01,
            hidden: 32,
        }
    }
}

/// A transition with its learned reward; the true reward stays alongside for
/// evaluation only.
#[derive(Debug, Clone, PartialEq)]
pub struct Relabeled<'a> {
    pub transition: &'a Transition,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub num_states: usize,
    pub num_actions: usize,
    pub values: Vec<f64>,
}

impl QTable {
    pub fn new(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_states,
            num_actions,
            values: vec![0.0; num_states * num_actions],
        }
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.num_actions..(s + 1) * self.num_actions]
    }

    /// First maximising action.
    pub fn greedy(&self, s: usize) -> usize {
        argmax(self.row(s))
    }

    pub fn max_value(&self, s: usize) -> f64 {
        self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    fn explore<R: Rng + ?Sized>(&self, s: usize, exploration: f64, rng: &mut R) -> usize {
        if rng.random::<f64>() < exploration {
            return rng.random_range(0..self.num_actions);
        }
        let row = self.row(s);
        let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ties: Vec<usize> = (0..self.num_actions).filter(|&a| row[a] == best).collect();
        ties[rng.random_range(0..ties.len())]
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorCritic {
    pub actor: Mlp,
    pub critic: Mlp,
    actor_opt: Adam,
    critic_opt: Adam,
}

impl ActorCritic {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, num_actions: usize, config: &AgentConfig, rng: &mut R) -> Self {
        Self {
            actor: Mlp::new(
                &[state_dim, config.hidden, num_actions],
                Activation::Tanh,
                Activation::Identity,
                rng,
            ),
            critic: Mlp::new(
                &[state_dim, config.hidden, 1],
                Activation::Tanh,
                Activation::Identity,
                rng,
            ),
            actor_opt: Adam::new(AdamConfig::with_learning_rate(config.actor_learning_rate)),
            critic_opt: Adam::new(AdamConfig::with_learning_rate(config.critic_learning_rate)),
        }
    }

    pub fn probabilities(&self, states: &Tensor) -> Result<Tensor> {
        let logits = self.actor.forward(states)?;
        let (r, c) = logits.dims2("policy")?;
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            out.extend(crate::ensemble::softmax(logits.row(i)));
        }
        Ok(Tensor::matrix(r, c, out)?)
    }

    pub fn value(&self, states: &Tensor) -> Result<Vec<f64>> {
        Ok(self.critic.forward(states)?.into_values())
    }

    /// `−mean(A · log π(a|s)) + c · mean(Σ π log π)` and its gradient with
    /// respect to the actor parameters.
    pub fn actor_loss_and_gradients(
        &self,
        states: &Tensor,
        actions: &[usize],
        advantages: &[f64],
        entropy_coef: f64,
    ) -> Result<(f64, Vec<Tensor>)> {
        let b = states.rows();
        let a = self.actor.output_dim();
        if actions.len() != b || advantages.len() != b {
            return Err(Error::Dimension {
                what: "actor batch",
                expected: b,
                actual: actions.len().min(advantages.len()),
            });
        }
        let mut onehot = vec![0.0; b * a];
        for (i, &act) in actions.iter().enumerate() {
            if act >= a {
                return Err(Error::InvalidAction {
                    action: act,
                    available: a,
                });
            }
            onehot[i * a + act] = 1.0;
        }
        let mut tape = Tape::new();
        let x = tape.constant(states.clone());
        let (logits, vars) = self.actor.record(&mut tape, x)?;
        let logp = tape.log_softmax(logits)?;
        let mask = tape.constant(Tensor::matrix(b, a, onehot)?);
        let adv = tape.constant(Tensor::matrix(b, 1, advantages.to_vec())?);
        let chosen = tape.mul(logp, mask)?;
        let weighted = tape.mul(chosen, adv)?;
        let pg = tape.sum(weighted);
        let pg = tape.scale(pg, -1.0 / b as f64);
        let p = tape.exp(logp);
        let neg_entropy = tape.mul(p, logp)?;
        let neg_entropy = tape.sum(neg_entropy);
        let neg_entropy = tape.scale(neg_entropy, entropy_coef / b as f64);
        let loss = tape.add(pg, neg_entropy)?;
        let value = tape.value(loss).item();
        let grads = tape.backward(loss)?.collect(&vars.params)?;
        Ok((value, grads))
    }

    fn critic_loss_and_gradients(&self, states: &Tensor, targets: &[f64]) -> Result<(f64, Vec<Tensor>)> {
        let b = states.rows();
        let mut tape = Tape::new();
        let x = tape.constant(states.clone());
        let (v, vars) = self.critic.record(&mut tape, x)?;
        let t = tape.constant(Tensor::matrix(b, 1, targets.iter().map(|t| -t).collect())?);
        let diff = tape.add(v, t)?;
        let sq = tape.square(diff);
        let loss = tape.mean(sq);
        let value = tape.value(loss).item();
        let grads = tape.backward(loss)?.collect(&vars.params)?;
        Ok((value, grads))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    Tabular(QTable),
    ActorCritic(ActorCritic),
}

/// Learned rewards for every `(state, action)` of a discrete task.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTable {
    num_actions: usize,
    values: Vec<f64>,
}

impl RewardTable {
    pub fn build(ensemble: &RewardEnsemble, task: &Task) -> Result<Option<Self>> {
        let Some(n) = task.num_states() else {
            return Ok(None);
        };
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let inputs = task.probe_inputs(0, &mut rng);
        debug_assert_eq!(inputs.len(), n * task.num_actions());
        let x = Tensor::from_rows(&inputs)?;
        Ok(Some(Self {
            num_actions: task.num_actions(),
            values: ensemble.reward(&x)?,
        }))
    }

    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.values[state * self.num_actions + action]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Replaces the environment reward of each transition with the ensemble's.
pub fn relabel<'a>(
    ensemble: &RewardEnsemble,
    task: &Task,
    transitions: &[&'a Transition],
    cache: Option<&RewardTable>,
) -> Result<Vec<Relabeled<'a>>> {
    if transitions.is_empty() {
        return Ok(Vec::new());
    }
    let rewards: Vec<f64> = match cache {
        Some(table) => transitions
            .iter()
            .map(|tr| {
                let s = task.state_index(&tr.state).ok_or(Error::Dimension {
                    what: "discrete state",
                    expected: task.state_dim(),
                    actual: tr.state.len(),
                })?;
                Ok(table.get(s, tr.action))
            })
            .collect::<Result<_>>()?,
        None => {
            let rows = transitions
                .iter()
                .map(|tr| task.features(&tr.state, tr.action))
                .collect::<Result<Vec<_>>>()?;
            ensemble.reward(&Tensor::from_rows(&rows)?)?
        }
    };
    Ok(transitions
        .iter()
        .zip(rewards)
        .map(|(transition, reward)| Relabeled { transition, reward })
        .collect())
}

impl Policy {
    pub fn new<R: Rng + ?Sized>(task: &Task, config: &AgentConfig, rng: &mut R) -> Self {
        match task.num_states() {
            Some(n) => Policy::Tabular(QTable::new(n, task.num_actions())),
            None => Policy::ActorCritic(ActorCritic::new(task.state_dim(), task.num_actions(), config, rng)),
        }
    }

    pub fn act<R: Rng + ?Sized>(
        &self,
        task: &Task,
        state: &[f64],
        mode: ActMode,
        config: &AgentConfig,
        rng: &mut R,
    ) -> Result<usize> {
        if mode == ActMode::Uniform {
            return Ok(rng.random_range(0..task.num_actions()));
        }
        match self {
            Policy::Tabular(q) => {
                let s = task.state_index(state).ok_or(Error::Dimension {
                    what: "discrete state",
                    expected: task.state_dim(),
                    actual: state.len(),
                })?;
                Ok(match mode {
                    ActMode::Greedy => q.greedy(s),
                    _ => q.explore(s, config.exploration, rng),
                })
            }
            Policy::ActorCritic(ac) => {
                let x = Tensor::matrix(1, state.len(), state.to_vec())?;
                let logits = ac.actor.forward(&x)?;
                Ok(match mode {
                    ActMode::Greedy => argmax(logits.values()),
                    _ => {
                        let p = crate::ensemble::softmax(logits.values());
                        let u: f64 = rng.random();
                        let mut acc = 0.0;
                        p.iter()
                            .position(|pi| {
                                acc += pi;
                                u < acc
                            })
                            .unwrap_or(p.len() - 1)
                    }
                })
            }
        }
    }

    /// One update on a relabelled batch: a Q-learning sweep over the batch, or
    /// one actor-critic gradient step. Non-finite updates are skipped and
    /// reported through `Ok(false)`.
    pub fn update(&mut self, task: &Task, batch: &[Relabeled<'_>], config: &AgentConfig) -> Result<bool> {
        if batch.is_empty() {
            return Ok(false);
        }
        match self {
            Policy::Tabular(q) => {
                for item in batch {
                    let tr = item.transition;
                    let s = task.state_index(&tr.state).expect("discrete state");
                    let s2 = task.state_index(&tr.next_state).expect("discrete state");
                    let target = item.reward + config.discount * q.max_value(s2);
                    let idx = s * q.num_actions + tr.action;
                    let updated = q.values[idx] + config.alpha * (target - q.values[idx]);
                    if !updated.is_finite() {
                        tracing::warn!(state = s, action = tr.action, "skipped non-finite q update");
                        return Ok(false);
                    }
                    q.values[idx] = updated;
                }
                Ok(true)
            }
            Policy::ActorCritic(ac) => {
                let states = Tensor::from_rows(&batch.iter().map(|b| b.transition.state.clone()).collect::<Vec<_>>())?;
                let next = Tensor::from_rows(
                    &batch
                        .iter()
                        .map(|b| b.transition.next_state.clone())
                        .collect::<Vec<_>>(),
                )?;
                let v = ac.value(&states)?;
                let v2 = ac.value(&next)?;
                let targets: Vec<f64> = batch
                    .iter()
                    .zip(&v2)
                    .map(|(b, nv)| b.reward + config.discount * nv)
                    .collect();
                let advantages: Vec<f64> = targets.iter().zip(&v).map(|(t, v)| t - v).collect();
                let actions: Vec<usize> = batch.iter().map(|b| b.transition.action).collect();
                let (_, ga) = ac.actor_loss_and_gradients(&states, &actions, &advantages, config.entropy_coef)?;
                let (_, gc) = ac.critic_loss_and_gradients(&states, &targets)?;
                if ga.iter().chain(&gc).any(|g| !g.is_finite()) {
                    tracing::warn!("skipped non-finite actor-critic update");
                    return Ok(false);
                }
                ac.actor_opt.config.learning_rate = config.actor_learning_rate;
                ac.critic_opt.config.learning_rate = config.critic_learning_rate;
                for (opt, net, g) in [
                    (&mut ac.actor_opt, &mut ac.actor, ga),
                    (&mut ac.critic_opt, &mut ac.critic, gc),
                ] {
                    match opt.step(&mut net.parameters_mut(), &g) {
                        Ok(()) => {}
                        Err(DiffError::NonFiniteGradient { .. }) => return Ok(false),
                        Err(e) => return Err(e.into()),
                    }
                }
                Ok(true)
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Policy::Tabular(q) => q.values.iter().all(|v| v.is_finite()),
            Policy::ActorCritic(ac) => ac.actor.is_finite() && ac.critic.is_finite(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mean_return: f64,
    pub success_rate: f64,
}

/// One greedy episode; returns the visited transitions.
pub fn rollout<R: Rng + ?Sized>(
    policy: &Policy,
    task: &Task,
    config: &AgentConfig,
    start: Vec<f64>,
    episode: u64,
    mode: ActMode,
    rng: &mut R,
) -> Result<Vec<Transition>> {
    let mut state = start;
    let mut out = Vec::with_capacity(task.episode_length());
    for t in 0..task.episode_length() {
        let a = policy.act(task, &state, mode, config, rng)?;
        let tr = task.step(&state, a, episode, t)?;
        state = tr.next_state.clone();
        out.push(tr);
    }
    Ok(out)
}

/// Mean ground-truth return of greedy rollouts from the given start states.
pub fn evaluate<R: Rng + ?Sized>(
    policy: &Policy,
    task: &Task,
    config: &AgentConfig,
    starts: &[Vec<f64>],
    rng: &mut R,
) -> Result<Evaluation> {
    let mut total = 0.0;
    let mut successes = 0usize;
    for (i, s) in starts.iter().enumerate() {
        let traj = rollout(policy, task, config, s.clone(), i as u64, ActMode::Greedy, rng)?;
        total += traj.iter().map(|t| t.true_reward).sum::<f64>();
        if traj.last().is_some_and(|t| task.is_success(&t.next_state)) {
            successes += 1;
        }
    }
    let n = starts.len().max(1) as f64;
    Ok(Evaluation {
        mean_return: total / n,
        success_rate: successes as f64 / n,
    })
}

/// Finite-horizon optimum averaged over `starts` (discrete tasks only).
pub fn optimal_return(task: &Task, starts: &[Vec<f64>]) -> Option<f64> {
    let Task::Gridworld(g) = task else {
        return None;
    };
    let v = g.optimal_values(task.episode_length());
    let total: f64 = starts.iter().map(|s| v[task.state_index(s).expect("grid state")]).sum();
    Some(total / starts.len().max(1) as f64)
}
