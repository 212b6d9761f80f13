//! Ensembles of latent reward models combined by KL-based confidence.

use std::fs;
use std::path::Path;

use diffcore::{Adam, AdamConfig, Tensor};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::PreferenceBuffer;
use crate::error::{Error, Result};
use crate::reward_model::{
    LossBreakdown, PreferenceBatch, RewardModel, RewardModelCheckpoint, RewardModelConfig, TrainingConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMode {
    /// Softmax of each member's latent KL.
    KlConfidence,
    /// Uniform average.
    Mean,
    /// First member only.
    Single,
}

impl std::str::FromStr for EnsembleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kl_confidence" => Ok(EnsembleMode::KlConfidence),
            "mean" => Ok(EnsembleMode::Mean),
            "single" => Ok(EnsembleMode::Single),
            other => Err(Error::Config(format!("unknown ensemble mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for EnsembleMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EnsembleMode::KlConfidence => "kl_confidence",
            EnsembleMode::Mean => "mean",
            EnsembleMode::Single => "single",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Member {
    pub model: RewardModel,
    pub optimizer: Adam,
    rng: ChaCha8Rng,
}

impl Member {
    pub fn new(model: RewardModel, learning_rate: f64, seed: u64) -> Self {
        Self {
            model,
            optimizer: Adam::new(AdamConfig::with_learning_rate(learning_rate)),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

/// Per-member losses from one call to [`RewardEnsemble::train`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MemberTrace {
    pub losses: Vec<LossBreakdown>,
    pub skipped: usize,
}

impl MemberTrace {
    pub fn last(&self) -> Option<LossBreakdown> {
        self.losses.last().copied()
    }
}

/// Row-wise reward outputs of every member.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberOutputs {
    /// `rewards[i][row]`
    pub rewards: Vec<Vec<f64>>,
    /// `kl[i][row]`
    pub kl: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct RewardEnsemble {
    pub members: Vec<Member>,
    pub mode: EnsembleMode,
}

/// `softmax(values)` with max subtraction.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl RewardEnsemble {
    /// `n` members with independently seeded initialisation and sampling.
    pub fn new(
        n: usize,
        config: &RewardModelConfig,
        learning_rate: f64,
        mode: EnsembleMode,
        seed: u64,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyEnsemble);
        }
        let mut master = ChaCha8Rng::seed_from_u64(seed);
        let members = (0..n)
            .map(|_| {
                let mut init = ChaCha8Rng::seed_from_u64(master.random());
                let model = RewardModel::new(config, &mut init);
                Member::new(model, learning_rate, master.random())
            })
            .collect();
        Ok(Self { members, mode })
    }

    pub fn from_models(models: Vec<RewardModel>, mode: EnsembleMode) -> Result<Self> {
        let first = models.first().ok_or(Error::EmptyEnsemble)?;
        let (d, k) = (first.input_dim(), first.latent_dim());
        for m in &models {
            if m.input_dim() != d || m.latent_dim() != k {
                return Err(Error::Dimension {
                    what: "ensemble member shape",
                    expected: d,
                    actual: m.input_dim(),
                });
            }
        }
        let members = models
            .into_iter()
            .enumerate()
            .map(|(i, m)| Member::new(m, AdamConfig::default().learning_rate, i as u64))
            .collect();
        Ok(Self { members, mode })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn models(&self) -> impl Iterator<Item = &RewardModel> {
        self.members.iter().map(|m| &m.model)
    }

    pub fn outputs(&self, input: &Tensor) -> Result<MemberOutputs> {
        if self.members.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        let mut rewards = Vec::with_capacity(self.len());
        let mut kl = Vec::with_capacity(self.len());
        for m in &self.members {
            let (r, k) = m.model.reward_and_kl(input)?;
            rewards.push(r);
            kl.push(k);
        }
        Ok(MemberOutputs { rewards, kl })
    }

    /// Per-row member weights under the ensemble's mode.
    pub fn weights_from(&self, outputs: &MemberOutputs, row: usize) -> Vec<f64> {
        let n = outputs.rewards.len();
        match self.mode {
            EnsembleMode::KlConfidence => {
                let kls: Vec<f64> = outputs.kl.iter().map(|k| k[row]).collect();
                softmax(&kls)
            }
            EnsembleMode::Mean => vec![1.0 / n as f64; n],
            EnsembleMode::Single => {
                let mut w = vec![0.0; n];
                w[0] = 1.0;
                w
            }
        }
    }

    /// KL confidence `G_i` for every row of `input`, regardless of mode.
    pub fn confidence_weights(&self, input: &Tensor) -> Result<Vec<Vec<f64>>> {
        let out = self.outputs(input)?;
        Ok((0..input.rows())
            .map(|row| softmax(&out.kl.iter().map(|k| k[row]).collect::<Vec<_>>()))
            .collect())
    }

    /// Combined reward for every row of `input`.
    pub fn reward(&self, input: &Tensor) -> Result<Vec<f64>> {
        let out = self.outputs(input)?;
        Ok((0..input.rows())
            .map(|row| {
                self.weights_from(&out, row)
                    .iter()
                    .zip(&out.rewards)
                    .map(|(w, r)| w * r[row])
                    .sum()
            })
            .collect())
    }

    pub fn reward_one(&self, state_action: &[f64]) -> Result<f64> {
        let x = Tensor::matrix(1, state_action.len(), state_action.to_vec())?;
        Ok(self.reward(&x)?[0])
    }

    /// Mean latent KL per member over `input`.
    pub fn mean_kl(&self, input: &Tensor) -> Result<Vec<f64>> {
        Ok(self
            .outputs(input)?
            .kl
            .iter()
            .map(|k| k.iter().sum::<f64>() / k.len() as f64)
            .collect())
    }

    /// `steps` optimizer updates per member, each member drawing its own
    /// minibatches. Members train in parallel.
    pub fn train(
        &mut self,
        buffer: &PreferenceBuffer,
        steps: usize,
        config: &TrainingConfig,
    ) -> Result<Vec<MemberTrace>> {
        config.validate()?;
        if buffer.is_empty() {
            tracing::warn!("reward training skipped: preference buffer is empty");
            return Ok(vec![MemberTrace::default(); self.len()]);
        }
        let triples = buffer.as_slice();
        self.members
            .par_iter_mut()
            .map(|member| {
                member.optimizer.config.learning_rate = config.learning_rate;
                let mut trace = MemberTrace::default();
                for _ in 0..steps {
                    let chosen: Vec<_> = if triples.len() <= config.batch_size {
                        triples.iter().collect()
                    } else {
                        sample(&mut member.rng, triples.len(), config.batch_size)
                            .into_iter()
                            .map(|i| &triples[i])
                            .collect()
                    };
                    let batch = PreferenceBatch::from_triples(&chosen)?;
                    match member
                        .model
                        .train_step(&mut member.optimizer, &batch, config, &mut member.rng)?
                    {
                        Some(l) => trace.losses.push(l),
                        None => trace.skipped += 1,
                    }
                }
                Ok(trace)
            })
            .collect()
    }

    /// Fraction of triples whose strict label agrees with the ensemble's
    /// mean-latent Bradley–Terry prediction. Ties are ignored.
    pub fn preference_accuracy(&self, buffer: &PreferenceBuffer) -> Result<f64> {
        use crate::envs::Label;
        let mut hits = 0usize;
        let mut total = 0usize;
        for t in buffer.as_slice() {
            if t.label == Label::Equal {
                continue;
            }
            let r0: f64 = self.reward(&segment_tensor(&t.segment0)?)?.iter().sum();
            let r1: f64 = self.reward(&segment_tensor(&t.segment1)?)?.iter().sum();
            let predicted = if r1 > r0 { Label::Right } else { Label::Left };
            hits += usize::from(predicted == t.label);
            total += 1;
        }
        Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
    }

    pub fn checkpoint(&self, phi: f64) -> EnsembleCheckpoint {
        EnsembleCheckpoint {
            mode: self.mode,
            members: self.members.iter().map(|m| m.model.checkpoint(phi)).collect(),
        }
    }

    /// Writes `manifest.json` and one `member_<i>.json` per member.
    pub fn save(&self, dir: &Path, phi: f64) -> Result<()> {
        fs::create_dir_all(dir)?;
        let ckpt = self.checkpoint(phi);
        let manifest = EnsembleManifest {
            mode: ckpt.mode,
            phi,
            members: (0..ckpt.members.len()).map(|i| format!("member_{i}.json")).collect(),
        };
        for (name, member) in manifest.members.iter().zip(&ckpt.members) {
            fs::write(dir.join(name), serde_json::to_string(member)?)?;
        }
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = EnsembleManifest::read(dir)?;
        let models = manifest
            .members
            .iter()
            .map(|name| {
                let ckpt: RewardModelCheckpoint = serde_json::from_str(&fs::read_to_string(dir.join(name))?)?;
                ckpt.to_model()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_models(models, manifest.mode)
    }
}

fn segment_tensor(seg: &crate::envs::Segment) -> Result<Tensor> {
    Ok(Tensor::matrix(seg.len(), seg.feature_dim, seg.features.clone())?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleCheckpoint {
    pub mode: EnsembleMode,
    pub members: Vec<RewardModelCheckpoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub mode: EnsembleMode,
    pub phi: f64,
    pub members: Vec<String>,
}

impl EnsembleManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_cases() {
        assert_eq!(softmax(&[0.2, 0.2, 0.2, 0.2]), vec![0.25; 4]);
        let w = softmax(&[3f64.ln(), 0.0]);
        assert!((w[0] - 0.75).abs() < 1e-15 && (w[1] - 0.25).abs() < 1e-15);
        let w = softmax(&[1000.0, 0.0]);
        assert!(w.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn empty_ensemble_rejected() {
        let cfg = RewardModelConfig::new(3);
        assert!(matches!(
            RewardEnsemble::new(0, &cfg, 1e-3, EnsembleMode::Mean, 0),
            Err(Error::EmptyEnsemble)
        ));
        assert!(matches!(
            RewardEnsemble::from_models(vec![], EnsembleMode::Mean),
            Err(Error::EmptyEnsemble)
        ));
    }

    #[test]
    fn empty_buffer_training_is_noop() {
        let cfg = RewardModelConfig::new(3);
        let mut e = RewardEnsemble::new(2, &cfg, 1e-3, EnsembleMode::KlConfidence, 4).unwrap();
        let before: Vec<_> = e.models().cloned().collect();
        let traces = e
            .train(&PreferenceBuffer::new(), 10, &TrainingConfig::default())
            .unwrap();
        assert!(traces.iter().all(|t| t.losses.is_empty()));
        assert!(e.models().zip(&before).all(|(a, b)| a == b));
    }

    #[test]
    fn mode_parses() {
        for m in [EnsembleMode::KlConfidence, EnsembleMode::Mean, EnsembleMode::Single] {
            assert_eq!(m.to_string().parse::<EnsembleMode>().unwrap(), m);
        }
    }
}
