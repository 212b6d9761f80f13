//! Latent-Gaussian reward model: a diagonal Gaussian encoder over
//! state-action inputs, a decoder from latents to scalar rewards, the
//! Bradley–Terry preference predictor and the KL-weighted training loss.

use std::collections::HashMap;

use diffcore::checkpoint::MlpCheckpoint;
use diffcore::{Activation, Adam, DiffError, Mlp, Tape, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::envs::{Label, PreferenceTriple, Segment};
use crate::error::{Error, Result};

pub const LOG_VARIANCE_BOUND: f64 = 8.0;

/// One diagonal Gaussian `N(mean, diag(exp(log_variance)))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentGaussian {
    pub mean: Vec<f64>,
    pub log_variance: Vec<f64>,
}

impl LatentGaussian {
    pub fn standard(k: usize) -> Self {
        Self {
            mean: vec![0.0; k],
            log_variance: vec![0.0; k],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Closed-form `KL(N(μ, σ²) ‖ N(0, I))`.
    pub fn kl_to_standard(&self) -> f64 {
        kl_to_standard(&self.mean, &self.log_variance)
    }

    /// Reparameterised draw `μ + exp(½ log σ²) ⊙ noise`.
    pub fn sample_with(&self, noise: &[f64]) -> Result<Vec<f64>> {
        if noise.len() != self.dim() {
            return Err(Error::Dimension {
                what: "latent noise",
                expected: self.dim(),
                actual: noise.len(),
            });
        }
        Ok(self
            .mean
            .iter()
            .zip(&self.log_variance)
            .zip(noise)
            .map(|((m, lv), n)| m + (0.5 * lv).exp() * n)
            .collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let noise: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.sample_with(&noise).expect("noise has latent width")
    }
}

pub fn kl_to_standard(mean: &[f64], log_variance: &[f64]) -> f64 {
    0.5 * mean
        .iter()
        .zip(log_variance)
        .map(|(m, lv)| m * m + lv.exp() - lv - 1.0)
        .sum::<f64>()
}

/// Encoder outputs for a batch of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBatch {
    pub mean: Tensor,
    pub log_variance: Tensor,
}

impl LatentBatch {
    pub fn len(&self) -> usize {
        self.mean.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> LatentGaussian {
        LatentGaussian {
            mean: self.mean.row(i).to_vec(),
            log_variance: self.log_variance.row(i).to_vec(),
        }
    }

    /// Per-row KL to the standard Gaussian.
    pub fn kl(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| kl_to_standard(self.mean.row(i), self.log_variance.row(i)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardModelConfig {
    pub input_dim: usize,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
}

impl RewardModelConfig {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            latent_dim: 16,
            hidden: vec![32],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    /// Weight of the latent KL constraint.
    pub phi: f64,
    /// Preference pairs per gradient step.
    pub batch_size: usize,
    /// Reparameterised latent draws per input per step.
    pub latent_samples: usize,
    pub learning_rate: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            phi: 100.0,
            batch_size: 32,
            latent_samples: 1,
            learning_rate: 1e-3,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.phi >= 0.0 && self.phi.is_finite()) {
            return Err(Error::Config(format!("phi must be finite and >= 0, got {}", self.phi)));
        }
        if self.batch_size == 0 || self.latent_samples == 0 {
            return Err(Error::Config("batch_size and latent_samples must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Segment pairs flattened into one feature matrix.
///
/// Row `(b·2 + i)·H + t` holds step `t` of segment `i` of pair `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceBatch {
    pub features: Tensor,
    pub targets: Vec<[f64; 2]>,
    pub horizon: usize,
    /// Row weights that turn a row sum into a mean over distinct rows.
    pub union_weights: Vec<f64>,
}

/// Weight `1 / (count · distinct)` for every row, where `count` is how often
/// the row's exact value occurs. Summing a per-row quantity under these
/// weights averages it over the set of distinct rows.
pub fn union_weights(features: &Tensor) -> Vec<f64> {
    let keys: Vec<Vec<u64>> = (0..features.rows())
        .map(|i| features.row(i).iter().map(|v| v.to_bits()).collect())
        .collect();
    let mut counts: HashMap<&[u64], usize> = HashMap::with_capacity(keys.len());
    for k in &keys {
        *counts.entry(k.as_slice()).or_default() += 1;
    }
    let distinct = counts.len() as f64;
    keys.iter()
        .map(|k| 1.0 / (counts[k.as_slice()] as f64 * distinct))
        .collect()
}

impl PreferenceBatch {
    /// Builds a batch from raw targets, rejecting anything other than
    /// `(1, 0)`, `(0, 1)` or `(0.5, 0.5)`.
    pub fn new(pairs: &[(&Segment, &Segment)], targets: Vec<[f64; 2]>) -> Result<Self> {
        if pairs.len() != targets.len() {
            return Err(Error::Dimension {
                what: "preference targets",
                expected: pairs.len(),
                actual: targets.len(),
            });
        }
        for y in &targets {
            Label::try_from(*y)?;
        }
        let (first, _) = pairs.first().ok_or(Error::Config("empty preference batch".into()))?;
        let horizon = first.len();
        let dim = first.feature_dim;
        let mut values = Vec::with_capacity(pairs.len() * 2 * horizon * dim);
        for (s0, s1) in pairs {
            for seg in [s0, s1] {
                if seg.len() != horizon {
                    return Err(Error::Dimension {
                        what: "segment length",
                        expected: horizon,
                        actual: seg.len(),
                    });
                }
                if seg.feature_dim != dim || seg.features.len() != horizon * dim {
                    return Err(Error::Dimension {
                        what: "segment features",
                        expected: horizon * dim,
                        actual: seg.features.len(),
                    });
                }
                values.extend_from_slice(&seg.features);
            }
        }
        let features = Tensor::matrix(pairs.len() * 2 * horizon, dim, values)?;
        let union_weights = union_weights(&features);
        Ok(Self {
            features,
            targets,
            horizon,
            union_weights,
        })
    }

    pub fn from_triples(triples: &[&PreferenceTriple]) -> Result<Self> {
        let pairs: Vec<_> = triples.iter().map(|t| (&t.segment0, &t.segment1)).collect();
        Self::new(&pairs, triples.iter().map(|t| t.label.y()).collect())
    }

    pub fn pairs(&self) -> usize {
        self.targets.len()
    }

    pub fn rows(&self) -> usize {
        self.features.rows()
    }
}

/// Latent noise used for one loss evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum Noise {
    /// Use the latent mean.
    Zero,
    /// One `rows × K` standard-normal tensor per latent sample.
    Given(Vec<Tensor>),
}

impl Noise {
    pub fn sample<R: Rng + ?Sized>(rows: usize, k: usize, samples: usize, rng: &mut R) -> Self {
        Noise::Given(
            (0..samples)
                .map(|_| {
                    let v = (0..rows * k).map(|_| rng.sample(StandardNormal)).collect();
                    Tensor::matrix(rows, k, v).expect("positive shape")
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub supervised: f64,
    pub constraint: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardModel {
    pub encoder_mean: Mlp,
    pub encoder_log_variance: Mlp,
    pub decoder: Mlp,
    latent_dim: usize,
    steps: u64,
}

struct Recorded {
    mean: Var,
    log_variance: Var,
    params: Vec<Var>,
}

impl RewardModel {
    pub fn new<R: Rng + ?Sized>(config: &RewardModelConfig, rng: &mut R) -> Self {
        let enc_sizes: Vec<usize> = std::iter::once(config.input_dim)
            .chain(config.hidden.iter().copied())
            .chain(std::iter::once(config.latent_dim))
            .collect();
        let dec_sizes: Vec<usize> = std::iter::once(config.latent_dim)
            .chain(config.hidden.iter().copied())
            .chain(std::iter::once(1))
            .collect();
        let encoder_mean = Mlp::new(&enc_sizes, Activation::Tanh, Activation::Identity, rng);
        let encoder_log_variance = Mlp::new(&enc_sizes, Activation::Tanh, Activation::Identity, rng);
        let decoder = Mlp::new(&dec_sizes, Activation::Tanh, Activation::Identity, rng);
        Self {
            encoder_mean,
            encoder_log_variance,
            decoder,
            latent_dim: config.latent_dim,
            steps: 0,
        }
    }

    pub fn from_parts(encoder_mean: Mlp, encoder_log_variance: Mlp, decoder: Mlp) -> Result<Self> {
        let k = encoder_mean.output_dim();
        let checks = [
            (
                "encoder input",
                encoder_mean.input_dim(),
                encoder_log_variance.input_dim(),
            ),
            ("log-variance head", k, encoder_log_variance.output_dim()),
            ("decoder input", k, decoder.input_dim()),
            ("decoder output", 1, decoder.output_dim()),
        ];
        for (what, expected, actual) in checks {
            if expected != actual {
                return Err(Error::Dimension { what, expected, actual });
            }
        }
        Ok(Self {
            encoder_mean,
            encoder_log_variance,
            decoder,
            latent_dim: k,
            steps: 0,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn input_dim(&self) -> usize {
        self.encoder_mean.input_dim()
    }

    /// Optimizer updates applied so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut p = self.encoder_mean.parameters();
        p.extend(self.encoder_log_variance.parameters());
        p.extend(self.decoder.parameters());
        p
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.encoder_mean.parameters_mut();
        p.extend(self.encoder_log_variance.parameters_mut());
        p.extend(self.decoder.parameters_mut());
        p
    }

    pub fn is_finite(&self) -> bool {
        self.parameters().iter().all(|t| t.is_finite())
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let (_, cols) = input.dims2("encode")?;
        if cols != self.input_dim() {
            return Err(Error::Dimension {
                what: "state-action width",
                expected: self.input_dim(),
                actual: cols,
            });
        }
        Ok(())
    }

    pub fn encode(&self, input: &Tensor) -> Result<LatentBatch> {
        self.check_input(input)?;
        let mean = self.encoder_mean.forward(input)?;
        let log_variance = self
            .encoder_log_variance
            .forward(input)?
            .map(|v| v.clamp(-LOG_VARIANCE_BOUND, LOG_VARIANCE_BOUND));
        Ok(LatentBatch { mean, log_variance })
    }

    pub fn decode(&self, latents: &Tensor) -> Result<Vec<f64>> {
        let (_, cols) = latents.dims2("decode")?;
        if cols != self.latent_dim {
            return Err(Error::Dimension {
                what: "latent width",
                expected: self.latent_dim,
                actual: cols,
            });
        }
        Ok(self.decoder.forward(latents)?.into_values())
    }

    /// Inference rewards: the decoder applied to the latent mean.
    pub fn reward(&self, input: &Tensor) -> Result<Vec<f64>> {
        self.decode(&self.encode(input)?.mean)
    }

    /// Rewards at the latent mean together with per-row KL.
    pub fn reward_and_kl(&self, input: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
        let latents = self.encode(input)?;
        Ok((self.decode(&latents.mean)?, latents.kl()))
    }

    /// `P[σ¹ ≻ σ⁰]` from summed mean-latent rewards.
    pub fn predict_preference(&self, segment0: &Segment, segment1: &Segment) -> Result<f64> {
        let batch = PreferenceBatch::new(&[(segment0, segment1)], vec![[0.5, 0.5]])?;
        let r = self.reward(&batch.features)?;
        let h = batch.horizon;
        let r0: f64 = r[..h].iter().sum();
        let r1: f64 = r[h..].iter().sum();
        Ok(bradley_terry(r0, r1))
    }

    fn record_encoder(&self, tape: &mut Tape, x: Var) -> Result<Recorded> {
        let (mean, mv) = self.encoder_mean.record(tape, x)?;
        let (lv, lvv) = self.encoder_log_variance.record(tape, x)?;
        let log_variance = tape.clamp(lv, -LOG_VARIANCE_BOUND, LOG_VARIANCE_BOUND);
        let mut params = mv.params;
        params.extend(lvv.params);
        Ok(Recorded {
            mean,
            log_variance,
            params,
        })
    }

    /// `−E[y₀ log P[σ⁰≻σ¹] + y₁ log P[σ¹≻σ⁰]]` from per-row rewards.
    fn record_supervised(tape: &mut Tape, rewards: Var, batch: &PreferenceBatch) -> Result<Var> {
        let b = batch.pairs();
        let per_step = tape.reshape(rewards, vec![2 * b, batch.horizon])?;
        let sums = tape.sum_axis(per_step, 1)?;
        let logits = tape.reshape(sums, vec![b, 2])?;
        let logp = tape.log_softmax(logits)?;
        let y = Tensor::matrix(b, 2, batch.targets.iter().flatten().copied().collect())?;
        let y = tape.constant(y);
        let weighted = tape.mul(logp, y)?;
        let total = tape.sum(weighted);
        Ok(tape.scale(total, -1.0 / b as f64))
    }

    /// Mean over rows of `½ Σ (μ² + σ² − log σ² − 1)`.
    fn record_constraint(tape: &mut Tape, mean: Var, log_variance: Var, weights: &[f64]) -> Result<Var> {
        let w = tape.constant(Tensor::matrix(weights.len(), 1, weights.to_vec())?);
        let m2 = tape.square(mean);
        let var = tape.exp(log_variance);
        let neg_lv = tape.scale(log_variance, -1.0);
        let a = tape.add(m2, var)?;
        let a = tape.add(a, neg_lv)?;
        let a = tape.shift(a, -1.0);
        let a = tape.mul(a, w)?;
        let s = tape.sum(a);
        Ok(tape.scale(s, 0.5))
    }

    /// Records the combined loss on a fresh tape and returns the tape, the
    /// loss handles and the parameter handles (in [`RewardModel::parameters`]
    /// order).
    fn record_loss(&self, batch: &PreferenceBatch, phi: f64, noise: &Noise) -> Result<(Tape, Var, Var, Var, Vec<Var>)> {
        self.check_input(&batch.features)?;
        let mut tape = Tape::new();
        let x = tape.constant(batch.features.clone());
        let enc = self.record_encoder(&mut tape, x)?;
        let draws: Vec<Var> = match noise {
            Noise::Zero => vec![enc.mean],
            Noise::Given(samples) => {
                if samples.is_empty() {
                    return Err(Error::Config("noise needs at least one sample".into()));
                }
                let half = tape.scale(enc.log_variance, 0.5);
                let std = tape.exp(half);
                let mut out = Vec::with_capacity(samples.len());
                for eps in samples {
                    if eps.shape() != [batch.rows(), self.latent_dim] {
                        return Err(Error::Dimension {
                            what: "latent noise rows",
                            expected: batch.rows() * self.latent_dim,
                            actual: eps.len(),
                        });
                    }
                    let e = tape.constant(eps.clone());
                    let scaled = tape.mul(std, e)?;
                    out.push(tape.add(enc.mean, scaled)?);
                }
                out
            }
        };
        let mut params = enc.params;
        let mut supervised: Option<Var> = None;
        for z in &draws {
            // each draw records the decoder under fresh handles; the extra
            // gradients are summed back in `loss_and_gradients`
            let (r, dv) = self.decoder.record(&mut tape, *z)?;
            params.extend(dv.params);
            let ls = Self::record_supervised(&mut tape, r, batch)?;
            supervised = Some(match supervised {
                None => ls,
                Some(acc) => tape.add(acc, ls)?,
            });
        }
        let supervised = tape.scale(supervised.expect("at least one draw"), 1.0 / draws.len() as f64);
        let constraint = Self::record_constraint(&mut tape, enc.mean, enc.log_variance, &batch.union_weights)?;
        let weighted = tape.scale(constraint, phi);
        let total = tape.add(weighted, supervised)?;
        Ok((tape, supervised, constraint, total, params))
    }

    fn breakdown(tape: &Tape, supervised: Var, constraint: Var, total: Var) -> LossBreakdown {
        LossBreakdown {
            supervised: tape.value(supervised).item(),
            constraint: tape.value(constraint).item(),
            total: tape.value(total).item(),
        }
    }

    pub fn supervised_loss(&self, batch: &PreferenceBatch, noise: &Noise) -> Result<f64> {
        Ok(self.total_loss(batch, 0.0, noise)?.supervised)
    }

    /// `L_c` over the distinct rows of `input`.
    pub fn latent_kl_loss(&self, input: &Tensor) -> Result<f64> {
        let kl = self.encode(input)?.kl();
        Ok(kl.iter().zip(union_weights(input)).map(|(k, w)| k * w).sum())
    }

    pub fn total_loss(&self, batch: &PreferenceBatch, phi: f64, noise: &Noise) -> Result<LossBreakdown> {
        let (tape, s, c, t, _) = self.record_loss(batch, phi, noise)?;
        Ok(Self::breakdown(&tape, s, c, t))
    }

    /// Loss values and gradients of the total loss, one tensor per entry of
    /// [`RewardModel::parameters`].
    pub fn loss_and_gradients(
        &self,
        batch: &PreferenceBatch,
        phi: f64,
        noise: &Noise,
    ) -> Result<(LossBreakdown, Vec<Tensor>)> {
        let (mut tape, s, c, t, params) = self.record_loss(batch, phi, noise)?;
        let losses = Self::breakdown(&tape, s, c, t);
        let grads = tape.backward(t)?.collect(&params)?;
        let n = self.parameters().len();
        let dec = self.decoder.parameters().len();
        let mut folded: Vec<Tensor> = grads[..n].to_vec();
        for extra in grads[n..].chunks(dec) {
            for (g, e) in folded[n - dec..].iter_mut().zip(extra) {
                g.add_scaled(e, 1.0)?;
            }
        }
        Ok((losses, folded))
    }

    /// One optimizer step on `batch`. A non-finite gradient leaves the model
    /// untouched and is reported through `Ok(None)`.
    pub fn train_step<R: Rng + ?Sized>(
        &mut self,
        optimizer: &mut Adam,
        batch: &PreferenceBatch,
        config: &TrainingConfig,
        rng: &mut R,
    ) -> Result<Option<LossBreakdown>> {
        let noise = Noise::sample(batch.rows(), self.latent_dim, config.latent_samples, rng);
        let (losses, grads) = self.loss_and_gradients(batch, config.phi, &noise)?;
        match optimizer.step(&mut self.parameters_mut(), &grads) {
            Ok(()) => {
                self.steps += 1;
                Ok(Some(losses))
            }
            Err(DiffError::NonFiniteGradient { index }) => {
                tracing::warn!(index, "skipped reward-model step with non-finite gradient");
                Ok(None)
            }
            Err(e) => Err(e.into()),
        }
    }

    pub fn checkpoint(&self, phi: f64) -> RewardModelCheckpoint {
        RewardModelCheckpoint {
            latent_dim: self.latent_dim,
            phi,
            steps: self.steps,
            encoder_mean: MlpCheckpoint::from_mlp(&self.encoder_mean),
            encoder_log_variance: MlpCheckpoint::from_mlp(&self.encoder_log_variance),
            decoder: MlpCheckpoint::from_mlp(&self.decoder),
        }
    }
}

/// `P[σ¹ ≻ σ⁰]` for segment reward sums `r0`, `r1`, via a stable logistic.
pub fn bradley_terry(r0: f64, r1: f64) -> f64 {
    let d = r1 - r0;
    if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        let e = d.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardModelCheckpoint {
    pub latent_dim: usize,
    pub phi: f64,
    pub steps: u64,
    pub encoder_mean: MlpCheckpoint,
    pub encoder_log_variance: MlpCheckpoint,
    pub decoder: MlpCheckpoint,
}

impl RewardModelCheckpoint {
    pub fn to_model(&self) -> Result<RewardModel> {
        let mut model = RewardModel::from_parts(
            self.encoder_mean.to_mlp()?,
            self.encoder_log_variance.to_mlp()?,
            self.decoder.to_mlp()?,
        )?;
        if model.latent_dim != self.latent_dim {
            return Err(Error::Dimension {
                what: "checkpoint latent width",
                expected: self.latent_dim,
                actual: model.latent_dim,
            });
        }
        model.steps = self.steps;
        Ok(model)
    }
}

/// Finite discrete instance: `p(x)`, rows of `p(z|x)`, and a reference `r(z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteSpec {
    pub p_x: Vec<f64>,
    pub p_z_given_x: Vec<Vec<f64>>,
    pub r_z: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiBoundReport {
    /// `Σ_x p(x) KL(p(z|x) ‖ r(z))`.
    pub constraint: f64,
    /// `I(Z; X)` under `p(x) p(z|x)`.
    pub mutual_information: f64,
    pub bound_holds: bool,
}

pub const NORMALIZATION_TOL: f64 = 1e-12;
pub const BOUND_TOL: f64 = 1e-9;

fn check_distribution(name: &str, p: &[f64], len: Option<usize>) -> Result<()> {
    if p.is_empty() || len.is_some_and(|l| l != p.len()) {
        return Err(Error::NotNormalized(format!("{name} has wrong length")));
    }
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::NotNormalized(format!("{name} has invalid entries")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::NotNormalized(format!("{name} sums to {sum}")));
    }
    Ok(())
}

fn kl_discrete(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| if *qi > 0.0 { pi * (pi / qi).ln() } else { f64::INFINITY })
        .sum()
}

/// Enumerates both sides of `L_c ≥ I(Z; X)` on a discrete instance.
pub fn verify_mi_bound(spec: &DiscreteSpec) -> Result<MiBoundReport> {
    check_distribution("p(x)", &spec.p_x, None)?;
    check_distribution("r(z)", &spec.r_z, None)?;
    if spec.p_z_given_x.len() != spec.p_x.len() {
        return Err(Error::NotNormalized("p(z|x) needs one row per x".into()));
    }
    let nz = spec.r_z.len();
    for (x, row) in spec.p_z_given_x.iter().enumerate() {
        check_distribution(&format!("p(z|x={x})"), row, Some(nz))?;
    }
    let mut marginal = vec![0.0; nz];
    for (px, row) in spec.p_x.iter().zip(&spec.p_z_given_x) {
        for (m, v) in marginal.iter_mut().zip(row) {
            *m += px * v;
        }
    }
    let mut constraint = 0.0;
    let mut mutual_information = 0.0;
    for (px, row) in spec.p_x.iter().zip(&spec.p_z_given_x) {
        if *px > 0.0 {
            constraint += px * kl_discrete(row, &spec.r_z);
            mutual_information += px * kl_discrete(row, &marginal);
        }
    }
    Ok(MiBoundReport {
        constraint,
        mutual_information,
        bound_holds: constraint >= mutual_information - BOUND_TOL,
    })
}
