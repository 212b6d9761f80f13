#![allow(dead_code)]

pub mod oracles;

use diffcore::{Activation, Dense, Mlp, Tensor};
use latentpref::envs::Segment;
use latentpref::reward_model::{RewardModel, RewardModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Segment with random features and the given per-step true rewards.
pub fn segment(rng: &mut impl Rng, feature_dim: usize, rewards: &[f64]) -> Segment {
    let h = rewards.len();
    Segment {
        episode: rng.random_range(0..1000),
        start: 0,
        states: vec![vec![0.0]; h],
        actions: vec![0; h],
        true_rewards: rewards.to_vec(),
        features: (0..h * feature_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        feature_dim,
    }
}

pub fn random_segment(rng: &mut impl Rng, feature_dim: usize, h: usize) -> Segment {
    let rewards: Vec<f64> = (0..h).map(|_| rng.random_range(-1.0..1.0)).collect();
    segment(rng, feature_dim, &rewards)
}

pub fn model(rng: &mut impl Rng, input_dim: usize, latent_dim: usize, hidden: usize) -> RewardModel {
    let config = RewardModelConfig {
        input_dim,
        latent_dim,
        hidden: vec![hidden],
    };
    RewardModel::new(&config, rng)
}

/// Single linear layer `x · w + b` with the given weights.
pub fn linear(weights: &[f64], rows: usize, cols: usize, bias: &[f64]) -> Mlp {
    Mlp::from_layers(vec![Dense::new(
        Tensor::matrix(rows, cols, weights.to_vec()).unwrap(),
        Tensor::matrix(1, cols, bias.to_vec()).unwrap(),
        Activation::Identity,
    )
    .unwrap()])
    .unwrap()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Average ranks, ties sharing the mean rank.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            out[k] = (i + j) as f64 / 2.0;
        }
        i = j + 1;
    }
    out
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}
