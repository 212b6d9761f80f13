//! Reward-range and latent-compactness analyses.

use diffcore::Tensor;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::ensemble::RewardEnsemble;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// `bins` equal-width bins over `[min, max]`; the last bin is closed.
    pub fn new(values: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if values.is_empty() { (0.0, 0.0) } else { (lo, hi) };
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
        let mut counts = vec![0; bins];
        for v in values {
            let i = if width > 0.0 { ((v - lo) / width) as usize } else { 0 };
            counts[i.min(bins - 1)] += 1;
        }
        Self { edges, counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRange {
    pub phi: f64,
    pub min: f64,
    pub max: f64,
    pub range: f64,
    pub histogram: Histogram,
}

/// Predicted-reward statistics on `probe` for ensembles trained at each φ.
pub fn analyze_reward_range(runs: &[(f64, &RewardEnsemble)], probe: &Tensor, bins: usize) -> Result<Vec<RewardRange>> {
    runs.iter()
        .map(|(phi, ensemble)| {
            let want = ensemble.members.first().ok_or(Error::EmptyEnsemble)?.model.input_dim();
            if probe.cols() != want {
                return Err(Error::Dimension {
                    what: "probe width",
                    expected: want,
                    actual: probe.cols(),
                });
            }
            let r = ensemble.reward(probe)?;
            let min = r.iter().copied().fold(f64::INFINITY, f64::min);
            let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Ok(RewardRange {
                phi: *phi,
                min,
                max,
                range: max - min,
                histogram: Histogram::new(&r, bins),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    /// Principal axes, one row per component.
    pub components: Vec<Vec<f64>>,
    /// Variance captured along each axis, descending.
    pub explained_variance: Vec<f64>,
    pub mean: Vec<f64>,
}

impl Pca {
    /// Fits `k` components by eigendecomposition of the sample covariance.
    /// Each axis is oriented so its largest-magnitude entry is positive.
    pub fn fit(rows: &[Vec<f64>], k: usize) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if n == 0 || d == 0 {
            return Err(Error::Config("pca needs a nonempty data set".into()));
        }
        let mean: Vec<f64> = (0..d)
            .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64)
            .collect();
        let centered = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
        let cov = centered.transpose() * &centered / (n.max(2) - 1) as f64;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let k = k.min(d);
        let mut components = Vec::with_capacity(k);
        let mut explained_variance = Vec::with_capacity(k);
        for &i in order.iter().take(k) {
            let mut axis: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let pivot = axis
                .iter()
                .copied()
                .fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            if pivot < 0.0 {
                axis.iter_mut().for_each(|v| *v = -*v);
            }
            components.push(axis);
            explained_variance.push(eig.eigenvalues[i].max(0.0));
        }
        Ok(Self {
            components,
            explained_variance,
            mean,
        })
    }

    pub fn project(&self, row: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(row).zip(&self.mean).map(|((a, x), m)| a * (x - m)).sum())
            .collect()
    }
}

/// Mean Euclidean distance of rows to their centroid.
pub fn spread(rows: &[Vec<f64>]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let d = rows[0].len();
    let n = rows.len() as f64;
    let centroid: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    rows.iter()
        .map(|r| {
            r.iter()
                .zip(&centroid)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum::<f64>()
        / n
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberLatents {
    /// 2D PCA coordinates of each probe input's latent mean.
    pub coords: Vec<[f64; 2]>,
    pub explained_variance: Vec<f64>,
    /// Mean distance to centroid of the latent means in the full latent space.
    pub spread: f64,
    pub mean_kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentAnalysis {
    pub members: Vec<MemberLatents>,
    /// Average of member spreads.
    pub spread: f64,
    /// Average of member mean KLs.
    pub mean_kl: f64,
}

pub fn analyze_latents(ensemble: &RewardEnsemble, probe: &Tensor) -> Result<LatentAnalysis> {
    if probe.is_empty() {
        return Err(Error::Config("probe set is empty".into()));
    }
    let members = ensemble
        .models()
        .map(|m| {
            let lat = m.encode(probe)?;
            let means: Vec<Vec<f64>> = (0..lat.len()).map(|i| lat.mean.row(i).to_vec()).collect();
            let pca = Pca::fit(&means, 2)?;
            let coords = means
                .iter()
                .map(|r| {
                    let p = pca.project(r);
                    [p.first().copied().unwrap_or(0.0), p.get(1).copied().unwrap_or(0.0)]
                })
                .collect();
            let kl = lat.kl();
            Ok(MemberLatents {
                coords,
                explained_variance: pca.explained_variance,
                spread: spread(&means),
                mean_kl: kl.iter().sum::<f64>() / kl.len() as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = members.len() as f64;
    Ok(LatentAnalysis {
        spread: members.iter().map(|m| m.spread).sum::<f64>() / n,
        mean_kl: members.iter().map(|m| m.mean_kl).sum::<f64>() / n,
        members,
    })
}
