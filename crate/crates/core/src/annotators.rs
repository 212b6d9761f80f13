//! Scripted, bounded-rational preference annotators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::envs::{Label, PreferenceTriple, QueryPair, ReturnStats, Segment};
use crate::error::{Error, Result};

/// Which end of a segment the myopia discount favours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaExponent {
    /// Step `t` of `H` (1-based) is weighted by `γ^(H−t)`, so the last step
    /// counts fully.
    #[default]
    FromEnd,
    /// Step `t` is weighted by `γ^(t−1)`, so the first step counts fully.
    FromStart,
}

/// `⟨β, γ, ε, δ_equal⟩`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnotatorProfile {
    /// Rationality; `f64::INFINITY` means a deterministic argmax.
    pub beta: f64,
    /// Myopia discount in `(0, 1]`.
    pub gamma: f64,
    /// Mistake probability in `[0, 0.5)`.
    pub epsilon: f64,
    /// Tie threshold on normalised undiscounted returns.
    pub delta_equal: f64,
}

impl AnnotatorProfile {
    pub fn new(beta: f64, gamma: f64, epsilon: f64, delta_equal: f64) -> Result<Self> {
        let p = Self {
            beta,
            gamma,
            epsilon,
            delta_equal,
        };
        p.validate()?;
        Ok(p)
    }

    /// The perfect teacher: always prefers the higher true return.
    pub fn oracle() -> Self {
        Self {
            beta: f64::INFINITY,
            gamma: 1.0,
            epsilon: 0.0,
            delta_equal: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.beta > 0.0
            && !self.beta.is_nan()
            && self.gamma > 0.0
            && self.gamma <= 1.0
            && (0.0..0.5).contains(&self.epsilon)
            && self.delta_equal >= 0.0
            && self.delta_equal.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid annotator profile {self:?}")))
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BetaRepr {
    Finite(f64),
    Text(String),
}

impl Serialize for AnnotatorProfile {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let beta = if self.beta.is_infinite() {
            BetaRepr::Text("inf".into())
        } else {
            BetaRepr::Finite(self.beta)
        };
        (beta, self.gamma, self.epsilon, self.delta_equal).serialize(s)
    }
}

impl<'de> Deserialize<'de> for AnnotatorProfile {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let (beta, gamma, epsilon, delta_equal) = <(BetaRepr, f64, f64, f64)>::deserialize(d)?;
        let beta = match beta {
            BetaRepr::Finite(b) => b,
            BetaRepr::Text(t) if t == "inf" => f64::INFINITY,
            BetaRepr::Text(t) => return Err(D::Error::custom(format!("invalid beta {t:?}"))),
        };
        AnnotatorProfile::new(beta, gamma, epsilon, delta_equal).map_err(D::Error::custom)
    }
}

/// Annotators selected uniformly per query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnnotatorPool {
    profiles: Vec<AnnotatorProfile>,
}

impl AnnotatorPool {
    pub fn new(profiles: Vec<AnnotatorProfile>) -> Result<Self> {
        if profiles.is_empty() {
            return Err(Error::Config("annotator pool needs at least one profile".into()));
        }
        for p in &profiles {
            p.validate()?;
        }
        Ok(Self { profiles })
    }

    pub fn oracle() -> Self {
        Self {
            profiles: vec![AnnotatorProfile::oracle()],
        }
    }

    pub fn profiles(&self) -> &[AnnotatorProfile] {
        &self.profiles
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let pool: Self = serde_json::from_str(text)?;
        Self::new(pool.profiles)
    }
}

/// `m` profiles with `β ∈ {∞, 1, 5}`, `γ ~ U(0.8, 1)`, `ε ~ U(0, 0.2)`,
/// `δ_equal ~ U(0, 0.2)`.
pub fn sample_pool(m: usize, seed: u64) -> Result<AnnotatorPool> {
    if m == 0 {
        return Err(Error::Config("annotator pool size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let profiles = (0..m)
        .map(|_| AnnotatorProfile {
            beta: [f64::INFINITY, 1.0, 5.0][rng.random_range(0..3)],
            gamma: rng.random_range(0.8..1.0),
            epsilon: rng.random_range(0.0..0.2),
            delta_equal: rng.random_range(0.0..0.2),
        })
        .collect();
    AnnotatorPool::new(profiles)
}

/// `Σ_t w_t r_t` with the profile's myopia weights.
pub fn discounted_return(profile: &AnnotatorProfile, segment: &Segment, exponent: GammaExponent) -> f64 {
    let h = segment.true_rewards.len();
    segment
        .true_rewards
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let power = match exponent {
                GammaExponent::FromEnd => h - 1 - i,
                GammaExponent::FromStart => i,
            };
            profile.gamma.powi(power as i32) * r
        })
        .sum()
}

/// Slack on the tie check so returns that differ only by summation order
/// count as equal.
pub const TIE_ROUNDOFF: f64 = 1e-9;

/// Labels one pair: tie check on normalised returns, then a Bradley–Terry
/// draw on discounted returns, then an `ε` flip of strict labels.
pub fn annotate<R: Rng + ?Sized>(
    profile: &AnnotatorProfile,
    segment0: &Segment,
    segment1: &Segment,
    stats: &ReturnStats,
    exponent: GammaExponent,
    rng: &mut R,
) -> Result<Label> {
    if segment0.len() != segment1.len() {
        return Err(Error::Dimension {
            what: "segment length",
            expected: segment0.len(),
            actual: segment1.len(),
        });
    }
    let n0 = stats.normalize(segment0.true_return());
    let n1 = stats.normalize(segment1.true_return());
    if (n0 - n1).abs() <= profile.delta_equal + TIE_ROUNDOFF {
        return Ok(Label::Equal);
    }
    let r0 = discounted_return(profile, segment0, exponent);
    let r1 = discounted_return(profile, segment1, exponent);
    let label = if profile.beta.is_infinite() {
        if r0 > r1 {
            Label::Left
        } else if r1 > r0 {
            Label::Right
        } else {
            return Ok(Label::Equal);
        }
    } else {
        let p_right = crate::reward_model::bradley_terry(profile.beta * r0, profile.beta * r1);
        if rng.random::<f64>() < p_right {
            Label::Right
        } else {
            Label::Left
        }
    };
    Ok(if rng.random::<f64>() < profile.epsilon {
        label.flipped()
    } else {
        label
    })
}

/// Labels each pair with a uniformly drawn annotator. Return statistics are
/// updated with every segment in the batch before any label is produced.
pub fn label_batch<R: Rng + ?Sized>(
    pool: &AnnotatorPool,
    queries: Vec<QueryPair>,
    stats: &mut ReturnStats,
    exponent: GammaExponent,
    rng: &mut R,
) -> Result<Vec<PreferenceTriple>> {
    for (s0, s1) in &queries {
        stats.observe(s0.true_return());
        stats.observe(s1.true_return());
    }
    queries
        .into_iter()
        .map(|(segment0, segment1)| {
            let who = rng.random_range(0..pool.len());
            let label = annotate(&pool.profiles[who], &segment0, &segment1, stats, exponent, rng)?;
            Ok(PreferenceTriple {
                segment0,
                segment1,
                label,
                annotator: Some(who),
            })
        })
        .collect()
}
