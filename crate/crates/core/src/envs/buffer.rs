use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Segment, Task, Transition};
use crate::error::{Error, Result};

/// A preference over `(σ⁰, σ¹)`: `Left` is `y = (1, 0)` (σ⁰ preferred),
/// `Right` is `y = (0, 1)`, `Equal` is `y = (0.5, 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Left,
    Right,
    Equal,
}

impl Label {
    pub fn y(self) -> [f64; 2] {
        match self {
            Label::Left => [1.0, 0.0],
            Label::Right => [0.0, 1.0],
            Label::Equal => [0.5, 0.5],
        }
    }

    /// Swaps the roles of σ⁰ and σ¹.
    pub fn flipped(self) -> Self {
        match self {
            Label::Left => Label::Right,
            Label::Right => Label::Left,
            Label::Equal => Label::Equal,
        }
    }
}

impl TryFrom<[f64; 2]> for Label {
    type Error = Error;

    fn try_from(y: [f64; 2]) -> Result<Self> {
        match y {
            [a, b] if a == 1.0 && b == 0.0 => Ok(Label::Left),
            [a, b] if a == 0.0 && b == 1.0 => Ok(Label::Right),
            [a, b] if a == 0.5 && b == 0.5 => Ok(Label::Equal),
            other => Err(Error::InvalidLabel(other)),
        }
    }
}

impl std::str::FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(Label::Left),
            "right" => Ok(Label::Right),
            "equal" => Ok(Label::Equal),
            _ => Err(Error::Config(format!("unknown label {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceTriple {
    pub segment0: Segment,
    pub segment1: Segment,
    pub label: Label,
    /// Index of the scripted annotator in its pool; `None` for human labels.
    pub annotator: Option<usize>,
}

/// Append-only log of labelled preferences (`D_p`).
#[derive(Debug, Clone, Default)]
pub struct PreferenceBuffer {
    triples: Vec<PreferenceTriple>,
}

impl PreferenceBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, triple: PreferenceTriple) {
        self.triples.push(triple);
    }

    pub fn extend(&mut self, triples: impl IntoIterator<Item = PreferenceTriple>) {
        self.triples.extend(triples);
    }

    pub fn as_slice(&self) -> &[PreferenceTriple] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Span {
    episode: u64,
    first_seq: u64,
    len: usize,
}

/// Bounded FIFO of transitions (`D_r`) that tracks contiguous episode spans so
/// that segments never cross an episode boundary.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
    spans: VecDeque<Span>,
    head_seq: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: VecDeque::new(),
            spans: VecDeque::new(),
            head_seq: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, transition: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
            self.head_seq += 1;
            if let Some(first) = self.spans.front_mut() {
                first.first_seq += 1;
                first.len -= 1;
                if first.len == 0 {
                    self.spans.pop_front();
                }
            }
        }
        let seq = self.head_seq + self.items.len() as u64;
        let continues = self
            .items
            .back()
            .is_some_and(|last| last.episode == transition.episode && last.t + 1 == transition.t);
        match self.spans.back_mut() {
            Some(span) if continues => span.len += 1,
            _ => self.spans.push_back(Span {
                episode: transition.episode,
                first_seq: seq,
                len: 1,
            }),
        }
        self.items.push_back(transition);
    }

    pub fn get(&self, index: usize) -> Option<&Transition> {
        self.items.get(index)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// The most recent `n` transitions, oldest first.
    pub fn recent(&self, n: usize) -> impl Iterator<Item = &Transition> {
        self.items.iter().skip(self.items.len().saturating_sub(n))
    }

    /// Uniform sample (with replacement) of `count` transitions.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<&Transition> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..count)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect()
    }

    /// Number of positions where a length-`h` segment can start.
    pub fn eligible_starts(&self, h: usize) -> usize {
        self.spans.iter().map(|s| (s.len + 1).saturating_sub(h)).sum()
    }

    /// Buffer index of the `k`-th eligible start (in buffer order).
    fn start_index(&self, h: usize, mut k: usize) -> usize {
        for span in &self.spans {
            let n = (span.len + 1).saturating_sub(h);
            if k < n {
                return (span.first_seq - self.head_seq) as usize + k;
            }
            k -= n;
        }
        unreachable!("start index out of range")
    }

    /// Segment of length `h` beginning at buffer index `index`.
    pub fn segment(&self, task: &Task, index: usize, h: usize) -> Result<Segment> {
        let steps: Vec<&Transition> = self.items.range(index..index + h).collect();
        let first = steps[0];
        let mut features = Vec::with_capacity(h * task.input_dim());
        for tr in &steps {
            features.extend(task.features(&tr.state, tr.action)?);
        }
        Ok(Segment {
            episode: first.episode,
            start: first.t,
            states: steps.iter().map(|tr| tr.state.clone()).collect(),
            actions: steps.iter().map(|tr| tr.action).collect(),
            true_rewards: steps.iter().map(|tr| tr.true_reward).collect(),
            features,
            feature_dim: task.input_dim(),
        })
    }
}

pub type QueryPair = (Segment, Segment);

/// Draws `count` segment pairs uniformly over all eligible start positions,
/// with distinct starts within each pair. Returns fewer pairs (possibly none)
/// when fewer than two starts exist.
pub fn sample_query_pairs<R: Rng + ?Sized>(
    buffer: &ReplayBuffer,
    task: &Task,
    h: usize,
    count: usize,
    rng: &mut R,
) -> Result<Vec<QueryPair>> {
    let starts = buffer.eligible_starts(h);
    if starts < 2 {
        // an empty buffer is the normal state of the first session
        if count > 0 && !buffer.is_empty() {
            tracing::warn!(starts, requested = count, "not enough data for query pairs");
        }
        return Ok(Vec::new());
    }
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..count {
        let i = rng.random_range(0..starts);
        let mut j = rng.random_range(0..starts - 1);
        if j >= i {
            j += 1;
        }
        let s0 = buffer.segment(task, buffer.start_index(h, i), h)?;
        let s1 = buffer.segment(task, buffer.start_index(h, j), h)?;
        pairs.push((s0, s1));
    }
    Ok(pairs)
}

/// Running min/max of observed segment returns, used to map returns into
/// `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnStats {
    pub min: f64,
    pub max: f64,
    pub count: u64,
}

impl Default for ReturnStats {
    fn default() -> Self {
        Self {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            count: 0,
        }
    }
}

impl ReturnStats {
    pub fn observe(&mut self, value: f64) {
        self.min = self.min.min(value);
        self.max = self.max.max(value);
        self.count += 1;
    }

    /// Min–max normalised value clamped to `[0, 1]`; a degenerate range
    /// (nothing or a single value observed) maps to 0.
    pub fn normalize(&self, value: f64) -> f64 {
        if self.count == 0 || self.max <= self.min {
            return 0.0;
        }
        ((value - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
    }
}
