//! Line-delimited JSON export of trajectories.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::Transition;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub episode: u64,
    pub t: usize,
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
}

impl From<&Transition> for StepRecord {
    fn from(tr: &Transition) -> Self {
        Self {
            episode: tr.episode,
            t: tr.t,
            state: tr.state.clone(),
            action: tr.action,
            reward: tr.true_reward,
        }
    }
}

pub fn write_jsonl<'a, W: Write>(out: &mut W, transitions: impl IntoIterator<Item = &'a Transition>) -> Result<()> {
    for tr in transitions {
        serde_json::to_writer(&mut *out, &StepRecord::from(tr))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<StepRecord>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
