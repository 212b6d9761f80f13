//! Shared state between a running experiment and the annotation API.

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::envs::{Label, PreferenceTriple, QueryPair, Segment, TaskMeta};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepView {
    pub state: Vec<f64>,
    pub action: usize,
    pub t: usize,
}

/// A query as shown to a human: behaviour only, never rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryView {
    pub query_id: u64,
    pub segment0: Vec<StepView>,
    pub segment1: Vec<StepView>,
    pub task_meta: TaskMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Status {
    pub iteration: usize,
    pub labels_collected: usize,
    pub pending_queries: usize,
    pub latest_eval_return: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelError {
    UnknownQuery,
    AlreadyLabeled,
}

/// One line of the preference log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedPreference {
    pub query_id: u64,
    pub label: Label,
    pub y: [f64; 2],
    pub triple: PreferenceTriple,
}

struct Entry {
    pair: QueryPair,
    label: Option<Label>,
}

#[derive(Default)]
struct State {
    next_id: u64,
    queries: BTreeMap<u64, Entry>,
    /// Labelled but not yet handed to the trainer.
    fresh: Vec<u64>,
    labels_collected: usize,
    iteration: usize,
    latest_eval_return: Option<f64>,
}

pub struct AnnotationService {
    state: Mutex<State>,
    labeled: Condvar,
    log: Mutex<Option<File>>,
    task_meta: TaskMeta,
}

fn steps(segment: &Segment) -> Vec<StepView> {
    segment
        .states
        .iter()
        .zip(&segment.actions)
        .enumerate()
        .map(|(i, (s, a))| StepView {
            state: s.clone(),
            action: *a,
            t: segment.start + i,
        })
        .collect()
}

impl AnnotationService {
    pub fn new(task_meta: TaskMeta, log_path: Option<&Path>) -> Result<Self> {
        let log = log_path
            .map(|p| OpenOptions::new().create(true).append(true).open(p))
            .transpose()?;
        Ok(Self {
            state: Mutex::new(State::default()),
            labeled: Condvar::new(),
            log: Mutex::new(log),
            task_meta,
        })
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Queues pairs for labelling and returns their ids.
    pub fn submit(&self, pairs: Vec<QueryPair>) -> Vec<u64> {
        let mut st = self.lock();
        pairs
            .into_iter()
            .map(|pair| {
                let id = st.next_id;
                st.next_id += 1;
                st.queries.insert(id, Entry { pair, label: None });
                id
            })
            .collect()
    }

    /// Oldest unlabelled query.
    pub fn next_query(&self) -> Option<QueryView> {
        let st = self.lock();
        st.queries
            .iter()
            .find(|(_, e)| e.label.is_none())
            .map(|(id, e)| QueryView {
                query_id: *id,
                segment0: steps(&e.pair.0),
                segment1: steps(&e.pair.1),
                task_meta: self.task_meta.clone(),
            })
    }

    /// Records a label, appends it to the preference log and wakes the trainer.
    pub fn label(&self, query_id: u64, label: Label) -> std::result::Result<PreferenceTriple, LabelError> {
        let triple = {
            let mut st = self.lock();
            let entry = st.queries.get_mut(&query_id).ok_or(LabelError::UnknownQuery)?;
            if entry.label.is_some() {
                return Err(LabelError::AlreadyLabeled);
            }
            entry.label = Some(label);
            let triple = PreferenceTriple {
                segment0: entry.pair.0.clone(),
                segment1: entry.pair.1.clone(),
                label,
                annotator: None,
            };
            st.fresh.push(query_id);
            st.labels_collected += 1;
            triple
        };
        let mut log = self.log.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(f) = log.as_mut() {
            let line = LoggedPreference {
                query_id,
                label,
                y: label.y(),
                triple: triple.clone(),
            };
            match serde_json::to_string(&line) {
                Ok(text) => {
                    if let Err(e) = writeln!(f, "{text}").and_then(|_| f.flush()) {
                        tracing::warn!(error = %e, "could not append to preference log");
                    }
                }
                Err(e) => tracing::warn!(error = %e, "could not encode preference"),
            }
        }
        self.labeled.notify_all();
        Ok(triple)
    }

    /// Takes every label that has arrived since the previous call.
    pub fn drain_labeled(&self) -> Vec<PreferenceTriple> {
        let mut st = self.lock();
        let ids = std::mem::take(&mut st.fresh);
        ids.into_iter()
            .map(|id| {
                let e = &st.queries[&id];
                PreferenceTriple {
                    segment0: e.pair.0.clone(),
                    segment1: e.pair.1.clone(),
                    label: e.label.expect("fresh ids are labelled"),
                    annotator: None,
                }
            })
            .collect()
    }

    /// Blocks until every id in `ids` is labelled or `timeout` elapses.
    /// Returns whether all arrived.
    pub fn wait_for(&self, ids: &[u64], timeout: Duration) -> bool {
        let wanted: HashSet<u64> = ids.iter().copied().collect();
        let deadline = Instant::now() + timeout;
        let mut st = self.lock();
        loop {
            let done = wanted
                .iter()
                .all(|id| st.queries.get(id).is_none_or(|e| e.label.is_some()));
            if done {
                return true;
            }
            let now = Instant::now();
            if now >= deadline {
                return false;
            }
            st = self
                .labeled
                .wait_timeout(st, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }

    pub fn set_progress(&self, iteration: usize, eval_return: Option<f64>) {
        let mut st = self.lock();
        st.iteration = iteration;
        if eval_return.is_some() {
            st.latest_eval_return = eval_return;
        }
    }

    pub fn status(&self) -> Status {
        let st = self.lock();
        Status {
            iteration: st.iteration,
            labels_collected: st.labels_collected,
            pending_queries: st.queries.values().filter(|e| e.label.is_none()).count(),
            latest_eval_return: st.latest_eval_return,
        }
    }

    pub fn task_meta(&self) -> &TaskMeta {
        &self.task_meta
    }
}

/// Reads a preference log written by [`AnnotationService`].
pub fn read_preference_log(path: &Path) -> Result<Vec<LoggedPreference>> {
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
