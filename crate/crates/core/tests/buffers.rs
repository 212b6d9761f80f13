mod common;

use std::collections::HashMap;

use common::rng;
use latentpref::envs::export::{read_jsonl, write_jsonl};
use latentpref::envs::{sample_query_pairs, ReplayBuffer, ReturnStats, Task, TaskKind, Transition};
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn episode(task: &Task, id: u64, len: usize, seed: u64) -> Vec<Transition> {
    let mut r = rng(seed);
    let mut state = task.reset(&mut r);
    (0..len)
        .map(|t| {
            let tr = task
                .step(&state, (t + id as usize) % task.num_actions(), id, t)
                .unwrap();
            state = tr.next_state.clone();
            tr
        })
        .collect()
}

fn filled(task: &Task, lengths: &[usize]) -> ReplayBuffer {
    let mut buf = ReplayBuffer::new(10_000);
    for (i, &len) in lengths.iter().enumerate() {
        for tr in episode(task, i as u64, len, i as u64) {
            buf.push(tr);
        }
    }
    buf
}

#[test]
fn query_starts_are_uniform() {
    let task = Task::new(TaskKind::Gridworld);
    let lengths = [10, 6, 3];
    let h = 3;
    let buf = filled(&task, &lengths);
    let starts = buf.eligible_starts(h);
    assert_eq!(starts, 8 + 4 + 1);
    let pairs = sample_query_pairs(&buf, &task, h, 13_000, &mut rng(1)).unwrap();
    let mut counts: HashMap<(u64, usize), usize> = HashMap::new();
    for (a, b) in &pairs {
        assert_ne!((a.episode, a.start), (b.episode, b.start));
        for s in [a, b] {
            assert_eq!(s.len(), h);
            assert!(
                s.start + h <= lengths[s.episode as usize],
                "segment crosses an episode end"
            );
            *counts.entry((s.episode, s.start)).or_default() += 1;
        }
    }
    assert_eq!(counts.len(), starts);
    let expected = 2.0 * pairs.len() as f64 / starts as f64;
    let chi2: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let critical = ChiSquared::new((starts - 1) as f64).unwrap().inverse_cdf(0.999);
    assert!(chi2 < critical, "chi2 {chi2} >= {critical}");
}

#[test]
fn segments_carry_matching_features() {
    let task = Task::new(TaskKind::PointMass);
    let buf = filled(&task, &[12]);
    let pairs = sample_query_pairs(&buf, &task, 4, 10, &mut rng(2)).unwrap();
    for (a, _) in pairs {
        assert_eq!(a.feature_dim, task.input_dim());
        for t in 0..a.len() {
            assert_eq!(
                a.feature_row(t),
                task.features(&a.states[t], a.actions[t]).unwrap().as_slice()
            );
        }
        let total: f64 = a.true_rewards.iter().sum();
        assert_eq!(a.true_return(), total);
    }
}

#[test]
fn capacity_evicts_oldest() {
    let task = Task::new(TaskKind::Gridworld);
    let mut buf = ReplayBuffer::new(5);
    for tr in episode(&task, 0, 8, 0) {
        buf.push(tr);
    }
    assert_eq!(buf.len(), 5);
    let ts: Vec<usize> = buf.iter().map(|t| t.t).collect();
    assert_eq!(ts, vec![3, 4, 5, 6, 7]);
    let recent: Vec<usize> = buf.recent(2).map(|t| t.t).collect();
    assert_eq!(recent, vec![6, 7]);
    assert!(ReplayBuffer::new(5).sample(3, &mut rng(0)).is_empty());
}

#[test]
fn transitions_round_trip_through_jsonl() {
    let task = Task::new(TaskKind::Gridworld);
    let eps = episode(&task, 3, 7, 4);
    let mut out = Vec::new();
    write_jsonl(&mut out, &eps).unwrap();
    let back = read_jsonl(std::io::Cursor::new(out)).unwrap();
    assert_eq!(back.len(), eps.len());
    for (rec, tr) in back.iter().zip(&eps) {
        assert_eq!(
            (rec.episode, rec.t, rec.action, rec.reward),
            (tr.episode, tr.t, tr.action, tr.true_reward)
        );
        assert_eq!(rec.state, tr.state);
    }
}

proptest! {
    #[test]
    fn return_stats_ignore_order(mut values in prop::collection::vec(-100.0f64..100.0, 1..50), probe in -150.0f64..150.0) {
        let mut a = ReturnStats::default();
        values.iter().for_each(|v| a.observe(*v));
        values.reverse();
        let mut b = ReturnStats::default();
        values.iter().for_each(|v| b.observe(*v));
        prop_assert_eq!(a, b);
        let n = a.normalize(probe);
        prop_assert!((0.0..=1.0).contains(&n));
    }
}
