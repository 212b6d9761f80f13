//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. The end-to-end criteria share one set of runs.

mod common;

use std::collections::HashMap;
use std::io::Write;
use std::time::Instant;

use common::oracles::{fd_instance, gradient_error, kl_monte_carlo, latent_marginal, random_mi_spec, Which, REL_TOL};
use common::{mean, model, random_segment, rng, segment, spearman};
use diffcore::Tensor;
use latentpref::agent::{optimal_return, rollout, ActMode, AgentConfig, Policy};
use latentpref::annotators::{annotate, label_batch, sample_pool, AnnotatorPool, AnnotatorProfile, GammaExponent};
use latentpref::ensemble::{EnsembleMode, RewardEnsemble};
use latentpref::envs::{
    sample_query_pairs, Label, PreferenceBuffer, PreferenceTriple, ReplayBuffer, ReturnStats, Segment, Task, TaskKind,
};
use latentpref::harness::{
    analyze_latents, analyze_reward_range, eval_starts, run_experiment, ExperimentConfig, PoolSpec,
};
use latentpref::reward_model::{
    bradley_terry, kl_to_standard, verify_mi_bound, DiscreteSpec, LatentGaussian, RewardModel,
};
use rand::Rng;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------- oracles

fn gradient_correctness() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (i, seed) in (1000..1024).enumerate() {
        let (m, batch, noise) = fd_instance(seed);
        let phi = [1.0, 10.0, 100.0][i % 3];
        for which in [Which::Supervised, Which::Constraint, Which::Total(phi)] {
            worst = worst.max(gradient_error(&m, &batch, &noise, which));
            count += 1;
        }
    }
    outcome(
        worst < REL_TOL,
        format!("{count} checks on 24 instances (L_s, L_c, L), max relative error {worst:.2e} (tol {REL_TOL:e})"),
    )
}

fn kl_exactness() -> Outcome {
    let mut r = rng(2024);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    while cases < 12 {
        let k = r.random_range(1..=4);
        let q = LatentGaussian {
            mean: (0..k).map(|_| r.random_range(-1.5..1.5)).collect(),
            log_variance: (0..k).map(|_| r.random_range(-1.5..1.5)).collect(),
        };
        let exact = q.kl_to_standard();
        // relative error is ill-conditioned for near-zero divergences
        if exact < 0.2 {
            continue;
        }
        let estimate = kl_monte_carlo(&q, 1_000_000, &mut r);
        worst = worst.max((estimate - exact).abs() / exact);
        cases += 1;
    }
    let zero = kl_to_standard(&[0.0], &[0.0]);
    outcome(
        worst < 0.01 && zero == 0.0,
        format!("{cases} cases, 1e6 samples each, max relative deviation {worst:.4}; KL(N(0,1)||N(0,1)) = {zero}"),
    )
}

fn mi_bound() -> Outcome {
    let mut r = rng(77);
    let mut violations = 0;
    let mut worst_gap: f64 = 0.0;
    let mut worst_equality: f64 = 0.0;
    for _ in 0..1000 {
        let spec = random_mi_spec(&mut r);
        let report = verify_mi_bound(&spec).unwrap();
        if report.constraint < report.mutual_information - 1e-9 {
            violations += 1;
        }
        worst_gap = worst_gap.min(report.constraint - report.mutual_information);
        let marginal = latent_marginal(&spec);
        let tight = verify_mi_bound(&DiscreteSpec { r_z: marginal, ..spec }).unwrap();
        worst_equality = worst_equality.max((tight.constraint - tight.mutual_information).abs());
    }
    outcome(
        violations == 0 && worst_equality <= 1e-9,
        format!(
            "1000 instances, {violations} violations (min L_c - I = {worst_gap:.2e}); equality case max |L_c - I| = {worst_equality:.2e}"
        ),
    )
}

fn annotator_statistics() -> Outcome {
    const N: usize = 10_000;
    let sigma3 = |p: f64| 3.0 * (N as f64 * p * (1.0 - p)).sqrt();
    let mut r = rng(4);
    let mut st = ReturnStats::default();
    st.observe(0.0);
    st.observe(3.0);
    let a = segment(&mut r, 1, &[0.0, 0.0, 0.0]);
    let b = segment(&mut r, 1, &[1.0, 1.0, 1.0]);

    let coin = AnnotatorProfile::new(1e-9, 1.0, 0.0, 0.0).unwrap();
    let right = (0..N)
        .filter(|_| annotate(&coin, &a, &b, &st, GammaExponent::FromEnd, &mut r).unwrap() == Label::Right)
        .count();
    let coin_ok = (right as f64 - 0.5 * N as f64).abs() <= sigma3(0.5);

    let eps = 0.15;
    let flipper = AnnotatorProfile::new(f64::INFINITY, 1.0, eps, 0.0).unwrap();
    let flips = (0..N)
        .filter(|_| annotate(&flipper, &a, &b, &st, GammaExponent::FromEnd, &mut r).unwrap() == Label::Left)
        .count();
    let flip_ok = (flips as f64 - eps * N as f64).abs() <= sigma3(eps);

    let pairs: Vec<_> = (0..2000)
        .map(|_| {
            let x: Vec<f64> = (0..5).map(|_| r.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..5).map(|_| r.random_range(-1.0..1.0)).collect();
            (segment(&mut r, 1, &x), segment(&mut r, 1, &y))
        })
        .collect();
    let mut qs = ReturnStats::default();
    for (x, y) in &pairs {
        qs.observe(x.true_return());
        qs.observe(y.true_return());
    }
    let rates: Vec<f64> = [0.0, 0.02, 0.05, 0.1, 0.2, 0.4, 0.7]
        .iter()
        .map(|&d| {
            let p = AnnotatorProfile::new(5.0, 0.9, 0.1, d).unwrap();
            let ties = pairs
                .iter()
                .filter(|(x, y)| annotate(&p, x, y, &qs, GammaExponent::FromEnd, &mut r).unwrap() == Label::Equal)
                .count();
            ties as f64 / pairs.len() as f64
        })
        .collect();
    let monotone = rates.windows(2).all(|w| w[1] >= w[0]) && rates.last() > rates.first();
    outcome(
        coin_ok && flip_ok && monotone,
        format!(
            "beta=1e-9: {right}/{N} right (3 sigma {:.0}); eps={eps}: {flips}/{N} flips (expected {:.0} +/- {:.0}); tie rates {rates:.3?}",
            sigma3(0.5),
            eps * N as f64,
            sigma3(eps)
        ),
    )
}

fn bradley_terry_invariants() -> Outcome {
    let mut r = rng(5);
    let mut self_ok = true;
    let mut worst_sum: f64 = 0.0;
    let mut worst_shift: f64 = 0.0;
    for _ in 0..500 {
        let m = model(&mut r, 4, 3, 8);
        let a = random_segment(&mut r, 4, 10);
        let b = random_segment(&mut r, 4, 10);
        self_ok &= m.predict_preference(&a, &a).unwrap() == 0.5;
        let p = m.predict_preference(&a, &b).unwrap();
        worst_sum = worst_sum.max((p + m.predict_preference(&b, &a).unwrap() - 1.0).abs());
        let c = r.random_range(-5.0..5.0);
        let mut shifted = m.clone();
        shifted.decoder.layers_mut().last_mut().unwrap().bias.values_mut()[0] += c;
        worst_shift = worst_shift.max((shifted.predict_preference(&a, &b).unwrap() - p).abs());
        let (r0, r1) = (r.random_range(-20.0..20.0), r.random_range(-20.0..20.0));
        worst_sum = worst_sum.max((bradley_terry(r0, r1) + bradley_terry(r1, r0) - 1.0).abs());
    }
    outcome(
        self_ok && worst_sum <= 1e-12 && worst_shift <= 1e-12,
        format!(
            "500 models: P(s,s)=0.5 {}, max |P + P_swapped - 1| = {worst_sum:.1e}, max shift change {worst_shift:.1e}",
            if self_ok { "always" } else { "violated" }
        ),
    )
}

fn ensemble_invariants() -> Outcome {
    let mut r = rng(6);
    let mut weights_ok = true;
    let mut worst_sum: f64 = 0.0;
    let mut hull_ok = true;
    let mut single_ok = true;
    for trial in 0..200 {
        let n = 1 + trial % 5;
        let models: Vec<RewardModel> = (0..n)
            .map(|_| {
                let mut m = model(&mut r, 4, 3, 6);
                for enc in [&mut m.encoder_mean, &mut m.encoder_log_variance] {
                    for v in enc.layers_mut().last_mut().unwrap().bias.values_mut() {
                        *v = r.random_range(-3.0..3.0);
                    }
                }
                m
            })
            .collect();
        let x = Tensor::matrix(8, 4, (0..32).map(|_| r.random_range(-2.0..2.0)).collect()).unwrap();
        let members: Vec<Vec<f64>> = models.iter().map(|m| m.reward(&x).unwrap()).collect();
        let e = RewardEnsemble::from_models(models, EnsembleMode::KlConfidence).unwrap();
        for w in e.confidence_weights(&x).unwrap() {
            weights_ok &= w.iter().all(|&v| v > 0.0);
            worst_sum = worst_sum.max((w.iter().sum::<f64>() - 1.0).abs());
        }
        for (row, c) in e.reward(&x).unwrap().iter().enumerate() {
            let lo = members.iter().map(|m| m[row]).fold(f64::INFINITY, f64::min);
            let hi = members.iter().map(|m| m[row]).fold(f64::NEG_INFINITY, f64::max);
            let slack = 1e-12 * lo.abs().max(hi.abs()).max(1.0);
            hull_ok &= *c >= lo - slack && *c <= hi + slack;
        }
        if n == 1 {
            for mode in [EnsembleMode::KlConfidence, EnsembleMode::Mean, EnsembleMode::Single] {
                let single = RewardEnsemble::from_models(e.models().cloned().collect(), mode).unwrap();
                single_ok &= single.reward(&x).unwrap() == members[0];
            }
        }
    }
    outcome(
        weights_ok && worst_sum <= 1e-12 && hull_ok && single_ok,
        format!(
            "200 ensembles (N=1..5): weights positive {weights_ok}, max |sum - 1| = {worst_sum:.1e}, within member hull {hull_ok}, N=1 exact {single_ok}"
        ),
    )
}

// ------------------------------------------------------ synthetic training

/// Segment pairs drawn from 20 uniformly random gridworld episodes.
fn random_segment_pairs(pairs: usize, seed: u64) -> Vec<(Segment, Segment)> {
    let task = Task::new(TaskKind::Gridworld);
    let config = AgentConfig::default();
    let mut r = rng(seed);
    let policy = Policy::new(&task, &config, &mut r);
    let mut replay = ReplayBuffer::new(100_000);
    for episode in 0..20 {
        let start = task.reset(&mut r);
        for tr in rollout(&policy, &task, &config, start, episode, ActMode::Uniform, &mut r).unwrap() {
            replay.push(tr);
        }
    }
    sample_query_pairs(&replay, &task, 25, pairs, &mut r).unwrap()
}

fn synthetic_preferences(pool: &AnnotatorPool, pairs: usize, seed: u64) -> PreferenceBuffer {
    let queries = random_segment_pairs(pairs, seed);
    let mut stats = ReturnStats::default();
    let mut buf = PreferenceBuffer::new();
    buf.extend(label_batch(pool, queries, &mut stats, GammaExponent::FromEnd, &mut rng(seed + 1)).unwrap());
    buf
}

fn trained(buf: &PreferenceBuffer, n: usize, phi: f64, mode: EnsembleMode, seed: u64, steps: usize) -> RewardEnsemble {
    let config = ExperimentConfig {
        phi,
        ..ExperimentConfig::default()
    };
    let task = Task::new(TaskKind::Gridworld);
    let mut e = RewardEnsemble::new(
        n,
        &config.reward_model(task.input_dim()),
        config.reward_learning_rate,
        mode,
        seed,
    )
    .unwrap();
    e.train(buf, steps, &config.training()).unwrap();
    e
}

fn gridworld_probe() -> Tensor {
    let task = Task::new(TaskKind::Gridworld);
    Tensor::from_rows(&task.probe_inputs(0, &mut rng(0))).unwrap()
}

fn phi_contraction() -> Outcome {
    let buf = synthetic_preferences(&sample_pool(100, 0).unwrap(), 512, 11);
    let probe = gridworld_probe();
    let phis = [1.0, 10.0, 100.0];
    let ensembles: Vec<RewardEnsemble> = phis
        .iter()
        .map(|&phi| trained(&buf, 3, phi, EnsembleMode::KlConfidence, 12, 1000))
        .collect();
    let runs: Vec<(f64, &RewardEnsemble)> = phis.iter().copied().zip(&ensembles).collect();
    let ranges: Vec<f64> = analyze_reward_range(&runs, &probe, 20)
        .unwrap()
        .iter()
        .map(|r| r.range)
        .collect();
    let spreads: Vec<f64> = ensembles
        .iter()
        .map(|e| analyze_latents(e, &probe).unwrap().spread)
        .collect();
    let decreasing = |v: &[f64]| v.windows(2).all(|w| w[1] < w[0]);
    outcome(
        decreasing(&ranges) && decreasing(&spreads),
        format!("phi {phis:?}: reward range {ranges:.4?}, latent spread {spreads:.4?}"),
    )
}

/// Spearman correlation between predicted and true segment returns on
/// segments from fresh episodes that were never labelled, for KL-confidence
/// and plain averaging over two clean members and one trained on flipped
/// labels.
fn flipped_member_spearman() -> (f64, f64, usize) {
    let clean = synthetic_preferences(&sample_pool(100, 1).unwrap(), 512, 21);
    let mut flipped = PreferenceBuffer::new();
    flipped.extend(clean.as_slice().iter().map(|t| PreferenceTriple {
        label: t.label.flipped(),
        ..t.clone()
    }));
    let config = ExperimentConfig::default();
    let members: Vec<RewardModel> = [(&clean, 31), (&clean, 32), (&flipped, 33)]
        .into_iter()
        .map(|(buf, seed)| {
            let e = trained(buf, 1, config.phi, EnsembleMode::Single, seed, 1000);
            e.members.into_iter().next().unwrap().model
        })
        .collect();

    let probe: Vec<Segment> = random_segment_pairs(128, 23)
        .into_iter()
        .flat_map(|(a, b)| [a, b])
        .collect();
    let truth: Vec<f64> = probe.iter().map(Segment::true_return).collect();
    let rho = |mode| {
        let e = RewardEnsemble::from_models(members.clone(), mode).unwrap();
        let predicted: Vec<f64> = probe
            .iter()
            .map(|s| {
                let x = Tensor::matrix(s.len(), s.feature_dim, s.features.clone()).unwrap();
                e.reward(&x).unwrap().iter().sum()
            })
            .collect();
        spearman(&predicted, &truth)
    };
    (rho(EnsembleMode::KlConfidence), rho(EnsembleMode::Mean), probe.len())
}

// ------------------------------------------------------------ experiments

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Arm {
    Full,
    Baseline,
    Oracle,
    Mean,
    Single,
    FullPool1,
    BaselinePool1,
}

impl Arm {
    fn config(self, seed: u64) -> ExperimentConfig {
        let base = ExperimentConfig {
            seed,
            ..ExperimentConfig::default()
        };
        let backbone = ExperimentConfig {
            phi: 0.0,
            ensemble_mode: EnsembleMode::Mean,
            ..base.clone()
        };
        match self {
            Arm::Full => base,
            Arm::Baseline => backbone,
            Arm::Oracle => ExperimentConfig {
                pool: PoolSpec::Oracle,
                ..backbone
            },
            Arm::Mean => ExperimentConfig {
                ensemble_mode: EnsembleMode::Mean,
                ..base
            },
            Arm::Single => ExperimentConfig {
                ensemble_size: 1,
                ensemble_mode: EnsembleMode::Single,
                ..base
            },
            Arm::FullPool1 => ExperimentConfig {
                pool: PoolSpec::Size(1),
                ..base
            },
            Arm::BaselinePool1 => ExperimentConfig {
                pool: PoolSpec::Size(1),
                ..backbone
            },
        }
    }
}

struct Runs {
    finals: HashMap<Arm, Vec<f64>>,
    optimum: Vec<f64>,
}

impl Runs {
    fn collect() -> Self {
        let task = Task::new(TaskKind::Gridworld);
        let arms = [
            Arm::Full,
            Arm::Baseline,
            Arm::Oracle,
            Arm::Mean,
            Arm::Single,
            Arm::FullPool1,
            Arm::BaselinePool1,
        ];
        let mut finals = HashMap::new();
        for arm in arms {
            let values: Vec<f64> = SEEDS
                .iter()
                .map(|&seed| {
                    let t = Instant::now();
                    let out = run_experiment(&arm.config(seed), None).unwrap();
                    let v = out.final_return().unwrap();
                    eprintln!("  run {arm:?} seed {seed}: final return {v:.3} ({:.0?})", t.elapsed());
                    v
                })
                .collect();
            finals.insert(arm, values);
        }
        let optimum = SEEDS
            .iter()
            .map(|&seed| optimal_return(&task, &eval_starts(&Arm::Oracle.config(seed))).unwrap())
            .collect();
        Self { finals, optimum }
    }

    fn mean(&self, arm: Arm) -> f64 {
        mean(&self.finals[&arm])
    }
}

fn end_to_end(runs: &Runs) -> Outcome {
    let (full, baseline, oracle) = (runs.mean(Arm::Full), runs.mean(Arm::Baseline), runs.mean(Arm::Oracle));
    let optimum = mean(&runs.optimum);
    let a = full >= baseline;
    let b = full >= 0.7 * oracle;
    let c = oracle >= 0.95 * optimum;
    outcome(
        a && b && c,
        format!(
            "full {full:.3} >= baseline {baseline:.3}: {a}; full >= 70% of oracle {oracle:.3} ({:.3}): {b}; oracle >= 95% of optimum {optimum:.3} ({:.3}): {c}",
            0.7 * oracle,
            0.95 * optimum
        ),
    )
}

fn ensembling_ablation(runs: &Runs) -> Outcome {
    let (kl, avg, single) = (runs.mean(Arm::Full), runs.mean(Arm::Mean), runs.mean(Arm::Single));
    let ordered = kl >= avg && avg >= single;
    let (rho_kl, rho_mean, n) = flipped_member_spearman();
    outcome(
        ordered && rho_kl > rho_mean,
        format!(
            "final return kl_confidence {kl:.3}, mean {avg:.3}, single {single:.3} (ordered: {ordered}); flipped member, {n} held-out segments: spearman kl_confidence {rho_kl:.4} vs mean {rho_mean:.4}"
        ),
    )
}

fn pool_size_response(runs: &Runs) -> Outcome {
    let gain100 = runs.mean(Arm::Full) - runs.mean(Arm::Baseline);
    let gain1 = runs.mean(Arm::FullPool1) - runs.mean(Arm::BaselinePool1);
    outcome(
        gain100 > gain1,
        format!("improvement over baseline: pool 100 {gain100:.3}, pool 1 {gain1:.3}"),
    )
}

fn determinism() -> Outcome {
    let config = ExperimentConfig {
        iterations: 40,
        seed: 9,
        ..ExperimentConfig::default()
    };
    let dirs: Vec<_> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    let bytes: Vec<Vec<u8>> = dirs
        .iter()
        .map(|d| {
            run_experiment(&config, Some(d.path())).unwrap();
            std::fs::read(d.path().join("metrics.csv")).unwrap()
        })
        .collect();
    outcome(
        bytes[0] == bytes[1] && !bytes[0].is_empty(),
        format!(
            "two 40-iteration runs, metrics.csv {} bytes, identical: {}",
            bytes[0].len(),
            bytes[0] == bytes[1]
        ),
    )
}

fn report(name: &str, started: Instant, o: &Outcome) {
    println!(
        "{} {name}: {} [{:.1?}]",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        started.elapsed()
    );
    std::io::stdout().flush().unwrap();
}

/// Optional arguments select criteria by substring, e.g. `-- determinism`.
fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected = |name: &str| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()));
    let mut failed = Vec::new();
    let mut check = |name: &'static str, f: &dyn Fn() -> Outcome| {
        if !selected(name) {
            return;
        }
        let t = Instant::now();
        let o = f();
        report(name, t, &o);
        if !o.pass {
            failed.push(name);
        }
    };
    check("gradient correctness", &gradient_correctness);
    check("KL exactness", &kl_exactness);
    check("MI bound", &mi_bound);
    check("annotator statistics", &annotator_statistics);
    check("Bradley-Terry invariants", &bradley_terry_invariants);
    check("ensemble invariants", &ensemble_invariants);
    check("phi contraction", &phi_contraction);
    check("determinism", &determinism);

    const RUN_CRITERIA: [&str; 3] = ["end-to-end recovery", "ensembling ablation", "pool-size response"];
    if RUN_CRITERIA.iter().any(|n| selected(n)) {
        eprintln!("running 35 gridworld experiments (7 arms x 5 seeds)");
        let runs = Runs::collect();
        check(RUN_CRITERIA[0], &|| end_to_end(&runs));
        check(RUN_CRITERIA[1], &|| ensembling_ablation(&runs));
        check(RUN_CRITERIA[2], &|| pool_size_response(&runs));
    }

    if failed.is_empty() {
        println!("acceptance: all selected criteria passed");
    } else {
        println!("acceptance: {} failed: {}", failed.len(), failed.join(", "));
        std::process::exit(1);
    }
}
