//! Analytic gradients against central finite differences, plus a
//! straight-line reimplementation of the MLP forward pass.

use diffcore::{Activation, Adam, AdamConfig, Mlp, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;
const ABS_FLOOR: f64 = 1e-7;

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Naive triple-loop evaluation of a dense stack, independent of the crate's kernels.
fn straight_line_forward(mlp: &Mlp, input: &Tensor) -> Vec<f64> {
    let mut rows: Vec<Vec<f64>> = (0..input.rows()).map(|i| input.row(i).to_vec()).collect();
    for layer in mlp.layers() {
        let fan_out = layer.weight.cols();
        rows = rows
            .iter()
            .map(|x| {
                (0..fan_out)
                    .map(|j| {
                        let mut acc = layer.bias.values()[j];
                        for (i, xi) in x.iter().enumerate() {
                            acc += xi * layer.weight.values()[i * fan_out + j];
                        }
                        match layer.activation {
                            Activation::Tanh => acc.tanh(),
                            Activation::Relu => {
                                if acc > 0.0 {
                                    acc
                                } else {
                                    0.0
                                }
                            }
                            Activation::Identity => acc,
                        }
                    })
                    .collect()
            })
            .collect();
    }
    rows.concat()
}

/// A loss head exercising most primitives: log-softmax cross-entropy over
/// the network outputs plus exp/log/square/clamp terms.
fn loss_head(tape: &mut Tape, out: Var, target: &Tensor) -> Var {
    let logp = tape.log_softmax(out).unwrap();
    let t = tape.constant(target.clone());
    let ce = tape.mul(logp, t).unwrap();
    let ce = tape.sum(ce);
    let ce = tape.scale(ce, -1.0);
    let sq = tape.square(out);
    let e = tape.exp(sq);
    let e = tape.shift(e, 1.0);
    let l = tape.log(e);
    let c = tape.clamp(out, -0.9, 0.9);
    let rows = tape.sum_axis(c, 1).unwrap();
    let rows = tape.square(rows);
    let m = tape.mean(l);
    let r = tape.mean(rows);
    let a = tape.add(ce, m).unwrap();
    tape.add(a, r).unwrap()
}

fn loss_value(mlp: &Mlp, x: &Tensor, target: &Tensor) -> f64 {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let (out, _) = mlp.record(&mut tape, xv).unwrap();
    let loss = loss_head(&mut tape, out, target);
    tape.value(loss).item()
}

fn assert_close(analytic: f64, numeric: f64, what: &str) {
    let err = (analytic - numeric).abs();
    let scale = analytic.abs().max(numeric.abs());
    assert!(
        err <= ABS_FLOOR || err <= REL_TOL * scale,
        "{what}: analytic {analytic} vs numeric {numeric}"
    );
}

#[test]
fn random_mlp_forward_matches_straight_line_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let mlp = Mlp::new(&[4, 6, 3], Activation::Tanh, Activation::Tanh, &mut rng);
        let x = random_tensor(&mut rng, 5, 4);
        let fast = mlp.forward(&x).unwrap();
        let slow = straight_line_forward(&mlp, &x);
        assert_eq!(fast.shape(), &[5, 3]);
        for (a, b) in fast.values().iter().zip(&slow) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}

#[test]
fn random_mlp_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..20 {
        let hidden = if trial % 2 == 0 {
            Activation::Tanh
        } else {
            Activation::Relu
        };
        let mlp = Mlp::new(&[3, 5, 4, 3], hidden, Activation::Identity, &mut rng);
        let x = random_tensor(&mut rng, 4, 3);
        let mut target = Tensor::zeros(vec![4, 3]);
        for i in 0..4 {
            target.values_mut()[i * 3 + rng.random_range(0..3)] = 1.0;
        }

        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone().with_requires_grad(true));
        let (out, vars) = mlp.record(&mut tape, xv).unwrap();
        let loss = loss_head(&mut tape, out, &target);
        let grads = tape.backward(loss).unwrap();
        let param_grads = grads.collect(&vars.params).unwrap();

        for (pi, g) in param_grads.iter().enumerate() {
            for k in 0..g.len() {
                let mut plus = mlp.clone();
                plus.parameters_mut()[pi].values_mut()[k] += STEP;
                let mut minus = mlp.clone();
                minus.parameters_mut()[pi].values_mut()[k] -= STEP;
                let numeric = (loss_value(&plus, &x, &target) - loss_value(&minus, &x, &target)) / (2.0 * STEP);
                assert_close(g.values()[k], numeric, &format!("trial {trial} param {pi}[{k}]"));
            }
        }
        let gx = grads.wrt(xv).unwrap();
        for k in 0..x.len() {
            let mut xp = x.clone();
            xp.values_mut()[k] += STEP;
            let mut xm = x.clone();
            xm.values_mut()[k] -= STEP;
            let numeric = (loss_value(&mlp, &xp, &target) - loss_value(&mlp, &xm, &target)) / (2.0 * STEP);
            assert_close(gx.values()[k], numeric, &format!("trial {trial} input[{k}]"));
        }
    }
}

fn grads_of(mlp: &Mlp, x: &Tensor, combine: impl Fn(&mut Tape, Var) -> Var) -> Vec<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let (out, vars) = mlp.record(&mut tape, xv).unwrap();
    let loss = combine(&mut tape, out);
    tape.backward(loss).unwrap().collect(&vars.params).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn backward_is_linear(seed in 0u64..10_000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mlp = Mlp::new(&[2, 4, 2], Activation::Tanh, Activation::Identity, &mut rng);
        let x = random_tensor(&mut rng, 3, 2);
        let l1 = |tape: &mut Tape, out: Var| { let s = tape.square(out); tape.sum(s) };
        let l2 = |tape: &mut Tape, out: Var| { let e = tape.exp(out); tape.mean(e) };
        let g1 = grads_of(&mlp, &x, l1);
        let g2 = grads_of(&mlp, &x, l2);
        let gc = grads_of(&mlp, &x, |tape, out| {
            let p = l1(tape, out);
            let q = l2(tape, out);
            let p = tape.scale(p, a);
            let q = tape.scale(q, b);
            tape.add(p, q).unwrap()
        });
        for ((x1, x2), xc) in g1.iter().zip(&g2).zip(&gc) {
            for ((u, v), w) in x1.values().iter().zip(x2.values()).zip(xc.values()) {
                prop_assert!((a * u + b * v - w).abs() <= 1e-10 * (1.0 + w.abs()));
            }
        }
    }
}

fn train_run(seed: u64, steps: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mlp = Mlp::new(&[3, 8, 1], Activation::Tanh, Activation::Identity, &mut rng);
    let mut opt = Adam::new(AdamConfig::with_learning_rate(1e-2));
    for _ in 0..steps {
        let x = random_tensor(&mut rng, 16, 3);
        let y: Vec<f64> = (0..16).map(|i| x.row(i).iter().sum::<f64>().sin()).collect();
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let (out, vars) = mlp.record(&mut tape, xv).unwrap();
        let yv = tape.constant(Tensor::matrix(16, 1, y).unwrap());
        let neg = tape.scale(yv, -1.0);
        let diff = tape.add(out, neg).unwrap();
        let sq = tape.square(diff);
        let loss = tape.mean(sq);
        let grads = tape.backward(loss).unwrap().collect(&vars.params).unwrap();
        opt.step(&mut mlp.parameters_mut(), &grads).unwrap();
        assert!(mlp.is_finite());
    }
    assert_eq!(opt.steps(), steps as u64);
    mlp.parameters()
        .iter()
        .flat_map(|t| t.values().iter().map(|v| v.to_bits()))
        .collect()
}

#[test]
fn seeded_training_is_bit_identical() {
    assert_eq!(train_run(42, 50), train_run(42, 50));
    assert_ne!(train_run(42, 50), train_run(43, 50));
}
