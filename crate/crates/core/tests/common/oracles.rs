//! Independent reference computations shared by the integration tests and
//! the acceptance suite.

use diffcore::Tensor;
use latentpref::envs::Segment;
use latentpref::reward_model::{DiscreteSpec, LatentGaussian, Noise, PreferenceBatch, RewardModel};
use rand::Rng;

use super::{model, random_segment, rng};

const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
const ABS_FLOOR: f64 = 1e-5;

/// Which scalar of the combined loss to differentiate.
#[derive(Clone, Copy, Debug)]
pub enum Which {
    Supervised,
    Constraint,
    Total(f64),
}

fn loss_value(m: &RewardModel, batch: &PreferenceBatch, noise: &Noise, which: Which) -> f64 {
    match which {
        Which::Supervised => m.total_loss(batch, 0.0, noise).unwrap().supervised,
        Which::Constraint => m.total_loss(batch, 0.0, noise).unwrap().constraint,
        Which::Total(phi) => m.total_loss(batch, phi, noise).unwrap().total,
    }
}

fn analytic(m: &RewardModel, batch: &PreferenceBatch, noise: &Noise, which: Which) -> Vec<Tensor> {
    match which {
        Which::Supervised => m.loss_and_gradients(batch, 0.0, noise).unwrap().1,
        Which::Total(phi) => m.loss_and_gradients(batch, phi, noise).unwrap().1,
        Which::Constraint => {
            // L_c alone is the φ-derivative of L: grad(φ=1) − grad(φ=0)
            let one = m.loss_and_gradients(batch, 1.0, noise).unwrap().1;
            let zero = m.loss_and_gradients(batch, 0.0, noise).unwrap().1;
            one.into_iter()
                .zip(zero)
                .map(|(mut a, b)| {
                    a.add_scaled(&b, -1.0).unwrap();
                    a
                })
                .collect()
        }
    }
}

/// Largest relative deviation between analytic and central-difference gradients.
pub fn gradient_error(m: &RewardModel, batch: &PreferenceBatch, noise: &Noise, which: Which) -> f64 {
    let grads = analytic(m, batch, noise, which);
    let mut probe = m.clone();
    let mut worst: f64 = 0.0;
    for (pi, g) in grads.iter().enumerate() {
        for j in 0..g.len() {
            let original = probe.parameters()[pi].values()[j];
            let mut at = |dx: f64| {
                probe.parameters_mut()[pi].values_mut()[j] = original + dx;
                loss_value(&probe, batch, noise, which)
            };
            // fourth-order central stencil
            let near = at(FD_STEP) - at(-FD_STEP);
            let far = at(2.0 * FD_STEP) - at(-2.0 * FD_STEP);
            probe.parameters_mut()[pi].values_mut()[j] = original;
            let numeric = (8.0 * near - far) / (12.0 * FD_STEP);
            let a = g.values()[j];
            // the decoder output bias has an exactly zero gradient; the floor
            // keeps difference roundoff on such entries from counting as error
            let scale = a.abs().max(numeric.abs()).max(ABS_FLOOR);
            worst = worst.max((a - numeric).abs() / scale);
        }
    }
    worst
}

/// Random small instance. Every third instance repeats a segment so the
/// distinct-row weighting of `L_c` is exercised.
pub fn fd_instance(seed: u64) -> (RewardModel, PreferenceBatch, Noise) {
    let mut r = rng(seed);
    let (dim, k, h, pairs) = (3, 2, 3, 3);
    let m = model(&mut r, dim, k, 4);
    let segs: Vec<(Segment, Segment)> = (0..pairs)
        .map(|i| {
            let a = random_segment(&mut r, dim, h);
            let b = if seed.is_multiple_of(3) && i == 0 {
                a.clone()
            } else {
                random_segment(&mut r, dim, h)
            };
            (a, b)
        })
        .collect();
    let refs: Vec<(&Segment, &Segment)> = segs.iter().map(|(a, b)| (a, b)).collect();
    let labels = [[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]];
    let targets = (0..pairs).map(|_| labels[r.random_range(0..3)]).collect();
    let batch = PreferenceBatch::new(&refs, targets).unwrap();
    let samples = if seed % 4 == 1 { 2 } else { 1 };
    let noise = Noise::sample(batch.rows(), k, samples, &mut r);
    (m, batch, noise)
}

/// `E_q[log q(z) − log p(z)]` estimated from `n` reparameterised draws.
pub fn kl_monte_carlo(q: &LatentGaussian, n: usize, rng: &mut impl Rng) -> f64 {
    let mut total = 0.0;
    for _ in 0..n {
        let z = q.sample(rng);
        // normalising constants cancel
        total += z
            .iter()
            .zip(&q.mean)
            .zip(&q.log_variance)
            .map(|((z, m), lv)| -0.5 * lv - 0.5 * (z - m).powi(2) / lv.exp() + 0.5 * z * z)
            .sum::<f64>();
    }
    total / n as f64
}

pub fn random_distribution(r: &mut impl Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| r.random::<f64>().powi(3) + 1e-3).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Random instance with `|X|, |Z| ≤ 8`.
pub fn random_mi_spec(r: &mut impl Rng) -> DiscreteSpec {
    let nx = r.random_range(1..=8);
    let nz = r.random_range(1..=8);
    DiscreteSpec {
        p_x: random_distribution(r, nx),
        p_z_given_x: (0..nx).map(|_| random_distribution(r, nz)).collect(),
        r_z: random_distribution(r, nz),
    }
}

/// `p(z) = Σ_x p(x) p(z|x)`.
pub fn latent_marginal(spec: &DiscreteSpec) -> Vec<f64> {
    let mut marginal = vec![0.0; spec.r_z.len()];
    for (px, row) in spec.p_x.iter().zip(&spec.p_z_given_x) {
        for (m, v) in marginal.iter_mut().zip(row) {
            *m += px * v;
        }
    }
    marginal
}
