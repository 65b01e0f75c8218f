//! Central finite-difference check of a network's analytic gradients.

#![allow(dead_code)]

use lumitrack::nn::{backward, cross_entropy, forward, NetworkParams, NetworkSpec, Pass};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_EPS: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
/// Below this magnitude a gradient is compared in absolute terms (its
/// finite-difference estimate is dominated by round-off).
const FD_FLOOR: f64 = 1e-5;

pub fn random_batch(spec: &NetworkSpec, n: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<usize>) {
    let x = (0..n * spec.input.size()).map(|_| rng.random_range(-1.5..1.5)).collect();
    let y = (0..n).map(|_| rng.random_range(0..spec.classes())).collect();
    (x, y)
}

fn loss(spec: &NetworkSpec, params: &NetworkParams, x: &[f64], y: &[usize], seed: u64) -> f64 {
    let (p, _) = forward(spec, params, x, Pass::Train { seed }).unwrap();
    cross_entropy(&p, y)
}

/// Largest relative error between analytic and central-difference gradients.
pub fn gradient_check(spec: &NetworkSpec, seed: u64, n: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = NetworkParams::init(spec, &mut rng).unwrap();
    // Non-trivial biases and batchnorm affine terms.
    for layer in &mut params.layers {
        for w in &mut layer.weights {
            for v in w.iter_mut() {
                *v += rng.random_range(-0.2..0.2);
            }
        }
    }
    let (x, y) = random_batch(spec, n, &mut rng);
    let pass = Pass::Train { seed: 99 };
    let (_, cache) = forward(spec, &params, &x, pass).unwrap();
    let grads = backward(spec, &params, &cache, &y).unwrap();

    let mut worst = 0.0f64;
    for li in 0..params.layers.len() {
        for ai in 0..params.layers[li].weights.len() {
            for k in 0..params.layers[li].weights[ai].len() {
                let orig = params.layers[li].weights[ai][k];
                params.layers[li].weights[ai][k] = orig + FD_EPS;
                let up = loss(spec, &params, &x, &y, 99);
                params.layers[li].weights[ai][k] = orig - FD_EPS;
                let down = loss(spec, &params, &x, &y, 99);
                params.layers[li].weights[ai][k] = orig;
                let numeric = (up - down) / (2.0 * FD_EPS);
                let analytic = grads.layers[li][ai][k];
                let scale = analytic.abs().max(numeric.abs()).max(FD_FLOOR);
                let rel = (analytic - numeric).abs() / scale;
                worst = worst.max(rel);
            }
        }
    }
    worst
}

