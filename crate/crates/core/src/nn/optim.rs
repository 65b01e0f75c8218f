use rand::seq::SliceRandom;
use rand::Rng;

use super::{Gradients, NetworkParams, NetworkSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for a list of arrays; starts at zero with step 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, lens: impl IntoIterator<Item = usize>) -> Self {
        let m: Vec<Vec<f64>> = lens.into_iter().map(|n| vec![0.0; n]).collect();
        Self {
            config,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn for_params(config: AdamConfig, params: &NetworkParams) -> Self {
        Self::new(config, params.layers.iter().flat_map(|l| l.weights.iter().map(Vec::len)))
    }

    /// One bias-corrected update of `values` against `grads`, array by array.
    pub fn update<'a>(
        &mut self,
        values: impl IntoIterator<Item = &'a mut Vec<f64>>,
        grads: impl IntoIterator<Item = &'a Vec<f64>>,
    ) {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in values.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}

/// Adam update of every trainable array; refuses non-finite gradients.
pub fn adam_step(spec: &NetworkSpec, params: &mut NetworkParams, grads: &Gradients, state: &mut Adam) -> Result<()> {
    for (i, layer) in grads.layers.iter().enumerate() {
        for (a, g) in layer.iter().enumerate() {
            if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite gradient in layer {i} ({:?}), array {a}, element {j}: {}",
                    spec.layers[i], g[j]
                )));
            }
        }
    }
    state.update(
        params.layers.iter_mut().flat_map(|l| l.weights.iter_mut()),
        grads.layers.iter().flatten(),
    );
    Ok(())
}

/// Class-balanced index batches for binary labels: ⌈n / batch⌉ batches per
/// call, each half from a shuffled cycle over either class (the minority
/// class repeats). Odd batch sizes alternate which class gets the extra slot.
pub fn weighted_batch_sampler(labels: &[usize], batch_size: usize, rng: &mut impl Rng) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(Error::input("balanced batches need at least two slots"));
    }
    let mut pools: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &y) in labels.iter().enumerate() {
        match y {
            0 | 1 => pools[y].push(i),
            _ => return Err(Error::input(format!("label {y} is not binary"))),
        }
    }
    if pools.iter().any(Vec::is_empty) {
        return Err(Error::input("weighted sampling needs both classes present"));
    }
    let mut cursors = [0usize; 2];
    for p in &mut pools {
        p.shuffle(rng);
    }
    let n_batches = labels.len().div_ceil(batch_size);
    let mut batches = Vec::with_capacity(n_batches);
    for b in 0..n_batches {
        let half = batch_size / 2;
        let counts = if batch_size % 2 == 0 {
            [half, half]
        } else if b % 2 == 0 {
            [half + 1, half]
        } else {
            [half, half + 1]
        };
        let mut batch = Vec::with_capacity(batch_size);
        for class in 0..2 {
            for _ in 0..counts[class] {
                if cursors[class] == pools[class].len() {
                    pools[class].shuffle(rng);
                    cursors[class] = 0;
                }
                batch.push(pools[class][cursors[class]]);
                cursors[class] += 1;
            }
        }
        batches.push(batch);
    }
    Ok(batches)
}
