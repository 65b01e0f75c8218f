//! Small feed-forward network engine on 64-bit floats: 1-D convolution,
//! batch normalization, ReLU, max pooling, dense, dropout and a softmax
//! head trained with cross-entropy.
//!
//! Batches are flat row-major buffers `[example][channel][position]`.

mod io;
mod layers;
mod optim;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use io::{load_params, save_params, FORMAT_VERSION, MAGIC};
pub use optim::{adam_step, weighted_batch_sampler, Adam, AdamConfig};

/// Added to the batch variance before normalizing.
pub const BN_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv { out_ch: usize, kernel: usize, stride: usize },
    BatchNorm,
    Relu,
    MaxPool { k: usize },
    /// Flattens its input.
    Dense { out: usize },
    Dropout { p: f64 },
    Softmax,
}

impl LayerSpec {
    fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::BatchNorm => "batchnorm",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Softmax => "softmax",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub length: usize,
}

impl Shape {
    pub fn new(channels: usize, length: usize) -> Self {
        Self { channels, length }
    }

    pub fn features(n: usize) -> Self {
        Self::new(n, 1)
    }

    pub fn size(&self) -> usize {
        self.channels * self.length
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(input: Shape, layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = Self { input, layers };
        spec.shapes()?;
        Ok(spec)
    }

    /// Shape entering each layer followed by the output shape.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let bad = |i: usize, msg: String| Err(Error::Shape(format!("layer {i} ({}): {msg}", self.layers[i].name())));
        if self.input.size() == 0 {
            return Err(Error::Shape("empty input shape".into()));
        }
        let mut shapes = vec![self.input];
        let mut s = self.input;
        for (i, layer) in self.layers.iter().enumerate() {
            s = match *layer {
                LayerSpec::Conv { out_ch, kernel, stride } => {
                    if out_ch == 0 || kernel == 0 || stride == 0 {
                        return bad(i, "zero channels, kernel or stride".into());
                    }
                    if s.length < kernel {
                        return bad(i, format!("length {} shorter than kernel {kernel}", s.length));
                    }
                    Shape::new(out_ch, (s.length - kernel) / stride + 1)
                }
                LayerSpec::MaxPool { k } => {
                    if k == 0 || s.length < k {
                        return bad(i, format!("cannot pool length {} by {k}", s.length));
                    }
                    Shape::new(s.channels, s.length / k)
                }
                LayerSpec::Dense { out } => {
                    if out == 0 {
                        return bad(i, "zero output units".into());
                    }
                    Shape::features(out)
                }
                LayerSpec::Dropout { p } => {
                    if !(0.0..1.0).contains(&p) {
                        return bad(i, format!("dropout p = {p} outside [0, 1)"));
                    }
                    s
                }
                LayerSpec::Softmax => {
                    if i + 1 != self.layers.len() {
                        return bad(i, "softmax must be the last layer".into());
                    }
                    if s.length != 1 || s.channels < 2 {
                        return bad(i, format!("softmax needs a flat input of ≥ 2 classes, got {s:?}"));
                    }
                    s
                }
                LayerSpec::BatchNorm | LayerSpec::Relu => s,
            };
            shapes.push(s);
        }
        if self.layers.last() != Some(&LayerSpec::Softmax) {
            return Err(Error::Shape("network must end in softmax".into()));
        }
        Ok(shapes)
    }

    pub fn classes(&self) -> usize {
        self.shapes().map_or(0, |s| s.last().expect("non-empty").channels)
    }

    /// Shapes of the trainable arrays and of the buffers of layer `i`.
    fn array_lens(&self, shapes: &[Shape], i: usize) -> (Vec<usize>, Vec<usize>) {
        let s = shapes[i];
        match self.layers[i] {
            LayerSpec::Conv { out_ch, kernel, .. } => (vec![out_ch * s.channels * kernel, out_ch], vec![]),
            LayerSpec::BatchNorm => (vec![s.channels; 2], vec![s.channels; 2]),
            LayerSpec::Dense { out } => (vec![out * s.size(), out], vec![]),
            _ => (vec![], vec![]),
        }
    }

    pub fn param_count(&self) -> usize {
        let shapes = match self.shapes() {
            Ok(s) => s,
            Err(_) => return 0,
        };
        (0..self.layers.len()).map(|i| self.array_lens(&shapes, i).0.iter().sum::<usize>()).sum()
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("spec serializes");
        Sha256::digest(&json).into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Training,
    Inference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// conv: weight `[out][in][k]`, bias; dense: weight `[out][in]`, bias;
    /// batchnorm: scale, shift.
    pub weights: Vec<Vec<f64>>,
    /// batchnorm: running mean, running variance.
    pub buffers: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub layers: Vec<LayerParams>,
    pub mode: Mode,
}

impl NetworkParams {
    /// Kaiming-uniform weights, zero biases, unit batchnorm scale.
    pub fn init(spec: &NetworkSpec, rng: &mut impl Rng) -> Result<Self> {
        let shapes = spec.shapes()?;
        let layers = spec
            .layers
            .iter()
            .enumerate()
            .map(|(i, layer)| {
                let s = shapes[i];
                let kaiming = |rng: &mut dyn rand::RngCore, n: usize, fan_in: usize| -> Vec<f64> {
                    let bound = (6.0 / fan_in as f64).sqrt();
                    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                };
                match *layer {
                    LayerSpec::Conv { out_ch, kernel, .. } => LayerParams {
                        weights: vec![kaiming(rng, out_ch * s.channels * kernel, s.channels * kernel), vec![0.0; out_ch]],
                        buffers: vec![],
                    },
                    LayerSpec::Dense { out } => LayerParams {
                        weights: vec![kaiming(rng, out * s.size(), s.size()), vec![0.0; out]],
                        buffers: vec![],
                    },
                    LayerSpec::BatchNorm => LayerParams {
                        weights: vec![vec![1.0; s.channels], vec![0.0; s.channels]],
                        buffers: vec![vec![0.0; s.channels], vec![1.0; s.channels]],
                    },
                    _ => LayerParams {
                        weights: vec![],
                        buffers: vec![],
                    },
                }
            })
            .collect();
        Ok(Self {
            layers,
            mode: Mode::Training,
        })
    }

    /// Check array counts and lengths against `spec`.
    pub fn check(&self, spec: &NetworkSpec) -> Result<()> {
        let shapes = spec.shapes()?;
        if self.layers.len() != spec.layers.len() {
            return Err(Error::Shape(format!(
                "params have {} layers, spec has {}",
                self.layers.len(),
                spec.layers.len()
            )));
        }
        for (i, lp) in self.layers.iter().enumerate() {
            let (w, b) = spec.array_lens(&shapes, i);
            let got_w: Vec<usize> = lp.weights.iter().map(Vec::len).collect();
            let got_b: Vec<usize> = lp.buffers.iter().map(Vec::len).collect();
            if got_w != w || got_b != b {
                return Err(Error::Shape(format!(
                    "layer {i} ({}): arrays {got_w:?}/{got_b:?}, expected {w:?}/{b:?}",
                    spec.layers[i].name()
                )));
            }
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Gradients {
        Gradients {
            layers: self
                .layers
                .iter()
                .map(|l| l.weights.iter().map(|w| vec![0.0; w.len()]).collect())
                .collect(),
        }
    }
}

/// Gradients mirroring [`LayerParams::weights`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Vec<Vec<f64>>>,
}

impl Gradients {
    pub fn norm(&self) -> f64 {
        self.layers.iter().flatten().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pass {
    /// Batch statistics and inverted dropout; dropout masks drawn from
    /// `seed`, one stream per layer.
    Train { seed: u64 },
    /// Running statistics, identity dropout.
    Infer,
}

#[derive(Debug, Clone)]
pub(crate) enum Aux {
    None,
    Norm { xhat: Vec<f64>, inv_std: Vec<f64>, mean: Vec<f64>, var: Vec<f64> },
    Pool { argmax: Vec<usize> },
    Mask(Vec<f64>),
}

/// Activations kept by a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct Cache {
    pub n: usize,
    training: bool,
    inputs: Vec<Vec<f64>>,
    aux: Vec<Aux>,
    pub probs: Vec<f64>,
}

impl Cache {
    /// Per-channel batch mean and (biased) variance seen by batchnorm layer `i`.
    pub fn batch_stats(&self, i: usize) -> Option<(&[f64], &[f64])> {
        match &self.aux[i] {
            Aux::Norm { mean, var, .. } => Some((mean, var)),
            _ => None,
        }
    }

    /// Normalized activations of batchnorm layer `i` before scale and shift.
    pub fn normalized(&self, i: usize) -> Option<&[f64]> {
        match &self.aux[i] {
            Aux::Norm { xhat, .. } => Some(xhat),
            _ => None,
        }
    }
}

fn batch_size(spec: &NetworkSpec, input: &[f64]) -> Result<usize> {
    let size = spec.input.size();
    if input.is_empty() || input.len() % size != 0 {
        return Err(Error::Shape(format!(
            "batch of {} values is not a positive multiple of the input size {size}",
            input.len()
        )));
    }
    Ok(input.len() / size)
}

fn run(spec: &NetworkSpec, params: &NetworkParams, input: &[f64], pass: Pass, keep: bool) -> Result<Cache> {
    let shapes = spec.shapes()?;
    params.check(spec)?;
    let n = batch_size(spec, input)?;
    let mut x = input.to_vec();
    let mut inputs = Vec::new();
    let mut aux = Vec::new();
    for (i, layer) in spec.layers.iter().enumerate() {
        let s = shapes[i];
        let p = &params.layers[i];
        let (y, a) = match (*layer, pass) {
            (LayerSpec::Conv { out_ch, kernel, stride }, _) => {
                (layers::conv_forward(&x, n, s, &p.weights[0], &p.weights[1], out_ch, kernel, stride), Aux::None)
            }
            (LayerSpec::BatchNorm, Pass::Train { .. }) => layers::bn_forward_train(&x, n, s, &p.weights[0], &p.weights[1]),
            (LayerSpec::BatchNorm, Pass::Infer) => (
                layers::bn_forward_infer(&x, n, s, &p.weights[0], &p.weights[1], &p.buffers[0], &p.buffers[1]),
                Aux::None,
            ),
            (LayerSpec::Relu, _) => (x.iter().map(|v| v.max(0.0)).collect(), Aux::None),
            (LayerSpec::MaxPool { k }, _) => {
                let (y, argmax) = layers::pool_forward(&x, n, s, k);
                (y, Aux::Pool { argmax })
            }
            (LayerSpec::Dense { out }, _) => (layers::dense_forward(&x, n, s.size(), &p.weights[0], &p.weights[1], out), Aux::None),
            (LayerSpec::Dropout { p: rate }, Pass::Train { seed }) if rate > 0.0 => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                let keep_scale = 1.0 / (1.0 - rate);
                let mask: Vec<f64> =
                    (0..x.len()).map(|_| if rng.random::<f64>() >= rate { keep_scale } else { 0.0 }).collect();
                (x.iter().zip(&mask).map(|(a, m)| a * m).collect(), Aux::Mask(mask))
            }
            (LayerSpec::Dropout { .. }, _) => (x.clone(), Aux::None),
            (LayerSpec::Softmax, _) => (layers::softmax(&x, s.channels), Aux::None),
        };
        if keep {
            inputs.push(std::mem::replace(&mut x, y));
            aux.push(a);
        } else {
            x = y;
        }
    }
    if let Some(bad) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite output for example {}", bad / spec.classes())));
    }
    Ok(Cache {
        n,
        training: matches!(pass, Pass::Train { .. }),
        inputs,
        aux,
        probs: x,
    })
}

/// Class probabilities for a batch (`n × classes`, row-major) plus the
/// activations needed by [`backward`].
pub fn forward(spec: &NetworkSpec, params: &NetworkParams, input: &[f64], pass: Pass) -> Result<(Vec<f64>, Cache)> {
    let cache = run(spec, params, input, pass, true)?;
    Ok((cache.probs.clone(), cache))
}

/// Inference-mode probabilities without keeping activations.
pub fn predict(spec: &NetworkSpec, params: &NetworkParams, input: &[f64]) -> Result<Vec<f64>> {
    Ok(run(spec, params, input, Pass::Infer, false)?.probs)
}

/// Mean cross-entropy of `probs` (`n × classes`) against integer labels.
pub fn cross_entropy(probs: &[f64], labels: &[usize]) -> f64 {
    let classes = probs.len() / labels.len().max(1);
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(b, &y)| -probs[b * classes + y].max(f64::MIN_POSITIVE).ln())
        .sum();
    total / labels.len() as f64
}

/// Gradients of the mean cross-entropy for the batch held in `cache`.
pub fn backward(spec: &NetworkSpec, params: &NetworkParams, cache: &Cache, labels: &[usize]) -> Result<Gradients> {
    if !cache.training {
        return Err(Error::input("backward needs the cache of a training-mode forward pass"));
    }
    let shapes = spec.shapes()?;
    let n = cache.n;
    let classes = spec.classes();
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for a batch of {n}", labels.len())));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::input(format!("label {y} out of range for {classes} classes")));
    }

    let mut grads = params.zeros_like();
    // Softmax and cross-entropy together: dL/dlogits = (p − onehot) / n.
    let mut dy: Vec<f64> = cache.probs.iter().map(|p| p / n as f64).collect();
    for (b, &y) in labels.iter().enumerate() {
        dy[b * classes + y] -= 1.0 / n as f64;
    }
    for i in (0..spec.layers.len() - 1).rev() {
        let s = shapes[i];
        let x = &cache.inputs[i];
        let p = &params.layers[i];
        dy = match spec.layers[i] {
            LayerSpec::Conv { out_ch, kernel, stride } => {
                let g = &mut grads.layers[i];
                let (gw, gb) = g.split_at_mut(1);
                layers::conv_backward(x, &dy, n, s, &p.weights[0], out_ch, kernel, stride, &mut gw[0], &mut gb[0])
            }
            LayerSpec::BatchNorm => {
                let Aux::Norm { xhat, inv_std, .. } = &cache.aux[i] else {
                    unreachable!("training cache holds batchnorm statistics")
                };
                let g = &mut grads.layers[i];
                let (gs, gb) = g.split_at_mut(1);
                layers::bn_backward(&dy, n, s, xhat, inv_std, &p.weights[0], &mut gs[0], &mut gb[0])
            }
            LayerSpec::Relu => dy.iter().zip(x).map(|(d, v)| if *v > 0.0 { *d } else { 0.0 }).collect(),
            LayerSpec::MaxPool { .. } => {
                let Aux::Pool { argmax } = &cache.aux[i] else {
                    unreachable!("pool cache holds argmax")
                };
                let mut dx = vec![0.0; x.len()];
                for (d, &j) in dy.iter().zip(argmax) {
                    dx[j] += d;
                }
                dx
            }
            LayerSpec::Dense { out } => {
                let g = &mut grads.layers[i];
                let (gw, gb) = g.split_at_mut(1);
                layers::dense_backward(x, &dy, n, s.size(), &p.weights[0], out, &mut gw[0], &mut gb[0])
            }
            LayerSpec::Dropout { .. } => match &cache.aux[i] {
                Aux::Mask(mask) => dy.iter().zip(mask).map(|(d, m)| d * m).collect(),
                _ => dy,
            },
            LayerSpec::Softmax => unreachable!("softmax is last"),
        };
    }
    Ok(grads)
}

/// Exponential moving update of batchnorm running statistics from a
/// training pass; the variance uses the unbiased batch estimate.
pub fn update_running_stats(spec: &NetworkSpec, params: &mut NetworkParams, cache: &Cache, momentum: f64) -> Result<()> {
    let shapes = spec.shapes()?;
    for (i, layer) in spec.layers.iter().enumerate() {
        if *layer != LayerSpec::BatchNorm {
            continue;
        }
        let (mean, var) = cache
            .batch_stats(i)
            .ok_or_else(|| Error::input("running statistics need a training-mode cache"))?;
        let count = (cache.n * shapes[i].length) as f64;
        let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
        let bufs = &mut params.layers[i].buffers;
        for c in 0..mean.len() {
            bufs[0][c] = (1.0 - momentum) * bufs[0][c] + momentum * mean[c];
            bufs[1][c] = (1.0 - momentum) * bufs[1][c] + momentum * var[c] * unbias;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> NetworkSpec {
        NetworkSpec::new(
            Shape::new(1, 12),
            vec![
                LayerSpec::Conv { out_ch: 2, kernel: 3, stride: 1 },
                LayerSpec::BatchNorm,
                LayerSpec::Relu,
                LayerSpec::MaxPool { k: 2 },
                LayerSpec::Dense { out: 2 },
                LayerSpec::Softmax,
            ],
        )
        .unwrap()
    }

    #[test]
    fn shapes_propagate() {
        let s = tiny().shapes().unwrap();
        assert_eq!(s[1], Shape::new(2, 10));
        assert_eq!(s[4], Shape::new(2, 5));
        assert_eq!(s[6], Shape::features(2));
        assert_eq!(tiny().param_count(), 6 + 2 + 4 + 20 + 2);
    }

    #[test]
    fn invalid_specs_rejected() {
        let no_softmax = NetworkSpec::new(Shape::features(3), vec![LayerSpec::Dense { out: 2 }]);
        assert!(matches!(no_softmax, Err(Error::Shape(_))));
        let short = NetworkSpec::new(
            Shape::new(1, 2),
            vec![LayerSpec::Conv { out_ch: 1, kernel: 5, stride: 1 }, LayerSpec::Dense { out: 2 }, LayerSpec::Softmax],
        );
        assert!(short.is_err());
        let drop = NetworkSpec::new(
            Shape::features(3),
            vec![LayerSpec::Dropout { p: 1.0 }, LayerSpec::Dense { out: 2 }, LayerSpec::Softmax],
        );
        assert!(drop.is_err());
    }

    #[test]
    fn input_shape_mismatch_fails_before_compute() {
        let spec = tiny();
        let params = NetworkParams::init(&spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(matches!(forward(&spec, &params, &[0.0; 13], Pass::Infer), Err(Error::Shape(_))));
        assert!(matches!(forward(&spec, &params, &[], Pass::Infer), Err(Error::Shape(_))));
    }

    #[test]
    fn inference_cache_cannot_backpropagate() {
        let spec = tiny();
        let params = NetworkParams::init(&spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let (_, cache) = forward(&spec, &params, &[0.5; 12], Pass::Infer).unwrap();
        assert!(backward(&spec, &params, &cache, &[0]).is_err());
    }

    #[test]
    fn spec_hash_depends_on_layers() {
        let a = tiny();
        let mut b = tiny();
        b.layers[0] = LayerSpec::Conv { out_ch: 3, kernel: 3, stride: 1 };
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), tiny().hash());
    }
}
