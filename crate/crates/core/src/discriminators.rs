//! The light and temperature discriminators: network layouts, training with
//! class-balanced batches, and match-probability scoring.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DatasetKind};
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, backward, cross_entropy, forward, load_params, predict, save_params, update_running_stats,
    weighted_batch_sampler, Adam, AdamConfig, LayerSpec, Mode, NetworkParams, NetworkSpec, Pass, Shape,
};
use crate::reshape::{NormalizedLightCurve, TempPairVector, CURVE_LEN, TEMP_LEN};
use crate::synth::child_seed;

/// Fixed input scalings: log-lux and °C mapped to roughly unit range.
const LIGHT_CENTER: f64 = 1.5;
const LIGHT_SCALE: f64 = 2.5;
const TEMP_CENTER: f64 = 15.0;
const TEMP_SCALE: f64 = 10.0;
const SCORE_CHUNK: usize = 256;
pub const DROPOUT: f64 = 0.25;

pub fn light_spec_with(input_len: usize, conv: [usize; 3], dense: [usize; 2], dropout: f64) -> Result<NetworkSpec> {
    let mut layers = Vec::new();
    for ch in conv {
        layers.extend([
            LayerSpec::Conv { out_ch: ch, kernel: 5, stride: 2 },
            LayerSpec::BatchNorm,
            LayerSpec::Relu,
            LayerSpec::MaxPool { k: 2 },
        ]);
    }
    layers.extend([
        LayerSpec::Dense { out: dense[0] },
        LayerSpec::Dropout { p: dropout },
        LayerSpec::Relu,
        LayerSpec::Dense { out: dense[1] },
        LayerSpec::Relu,
        LayerSpec::Dense { out: 2 },
        LayerSpec::Softmax,
    ]);
    NetworkSpec::new(Shape::new(1, input_len), layers)
}

pub fn light_spec() -> NetworkSpec {
    light_spec_with(CURVE_LEN, [8, 16, 32], [128, 32], DROPOUT).expect("default light layout is valid")
}

pub fn temp_spec_with(hidden: [usize; 2], dropout: f64) -> Result<NetworkSpec> {
    NetworkSpec::new(
        Shape::features(2 * TEMP_LEN),
        vec![
            LayerSpec::Dense { out: hidden[0] },
            LayerSpec::Dropout { p: dropout },
            LayerSpec::Relu,
            LayerSpec::Dense { out: hidden[1] },
            LayerSpec::Relu,
            LayerSpec::Dense { out: 2 },
            LayerSpec::Softmax,
        ],
    )
}

pub fn temp_spec() -> NetworkSpec {
    temp_spec_with([64, 16], DROPOUT).expect("default temperature layout is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscriminatorKind {
    Light,
    Temp,
}

impl DiscriminatorKind {
    pub fn default_spec(self) -> NetworkSpec {
        match self {
            DiscriminatorKind::Light => light_spec(),
            DiscriminatorKind::Temp => temp_spec(),
        }
    }

    fn scaling(self) -> (f64, f64) {
        match self {
            DiscriminatorKind::Light => (LIGHT_CENTER, LIGHT_SCALE),
            DiscriminatorKind::Temp => (TEMP_CENTER, TEMP_SCALE),
        }
    }

    fn matches(self, ds: DatasetKind) -> bool {
        matches!(
            (self, ds),
            (DiscriminatorKind::Light, DatasetKind::Light) | (DiscriminatorKind::Temp, DatasetKind::Temp)
        )
    }
}

impl std::str::FromStr for DiscriminatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "light" => Ok(DiscriminatorKind::Light),
            "temp" => Ok(DiscriminatorKind::Temp),
            other => Err(Error::input(format!("unknown discriminator {other:?} (light|temp)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub kind: DiscriminatorKind,
    pub spec: NetworkSpec,
    pub params: NetworkParams,
}

impl Discriminator {
    pub fn init(kind: DiscriminatorKind, spec: NetworkSpec, seed: u64) -> Result<Self> {
        let params = NetworkParams::init(&spec, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(Self { kind, spec, params })
    }

    fn scale_into(&self, raw: &[f64], out: &mut Vec<f64>) {
        let (c, s) = self.kind.scaling();
        out.extend(raw.iter().map(|v| (v - c) / s));
    }

    /// Match-class probabilities for raw (unscaled) input rows.
    pub fn score_rows(&self, rows: &[&[f64]]) -> Result<Vec<f64>> {
        if self.params.mode != Mode::Inference {
            return Err(Error::input("discriminator is untrained (parameters not in inference mode)"));
        }
        let dim = self.spec.input.size();
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::Shape(format!("input of length {}, network expects {dim}", r.len())));
        }
        let chunks: Vec<Result<Vec<f64>>> = rows
            .par_chunks(SCORE_CHUNK)
            .map(|chunk| {
                let mut x = Vec::with_capacity(chunk.len() * dim);
                for r in chunk {
                    self.scale_into(r, &mut x);
                }
                let p = predict(&self.spec, &self.params, &x)?;
                Ok(p.chunks(2).map(|c| c[1]).collect())
            })
            .collect();
        let mut out = Vec::with_capacity(rows.len());
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        save_params(&self.params, &self.spec)
    }

    /// Load parameters saved for the default layout of `kind`.
    pub fn from_bytes(kind: DiscriminatorKind, bytes: &[u8]) -> Result<Self> {
        let spec = kind.default_spec();
        let params = load_params(bytes, &spec)?;
        Ok(Self { kind, spec, params })
    }
}

pub fn score_light(model: &Discriminator, curve: &NormalizedLightCurve) -> Result<f64> {
    if model.kind != DiscriminatorKind::Light {
        return Err(Error::input("score_light needs the light discriminator"));
    }
    Ok(model.score_rows(&[&curve.values])?[0])
}

pub fn score_temp(model: &Discriminator, pair: &TempPairVector) -> Result<f64> {
    if model.kind != DiscriminatorKind::Temp {
        return Err(Error::input("score_temp needs the temperature discriminator"));
    }
    Ok(model.score_rows(&[&pair.concat()])?[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Share of sensors held out for validation.
    pub validation_fraction: f64,
    pub bn_momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            lr: 1e-3,
            seed: 42,
            validation_fraction: 0.1,
            bn_momentum: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_balanced_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub kind: DiscriminatorKind,
    pub config: TrainConfig,
    pub param_count: usize,
    pub n_train: usize,
    pub n_validation: usize,
    pub validation_sensors: Vec<String>,
    pub epochs: Vec<EpochStats>,
}

impl TrainReport {
    pub fn final_balanced_accuracy(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.val_balanced_accuracy)
    }
}

/// Training stopped on a non-finite loss or gradient; `last_good` holds the
/// parameters after the last completed epoch, in inference mode.
#[derive(Debug)]
pub struct TrainFailure {
    pub error: Error,
    pub last_good: Discriminator,
    pub report: TrainReport,
}

impl From<Box<TrainFailure>> for Error {
    fn from(f: Box<TrainFailure>) -> Self {
        f.error
    }
}

/// Mean of the per-class recalls over the classes present.
pub fn balanced_accuracy(probs: &[f64], labels: &[u8]) -> f64 {
    let mut hit = [0usize; 2];
    let mut total = [0usize; 2];
    for (p, &y) in probs.iter().zip(labels) {
        let y = y as usize;
        total[y] += 1;
        if usize::from(*p > 0.5) == y {
            hit[y] += 1;
        }
    }
    let recalls: Vec<f64> = (0..2).filter(|&c| total[c] > 0).map(|c| hit[c] as f64 / total[c] as f64).collect();
    recalls.iter().sum::<f64>() / recalls.len().max(1) as f64
}

fn split_validation(ds: &Dataset, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>, Vec<String>) {
    let sensors: BTreeSet<&str> = ds.provenance.iter().map(|p| p.sensor_id()).collect();
    let mut ids: Vec<&str> = sensors.into_iter().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(child_seed(seed, "validation")));
    let n_val = if ids.len() < 2 || fraction <= 0.0 {
        0
    } else {
        ((ids.len() as f64 * fraction).ceil() as usize).clamp(1, ids.len() - 1)
    };
    let held: BTreeSet<&str> = ids[..n_val].iter().copied().collect();
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (i, p) in ds.provenance.iter().enumerate() {
        if held.contains(p.sensor_id()) {
            val.push(i);
        } else {
            train.push(i);
        }
    }
    let mut names: Vec<String> = held.into_iter().map(String::from).collect();
    names.sort();
    (train, val, names)
}

fn gather(model: &Discriminator, ds: &Dataset, idx: &[usize]) -> Vec<f64> {
    let mut x = Vec::with_capacity(idx.len() * ds.dim);
    for &i in idx {
        model.scale_into(ds.input(i), &mut x);
    }
    x
}

fn evaluate(model: &Discriminator, ds: &Dataset, idx: &[usize]) -> Result<(f64, f64)> {
    if idx.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let rows: Vec<&[f64]> = idx.iter().map(|&i| ds.input(i)).collect();
    let p1 = model.score_rows(&rows)?;
    let labels: Vec<u8> = idx.iter().map(|&i| ds.labels[i]).collect();
    let probs: Vec<f64> = p1.iter().flat_map(|&p| [1.0 - p, p]).collect();
    let y: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    Ok((cross_entropy(&probs, &y), balanced_accuracy(&p1, &labels)))
}

/// Train a fresh network of layout `spec` on `ds` with Adam and
/// class-balanced batches. A sensor-level validation slice is held out and
/// scored after every epoch.
pub fn train(
    kind: DiscriminatorKind,
    spec: NetworkSpec,
    ds: &Dataset,
    cfg: &TrainConfig,
) -> std::result::Result<(Discriminator, TrainReport), Box<TrainFailure>> {
    let init = Discriminator::init(kind, spec, child_seed(cfg.seed, "init"));
    let mut model = match init {
        Ok(m) => m,
        Err(error) => {
            let spec = kind.default_spec();
            let params = NetworkParams::init(&spec, &mut ChaCha8Rng::seed_from_u64(0)).expect("default spec");
            return Err(Box::new(TrainFailure {
                error,
                last_good: Discriminator { kind, spec, params },
                report: empty_report(kind, cfg, 0, 0, 0, vec![]),
            }));
        }
    };
    let (train_idx, val_idx, val_sensors) = split_validation(ds, cfg.validation_fraction, cfg.seed);
    let mut report = empty_report(kind, cfg, model.spec.param_count(), train_idx.len(), val_idx.len(), val_sensors);

    let fail = |error: Error, last_good: &Discriminator, report: &TrainReport| {
        let mut last_good = last_good.clone();
        last_good.params.mode = Mode::Inference;
        Box::new(TrainFailure {
            error,
            last_good,
            report: report.clone(),
        })
    };
    if let Err(e) = check_dataset(kind, &model.spec, ds, &train_idx, cfg) {
        return Err(fail(e, &model, &report));
    }

    let labels: Vec<usize> = train_idx.iter().map(|&i| ds.labels[i] as usize).collect();
    let mut adam = Adam::for_params(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        &model.params,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(cfg.seed, "batches"));
    let mut last_good = model.clone();

    for epoch in 0..cfg.epochs {
        model.params.mode = Mode::Training;
        let batches = match weighted_batch_sampler(&labels, cfg.batch_size, &mut rng) {
            Ok(b) => b,
            Err(e) => return Err(fail(e, &last_good, &report)),
        };
        let mut loss_sum = 0.0;
        for batch in &batches {
            let idx: Vec<usize> = batch.iter().map(|&j| train_idx[j]).collect();
            let y: Vec<usize> = batch.iter().map(|&j| labels[j]).collect();
            let x = gather(&model, ds, &idx);
            let mut step = || -> Result<f64> {
                let (probs, cache) = forward(&model.spec, &model.params, &x, Pass::Train { seed: rng.random() })?;
                let loss = cross_entropy(&probs, &y);
                if !loss.is_finite() {
                    return Err(Error::Numerical(format!("non-finite training loss in epoch {epoch}")));
                }
                let grads = backward(&model.spec, &model.params, &cache, &y)?;
                adam_step(&model.spec, &mut model.params, &grads, &mut adam)?;
                update_running_stats(&model.spec, &mut model.params, &cache, cfg.bn_momentum)?;
                Ok(loss)
            };
            match step() {
                Ok(l) => loss_sum += l,
                Err(e) => return Err(fail(e, &last_good, &report)),
            }
        }
        model.params.mode = Mode::Inference;
        let (val_loss, val_bacc) = match evaluate(&model, ds, &val_idx) {
            Ok(v) => v,
            Err(e) => return Err(fail(e, &last_good, &report)),
        };
        let stats = EpochStats {
            epoch: epoch + 1,
            train_loss: loss_sum / batches.len() as f64,
            val_loss,
            val_balanced_accuracy: val_bacc,
        };
        log::info!(
            "{kind:?} epoch {}: loss {:.4}, validation loss {:.4}, balanced accuracy {:.4}",
            stats.epoch,
            stats.train_loss,
            stats.val_loss,
            stats.val_balanced_accuracy
        );
        report.epochs.push(stats);
        last_good = model.clone();
    }
    model.params.mode = Mode::Inference;
    Ok((model, report))
}

fn empty_report(
    kind: DiscriminatorKind,
    cfg: &TrainConfig,
    param_count: usize,
    n_train: usize,
    n_validation: usize,
    validation_sensors: Vec<String>,
) -> TrainReport {
    TrainReport {
        kind,
        config: *cfg,
        param_count,
        n_train,
        n_validation,
        validation_sensors,
        epochs: Vec::new(),
    }
}

fn check_dataset(kind: DiscriminatorKind, spec: &NetworkSpec, ds: &Dataset, train_idx: &[usize], cfg: &TrainConfig) -> Result<()> {
    if !kind.matches(ds.kind) {
        return Err(Error::input(format!("{:?} dataset cannot train the {kind:?} discriminator", ds.kind)));
    }
    if ds.dim != spec.input.size() {
        return Err(Error::Shape(format!("dataset dim {} vs network input {}", ds.dim, spec.input.size())));
    }
    if cfg.epochs == 0 || cfg.batch_size < 2 || !(cfg.lr > 0.0) {
        return Err(Error::input("epochs, batch size and learning rate must be positive (batch ≥ 2)"));
    }
    let ones = train_idx.iter().filter(|&&i| ds.labels[i] == 1).count();
    if ones == 0 || ones == train_idx.len() {
        return Err(Error::input("training data must contain both classes"));
    }
    Ok(())
}
