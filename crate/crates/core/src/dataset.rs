//! Labeled training sets for both discriminators, the sensor-level
//! train/test split, and the binary dataset file with its JSON sidecar.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::astro::{night_window, GeoCoord, NightWindow};
use crate::error::{Error, Result};
use crate::reshape::{
    make_temp_pair_with_station, preprocess_light, reshape_window, MinuteLogLight, NormalizedLightCurve, TempPairVector,
};
use crate::sensor::SensorLog;
use crate::synth::{rng_for, ManifestRow};
use crate::util::atomic_write;
use crate::weather::{great_circle_deg, WeatherStore};

pub const DATASET_MAGIC: &[u8; 16] = b"LUMITRACK-DS\0\0\0\x01";

/// One logged night of one sensor, with its true position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorDay {
    pub sensor_id: String,
    pub date: NaiveDate,
    pub truth: GeoCoord,
}

impl From<&ManifestRow> for SensorDay {
    fn from(r: &ManifestRow) -> Self {
        Self {
            sensor_id: r.sensor_id.clone(),
            date: r.date,
            truth: GeoCoord {
                lat: r.true_lat,
                lon: r.true_lon,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<SensorDay>,
    pub test: Vec<SensorDay>,
}

impl Split {
    pub fn train_sensors(&self) -> BTreeSet<&str> {
        self.train.iter().map(|d| d.sensor_id.as_str()).collect()
    }

    pub fn test_sensors(&self) -> BTreeSet<&str> {
        self.test.iter().map(|d| d.sensor_id.as_str()).collect()
    }
}

/// Assign whole sensors to the training side, in seeded random order, until
/// the training share of sensor-days is as close as possible to `ratio`.
pub fn split_train_test(manifest: &[ManifestRow], ratio: f64, seed: u64) -> Result<Split> {
    if manifest.is_empty() {
        return Err(Error::input("cannot split an empty manifest"));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::input(format!("split ratio {ratio} must lie strictly between 0 and 1")));
    }
    let mut per_sensor: BTreeMap<&str, Vec<SensorDay>> = BTreeMap::new();
    for row in manifest {
        per_sensor.entry(&row.sensor_id).or_default().push(row.into());
    }
    if per_sensor.len() < 2 {
        return Err(Error::input("need at least two sensors to split"));
    }
    let mut ids: Vec<&str> = per_sensor.keys().copied().collect();
    ids.shuffle(&mut rng_for(seed, "split"));

    let target = ratio * manifest.len() as f64;
    let mut cum = 0usize;
    let mut best = (f64::INFINITY, 1);
    for (k, id) in ids.iter().enumerate().take(ids.len() - 1) {
        cum += per_sensor[id].len();
        let miss = (cum as f64 - target).abs();
        if miss < best.0 {
            best = (miss, k + 1);
        }
    }
    let train_ids: BTreeSet<&str> = ids[..best.1].iter().copied().collect();
    let mut split = Split {
        train: Vec::new(),
        test: Vec::new(),
    };
    for (id, days) in per_sensor {
        if train_ids.contains(id) {
            split.train.extend(days);
        } else {
            split.test.extend(days);
        }
    }
    Ok(split)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedDay {
    pub sensor_id: String,
    pub date: NaiveDate,
    pub reason: String,
}

fn skipped(day: &SensorDay, e: &Error) -> SkippedDay {
    log::warn!("skipping {} {}: {e}", day.sensor_id, day.date);
    SkippedDay {
        sensor_id: day.sensor_id.clone(),
        date: day.date,
        reason: e.to_string(),
    }
}

fn logs_by_id(logs: &[SensorLog]) -> BTreeMap<&str, &SensorLog> {
    logs.iter().map(|l| (l.id.as_str(), l)).collect()
}

/// Minute-resolution light of every sensor named in `days`.
pub fn preprocess_sensors(logs: &[SensorLog], days: &[SensorDay]) -> Result<BTreeMap<String, MinuteLogLight>> {
    let by_id = logs_by_id(logs);
    let ids: BTreeSet<&str> = days.iter().map(|d| d.sensor_id.as_str()).collect();
    ids.into_par_iter()
        .map(|id| {
            let log = by_id.get(id).ok_or_else(|| Error::input(format!("no log for sensor {id}")))?;
            Ok((id.to_string(), preprocess_light(&log.light)?))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightSetParams {
    pub k_unmatched: usize,
    /// Offset magnitude range in minutes.
    pub min_offset_min: f64,
    pub max_offset_min: f64,
    pub seed: u64,
}

impl Default for LightSetParams {
    fn default() -> Self {
        Self {
            k_unmatched: 24,
            min_offset_min: 2.0,
            max_offset_min: 120.0,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LightExample {
    pub curve: NormalizedLightCurve,
    pub label: u8,
    pub dcenter_min: f64,
    pub dlength_min: f64,
}

fn signed_offset(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    let mag = rng.random_range(lo..=hi);
    if rng.random::<bool>() {
        mag
    } else {
        -mag
    }
}

/// Per day: the curve reshaped at the true night, then `k_unmatched` curves
/// reshaped after shifting the night centre and length by independent
/// signed offsets. Days failing coverage are skipped whole.
pub fn build_light_training_set(
    logs: &[SensorLog],
    days: &[SensorDay],
    params: &LightSetParams,
) -> Result<(Vec<LightExample>, Vec<SkippedDay>)> {
    if !(0.0 < params.min_offset_min && params.min_offset_min <= params.max_offset_min) {
        return Err(Error::input("light offset range must be positive and ordered"));
    }
    let light = preprocess_sensors(logs, days)?;
    let per_day: Vec<std::result::Result<Vec<LightExample>, SkippedDay>> = days
        .par_iter()
        .map(|day| {
            let mut rng = rng_for(params.seed, &format!("light:{}:{}", day.sensor_id, day.date));
            light_day(&light[&day.sensor_id], day, params, &mut rng).map_err(|e| skipped(day, &e))
        })
        .collect();
    Ok(flatten(per_day))
}

fn flatten<T>(per_day: Vec<std::result::Result<Vec<T>, SkippedDay>>) -> (Vec<T>, Vec<SkippedDay>) {
    let mut out = Vec::new();
    let mut skips = Vec::new();
    for r in per_day {
        match r {
            Ok(v) => out.extend(v),
            Err(s) => skips.push(s),
        }
    }
    (out, skips)
}

fn light_day(light: &MinuteLogLight, day: &SensorDay, params: &LightSetParams, rng: &mut impl Rng) -> Result<Vec<LightExample>> {
    let truth = night_window(day.truth, day.date)?;
    let example = |window: &NightWindow, label, dc, dl| -> Result<LightExample> {
        Ok(LightExample {
            curve: NormalizedLightCurve {
                values: reshape_window(light, window)?,
                sensor_id: day.sensor_id.clone(),
                date: day.date,
                candidate: day.truth,
            },
            label,
            dcenter_min: dc,
            dlength_min: dl,
        })
    };
    let mut out = Vec::with_capacity(1 + params.k_unmatched);
    out.push(example(&truth, 1, 0.0, 0.0)?);
    for _ in 0..params.k_unmatched {
        let dc = signed_offset(rng, params.min_offset_min, params.max_offset_min);
        let dl = signed_offset(rng, params.min_offset_min, params.max_offset_min);
        let w = NightWindow {
            center: truth.center + dc * 60.0,
            length: truth.length + dl * 60.0,
        };
        out.push(example(&w, 0, dc, dl)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TempSetParams {
    pub k_unmatched: usize,
    /// Candidates are uniform in truth ± this many degrees on both axes.
    pub offset_box_deg: f64,
    /// Largest great-circle distance from a candidate to its station.
    pub vicinity_deg: f64,
    pub seed: u64,
}

impl Default for TempSetParams {
    fn default() -> Self {
        Self {
            k_unmatched: 15,
            offset_box_deg: 20.0,
            vicinity_deg: 1.5,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TempExample {
    pub pair: TempPairVector,
    pub label: u8,
    pub offset_lat: f64,
    pub offset_lon: f64,
}

/// Draws that land on the truth's own nearest station are redrawn; bound on
/// consecutive redraws per candidate.
const MAX_REDRAWS: usize = 1000;

/// Per day: the sensor paired with the station nearest the truth, then up to
/// `k_unmatched` random candidates paired with their own nearest station.
/// Candidates without a station in the vicinity are dropped, not replaced.
pub fn build_temp_training_set(
    logs: &[SensorLog],
    store: &WeatherStore,
    days: &[SensorDay],
    params: &TempSetParams,
) -> Result<(Vec<TempExample>, Vec<SkippedDay>)> {
    let by_id = logs_by_id(logs);
    let per_day: Vec<std::result::Result<Vec<TempExample>, SkippedDay>> = days
        .par_iter()
        .map(|day| {
            let log = by_id
                .get(day.sensor_id.as_str())
                .ok_or_else(|| Error::input(format!("no log for sensor {}", day.sensor_id)))
                .map_err(|e| skipped(day, &e))?;
            let mut rng = rng_for(params.seed, &format!("temp:{}:{}", day.sensor_id, day.date));
            temp_day(log, store, day, params, &mut rng).map_err(|e| skipped(day, &e))
        })
        .collect();
    Ok(flatten(per_day))
}

fn temp_day(
    log: &SensorLog,
    store: &WeatherStore,
    day: &SensorDay,
    params: &TempSetParams,
    rng: &mut impl Rng,
) -> Result<Vec<TempExample>> {
    let matched = store.nearest_station(day.truth)?.station_id.clone();
    let window = night_window(day.truth, day.date)?;
    let mut out = vec![TempExample {
        pair: make_temp_pair_with_station(log, store, &matched, day.truth, day.date, &window)?,
        label: 1,
        offset_lat: 0.0,
        offset_lon: 0.0,
    }];
    let b = params.offset_box_deg;
    'candidates: for _ in 0..params.k_unmatched {
        for _ in 0..MAX_REDRAWS {
            let (dlat, dlon) = (rng.random_range(-b..=b), rng.random_range(-b..=b));
            let candidate = day.truth.offset(dlat, dlon);
            let station = store.nearest_station(candidate)?;
            if station.station_id == matched {
                continue;
            }
            if great_circle_deg(candidate, station.location) > params.vicinity_deg {
                continue 'candidates;
            }
            let pair = night_window(candidate, day.date).map_err(Error::from).and_then(|w| {
                make_temp_pair_with_station(log, store, &station.station_id, candidate, day.date, &w)
            });
            match pair {
                Ok(pair) => out.push(TempExample {
                    pair,
                    label: 0,
                    offset_lat: dlat,
                    offset_lon: dlon,
                }),
                Err(e) if e.kind() == crate::ErrorKind::Coverage => {}
                Err(e) => return Err(e),
            }
            continue 'candidates;
        }
        return Err(Error::Coverage("every candidate draw maps to the matched station".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Light,
    Temp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Provenance {
    Light {
        sensor_id: String,
        date: NaiveDate,
        dcenter_min: f64,
        dlength_min: f64,
    },
    Temp {
        sensor_id: String,
        date: NaiveDate,
        station_id: String,
        offset_lat: f64,
        offset_lon: f64,
    },
}

impl Provenance {
    pub fn sensor_id(&self) -> &str {
        match self {
            Provenance::Light { sensor_id, .. } | Provenance::Temp { sensor_id, .. } => sensor_id,
        }
    }
}

/// Flat example matrix (`count × dim`) with labels and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub dim: usize,
    pub inputs: Vec<f64>,
    pub labels: Vec<u8>,
    pub provenance: Vec<Provenance>,
    /// Free-form build parameters echoed into the sidecar.
    pub meta: serde_json::Value,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let ones = self.labels.iter().filter(|&&l| l == 1).count();
        [self.labels.len() - ones, ones]
    }

    pub fn from_light(examples: Vec<LightExample>, meta: serde_json::Value) -> Result<Self> {
        let dim = examples.first().map_or(crate::reshape::CURVE_LEN, |e| e.curve.values.len());
        let mut ds = Self::empty(DatasetKind::Light, dim, examples.len(), meta);
        for e in examples {
            ds.push(&e.curve.values, e.label)?;
            ds.provenance.push(Provenance::Light {
                sensor_id: e.curve.sensor_id,
                date: e.curve.date,
                dcenter_min: e.dcenter_min,
                dlength_min: e.dlength_min,
            });
        }
        Ok(ds)
    }

    pub fn from_temp(examples: Vec<TempExample>, meta: serde_json::Value) -> Result<Self> {
        let dim = 2 * crate::reshape::TEMP_LEN;
        let mut ds = Self::empty(DatasetKind::Temp, dim, examples.len(), meta);
        for e in examples {
            ds.push(&e.pair.concat(), e.label)?;
            ds.provenance.push(Provenance::Temp {
                sensor_id: e.pair.sensor_id,
                date: e.pair.date,
                station_id: e.pair.station_id,
                offset_lat: e.offset_lat,
                offset_lon: e.offset_lon,
            });
        }
        Ok(ds)
    }

    fn empty(kind: DatasetKind, dim: usize, capacity: usize, meta: serde_json::Value) -> Self {
        Self {
            kind,
            dim,
            inputs: Vec::with_capacity(capacity * dim),
            labels: Vec::with_capacity(capacity),
            provenance: Vec::with_capacity(capacity),
            meta,
        }
    }

    fn push(&mut self, x: &[f64], label: u8) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Shape(format!("example of length {} in a dataset of dim {}", x.len(), self.dim)));
        }
        self.inputs.extend_from_slice(x);
        self.labels.push(label);
        Ok(())
    }

    /// Binary record file: magic, u64 count, u64 dim, `count` label bytes,
    /// then `count × dim` little-endian f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.labels.len() + 8 * self.inputs.len());
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        out.extend_from_slice(&self.labels);
        for v in &self.inputs {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn sidecar_json(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec_pretty(&Sidecar {
            kind: self.kind,
            count: self.len(),
            dim: self.dim,
            meta: self.meta.clone(),
            provenance: self.provenance.clone(),
        })?)
    }

    pub fn from_parts(bytes: &[u8], sidecar: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Format(format!("dataset file: {m}"));
        if bytes.len() < 32 || &bytes[..16] != DATASET_MAGIC {
            return Err(bad("missing LUMITRACK-DS header".into()));
        }
        let count = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes")) as usize;
        let dim = u64::from_le_bytes(bytes[24..32].try_into().expect("8 bytes")) as usize;
        let expected = count
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(8))
            .and_then(|n| n.checked_add(32 + count))
            .ok_or_else(|| bad("size overflow".into()))?;
        if bytes.len() != expected {
            return Err(bad(format!("{} bytes, header implies {expected}", bytes.len())));
        }
        let labels = bytes[32..32 + count].to_vec();
        if let Some(l) = labels.iter().find(|&&l| l > 1) {
            return Err(bad(format!("label {l} is not binary")));
        }
        let inputs = bytes[32 + count..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let side: Sidecar = serde_json::from_slice(sidecar)?;
        if side.count != count || side.dim != dim || side.provenance.len() != count {
            return Err(bad("sidecar disagrees with the record file".into()));
        }
        Ok(Self {
            kind: side.kind,
            dim,
            inputs,
            labels,
            provenance: side.provenance,
            meta: side.meta,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    kind: DatasetKind,
    count: usize,
    dim: usize,
    meta: serde_json::Value,
    provenance: Vec<Provenance>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    atomic_write(path, &ds.to_bytes())?;
    atomic_write(&sidecar_path(path), &ds.sidecar_json()?)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let side_path = sidecar_path(path);
    let side = fs::read(&side_path).map_err(|e| Error::io(&side_path, e))?;
    Dataset::from_parts(&bytes, &side)
}
