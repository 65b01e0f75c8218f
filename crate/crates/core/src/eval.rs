//! Per-interval latitude/longitude errors of the baseline, light-only and
//! fused estimators over held-out sensor-days, plus heatmap export.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::astro::{GeoCoord, Hemisphere};
use crate::dataset::{preprocess_sensors, SensorDay};
use crate::discriminators::Discriminator;
use crate::error::{Error, Result};
use crate::localization::{
    baseline_localize, estimate_day, evaluate_light_grid, evaluate_temp_grid, fuse, grid_to_pgm, interpolate_grid,
    write_grid_csv, DayEstimate, GridSpec, LikelihoodGrid,
};
use crate::reshape::MinuteLogLight;
use crate::sensor::SensorLog;
use crate::util::atomic_write;
use crate::weather::WeatherStore;

pub const EQUINOX_WINDOW_DAYS: i64 = 7;

pub fn september_equinox(year: i32) -> NaiveDate {
    NaiveDate::from_ymd_opt(year, 9, 22).expect("valid date")
}

pub fn in_equinox_window(date: NaiveDate) -> bool {
    (date - september_equinox(date.year())).num_days().abs() <= EQUINOX_WINDOW_DAYS
}

/// Inclusive date range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub label: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl Interval {
    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }
}

/// Days 1–15 and 16–end of each month, clipped to [start, end].
pub fn half_month_intervals(start: NaiveDate, end: NaiveDate) -> Vec<Interval> {
    let mut out = Vec::new();
    let mut lo = start;
    while lo <= end {
        let month_end = lo
            .with_day(1)
            .and_then(|d| d.checked_add_months(chrono::Months::new(1)))
            .and_then(|d| d.pred_opt())
            .expect("valid month");
        let hi = if lo.day() <= 15 { lo.with_day(15).expect("valid") } else { month_end }.min(end);
        out.push(Interval {
            label: format!("{}..{}", lo.format("%m-%d"), hi.format("%m-%d")),
            start: lo,
            end: hi,
        });
        lo = hi.succ_opt().expect("valid date");
    }
    out
}

/// Sep 1 to Dec 19 of `year`.
pub fn default_intervals(year: i32) -> Vec<Interval> {
    half_month_intervals(
        NaiveDate::from_ymd_opt(year, 9, 1).expect("valid"),
        NaiveDate::from_ymd_opt(year, 12, 19).expect("valid"),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Baseline,
    LightOnly,
    Fused,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Baseline, Method::LightOnly, Method::Fused];

    pub fn name(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::LightOnly => "light_only",
            Method::Fused => "fused",
        }
    }
}

pub struct TrainedModels<'a> {
    pub light: &'a Discriminator,
    pub temp: &'a Discriminator,
    /// Calibrated log10-lux threshold of the baseline.
    pub threshold: f64,
}

pub enum Estimators<'a> {
    Trained(TrainedModels<'a>),
    /// Returns the truth for every method; a harness self-test.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayRecord {
    pub sensor_id: String,
    pub date: NaiveDate,
    pub method: Method,
    pub est_lat: f64,
    pub est_lon: f64,
    pub lat_err: f64,
    pub lon_err: f64,
    pub ill_conditioned: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedDay {
    pub sensor_id: String,
    pub date: NaiveDate,
    pub method: Method,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub interval: String,
    pub method: Method,
    pub lat_mae: f64,
    pub lon_mae: f64,
    pub n_days: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub grid: GridSpec,
    pub intervals: Vec<Interval>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            intervals: default_intervals(2018),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub config: EvalConfig,
    pub baseline_threshold: Option<f64>,
    pub rows: Vec<EvalRow>,
    pub records: Vec<DayRecord>,
    pub dropped: Vec<DroppedDay>,
    /// Evaluated days whose date falls in no interval.
    pub unbucketed: usize,
}

fn lon_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    if d > 180.0 { d - 360.0 } else { d }
}

fn record(day: &SensorDay, method: Method, coord: GeoCoord, ill_conditioned: bool) -> DayRecord {
    DayRecord {
        sensor_id: day.sensor_id.clone(),
        date: day.date,
        method,
        est_lat: coord.lat,
        est_lon: coord.lon,
        lat_err: (coord.lat - day.truth.lat).abs(),
        lon_err: lon_diff(coord.lon, day.truth.lon).abs(),
        ill_conditioned,
    }
}

/// Fine light, temperature and fused grids of one sensor-day.
#[derive(Debug)]
pub struct DayGrids {
    pub light: Result<LikelihoodGrid>,
    pub temp: Result<LikelihoodGrid>,
    pub fused: Result<LikelihoodGrid>,
}

impl DayGrids {
    pub fn light_estimate(&self) -> Result<DayEstimate> {
        estimate_day(self.light.as_ref().map_err(clone_err)?)
    }

    pub fn fused_estimate(&self) -> Result<DayEstimate> {
        estimate_day(self.fused.as_ref().map_err(clone_err)?)
    }
}

fn clone_err(e: &Error) -> Error {
    match e {
        Error::InvalidInput(m) => Error::InvalidInput(m.clone()),
        Error::Coverage(m) => Error::Coverage(m.clone()),
        Error::Degenerate(m) => Error::Degenerate(m.clone()),
        Error::Numerical(m) => Error::Numerical(m.clone()),
        other => Error::Coverage(other.to_string()),
    }
}

pub fn day_grids(
    light_model: &Discriminator,
    temp_model: &Discriminator,
    light: &MinuteLogLight,
    sensor: &SensorLog,
    store: &WeatherStore,
    date: NaiveDate,
    reference: GeoCoord,
    grid: &GridSpec,
) -> DayGrids {
    let light_grid = evaluate_light_grid(light_model, light, date, reference, grid).and_then(|g| interpolate_grid(&g, grid.fine_step));
    let temp_grid =
        evaluate_temp_grid(temp_model, sensor, store, date, reference, grid).and_then(|g| interpolate_grid(&g, grid.fine_step));
    let fused = match (&light_grid, &temp_grid) {
        (Ok(l), Ok(t)) => fuse(l, t),
        (Err(e), _) | (_, Err(e)) => Err(clone_err(e)),
    };
    DayGrids {
        light: light_grid,
        temp: temp_grid,
        fused,
    }
}

type DayOutcome = Vec<std::result::Result<DayRecord, DroppedDay>>;

fn evaluate_day(
    day: &SensorDay,
    models: &TrainedModels,
    lights: &BTreeMap<String, MinuteLogLight>,
    sensor: &SensorLog,
    store: &WeatherStore,
    grid: &GridSpec,
) -> DayOutcome {
    let light = &lights[&day.sensor_id];
    let drop = |method, e: Error| DroppedDay {
        sensor_id: day.sensor_id.clone(),
        date: day.date,
        method,
        reason: e.to_string(),
    };
    let baseline = baseline_localize(light, day.date, models.threshold, Hemisphere::of(day.truth.lat))
        .map(|b| record(day, Method::Baseline, b.coord, b.ill_conditioned))
        .map_err(|e| drop(Method::Baseline, e));
    let grids = day_grids(models.light, models.temp, light, sensor, store, day.date, day.truth, grid);
    let light_only = grids
        .light_estimate()
        .map(|e| record(day, Method::LightOnly, e.coord, e.ill_conditioned))
        .map_err(|e| drop(Method::LightOnly, e));
    let fused = grids
        .fused_estimate()
        .map(|e| record(day, Method::Fused, e.coord, e.ill_conditioned))
        .map_err(|e| drop(Method::Fused, e));
    vec![baseline, light_only, fused]
}

/// Evaluate every method on every test day. Grids are centred on the truth.
pub fn run_eval(
    logs: &[SensorLog],
    store: &WeatherStore,
    days: &[SensorDay],
    estimators: &Estimators,
    config: &EvalConfig,
    seed: u64,
) -> Result<EvalReport> {
    if days.is_empty() {
        return Err(Error::input("no test days to evaluate"));
    }
    config.grid.axis()?;
    let outcomes: Vec<DayOutcome> = match estimators {
        Estimators::Oracle => days
            .iter()
            .map(|d| Method::ALL.iter().map(|&m| Ok(record(d, m, d.truth, false))).collect())
            .collect(),
        Estimators::Trained(models) => {
            let lights = preprocess_sensors(logs, days)?;
            let by_id: BTreeMap<&str, &SensorLog> = logs.iter().map(|l| (l.id.as_str(), l)).collect();
            days.par_iter()
                .map(|d| evaluate_day(d, models, &lights, by_id[d.sensor_id.as_str()], store, &config.grid))
                .collect()
        }
    };
    let mut records = Vec::new();
    let mut dropped = Vec::new();
    for o in outcomes.into_iter().flatten() {
        match o {
            Ok(r) => records.push(r),
            Err(d) => {
                log::warn!("{} {} {}: {}", d.sensor_id, d.date, d.method.name(), d.reason);
                dropped.push(d);
            }
        }
    }
    let rows = aggregate(&records, &config.intervals);
    let unbucketed = records
        .iter()
        .filter(|r| r.method == Method::Fused && !config.intervals.iter().any(|i| i.contains(r.date)))
        .count();
    Ok(EvalReport {
        seed,
        config: config.clone(),
        baseline_threshold: match estimators {
            Estimators::Trained(m) => Some(m.threshold),
            Estimators::Oracle => None,
        },
        rows,
        records,
        dropped,
        unbucketed,
    })
}

/// Mean absolute errors per (interval, method); empty cells are omitted.
pub fn aggregate(records: &[DayRecord], intervals: &[Interval]) -> Vec<EvalRow> {
    let mut rows = Vec::new();
    for interval in intervals {
        for method in Method::ALL {
            let sel: Vec<&DayRecord> = records
                .iter()
                .filter(|r| r.method == method && interval.contains(r.date))
                .collect();
            if sel.is_empty() {
                continue;
            }
            let n = sel.len() as f64;
            rows.push(EvalRow {
                interval: interval.label.clone(),
                method,
                lat_mae: sel.iter().map(|r| r.lat_err).sum::<f64>() / n,
                lon_mae: sel.iter().map(|r| r.lon_err).sum::<f64>() / n,
                n_days: sel.len(),
            });
        }
    }
    rows
}

/// (lat MAE, lon MAE, n) of one method over records passing `keep`.
pub fn mae_where(records: &[DayRecord], method: Method, keep: impl Fn(&DayRecord) -> bool) -> (f64, f64, usize) {
    let sel: Vec<&DayRecord> = records.iter().filter(|r| r.method == method && keep(r)).collect();
    let n = sel.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, 0);
    }
    (
        sel.iter().map(|r| r.lat_err).sum::<f64>() / n as f64,
        sel.iter().map(|r| r.lon_err).sum::<f64>() / n as f64,
        n,
    )
}

impl EvalReport {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["interval", "method", "lat_mae_deg", "lon_mae_deg", "n_days"])?;
        for r in &self.rows {
            w.write_record([
                r.interval.clone(),
                r.method.name().to_string(),
                format!("{:.6}", r.lat_mae),
                format!("{:.6}", r.lon_mae),
                r.n_days.to_string(),
            ])?;
        }
        w.into_inner().map_err(|e| Error::io("<report csv>", e.into_error()))
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec_pretty(self)?)
    }

    /// Writes `eval_report.csv` and `eval_report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        atomic_write(&dir.join("eval_report.csv"), &self.to_csv()?)?;
        atomic_write(&dir.join("eval_report.json"), &self.to_json()?)
    }
}

/// Light, temperature and fused rasters of one day as PGM and CSV, named
/// `{prefix}_{light,temp,fused}.{pgm,csv}`.
pub fn export_heatmaps(grids: &DayGrids, dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (name, g) in [("light", &grids.light), ("temp", &grids.temp), ("fused", &grids.fused)] {
        let g = g.as_ref().map_err(clone_err)?;
        let pgm = dir.join(format!("{prefix}_{name}.pgm"));
        atomic_write(&pgm, &grid_to_pgm(g))?;
        let csv_path = dir.join(format!("{prefix}_{name}.csv"));
        let mut buf = Vec::new();
        write_grid_csv(g, &mut buf)?;
        atomic_write(&csv_path, &buf)?;
        written.extend([pgm, csv_path]);
    }
    Ok(written)
}
